//! The image prior: noise schedule, denoiser backends, guidance embeddings,
//! and textual inversion.

mod denoiser;
mod guidance;
mod inversion;
mod residual;
mod schedule;
mod toy;

pub use denoiser::{
    analytic_gaussian_eps, check_denoiser_contract, AnalyticGaussianPrior, Denoiser, FixedDenoiser, IdentityCodec,
    LatentCodec,
};
pub use guidance::{concat_guidance, EmbeddingTable, GuidanceEmbedding, EMBEDDING_MAGIC};
pub use inversion::{textual_inversion, Inversion, InversionConfig};
pub use residual::{diffusion_residual, diffusion_residual_graph};
pub use schedule::{q_sample, q_sample_alpha, NoiseSchedule};
pub use toy::{
    mean_residual, train_toy_denoiser, LabeledImages, ToyConfig, ToyDenoiser, ToyTraining, ValidationDraws, TOY_MAGIC,
};

pub(crate) use residual::check_prediction;

#[cfg(test)]
mod tests;
