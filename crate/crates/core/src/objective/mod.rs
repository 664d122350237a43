//! Losses of one synthesis step: input-view reconstruction, Pearson depth
//! correlation, and the diffusion loss at a sampled novel view.

mod depth;
mod novel;
mod recon;
mod report;

pub use depth::{depth_corr_loss, depth_corr_loss_graph, pearson, DEPTH_EPS};
pub use novel::{distilled_direction, novel_view_loss_graph, GradientMode, NovelView, TimeWeighting};
pub use recon::{recon_loss, recon_loss_graph};
pub use report::{combine, LossReport, LossTerms, LossWeights};
