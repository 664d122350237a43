use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::objective::{GradientMode, LossWeights, TimeWeighting};
use crate::prior::InversionConfig;
use crate::render::RenderConfig;

/// Everything that controls one synthesis run. Loaded from TOML; every key
/// is optional and falls back to the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub iterations: usize,
    pub optim: OptimConfig,
    pub field: FieldConfig,
    /// Quadrature for both the input-view rays and the novel view.
    pub render: RenderConfig,
    pub recon: ReconConfig,
    pub novel: NovelConfig,
    pub weights: LossWeights,
    pub loss: LossConfig,
    pub prior: PriorConfig,
    /// Used when the run inverts its own guidance embedding.
    pub inversion: InversionConfig,
    pub checkpoint: CheckpointConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 5000,
            optim: OptimConfig::default(),
            field: FieldConfig::default(),
            render: RenderConfig::default(),
            recon: ReconConfig::default(),
            novel: NovelConfig::default(),
            weights: LossWeights::default(),
            loss: LossConfig::default(),
            prior: PriorConfig::default(),
            inversion: InversionConfig::default(),
            checkpoint: CheckpointConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    /// Learning rate reached at the last iteration (cosine decay).
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            lr_final: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// Input-view rays per step, drawn with replacement.
    pub rays: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { rays: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NovelConfig {
    /// Side of the square novel-view render.
    pub render_size: usize,
    /// Side of the image handed to the prior.
    pub prior_size: usize,
    pub radius: [f64; 2],
    /// Degrees above the xz-plane.
    pub elevation: [f64; 2],
    pub vfov: f64,
}

impl Default for NovelConfig {
    fn default() -> Self {
        Self {
            render_size: 128,
            prior_size: 32,
            radius: [2.2, 2.8],
            elevation: [-10.0, 40.0],
            vfov: 50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: GradientMode,
    pub weighting: TimeWeighting,
    /// Timestep fractions the diffusion loss samples from.
    pub t_range: [f64; 2],
    /// Also report the gradient norm of each term (one extra backward each).
    pub term_grad_norms: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: GradientMode::Distilled,
            weighting: TimeWeighting::OneMinusAlphaBar,
            t_range: [0.02, 0.98],
            term_grad_norms: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorBackend {
    #[default]
    Analytic,
    Toy,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub backend: PriorBackend,
    /// Toy denoiser file.
    pub model: Option<PathBuf>,
    /// Spread of the analytic Gaussian prior around the input image.
    pub sigma0: f64,
    /// Consecutive prior failures tolerated before aborting.
    pub max_skips: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            backend: PriorBackend::Analytic,
            model: None,
            sigma0: 0.1,
            max_skips: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointConfig {
    /// Write a checkpoint every this many steps; 0 disables.
    pub every: usize,
    pub dir: Option<PathBuf>,
}

fn check_interval(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::invalid(format!("{name} interval {r:?} is empty or not finite")));
    }
    Ok(())
}

impl SynthesisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Panics on a seed above `i64::MAX`, which `validate` rejects.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 || self.inversion.seed > i64::MAX as u64 {
            return Err(Error::invalid("seeds must fit in a signed 64-bit integer"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr_final >= 0.0 && o.lr.is_finite() && o.lr_final.is_finite()) {
            return Err(Error::invalid("learning rates must be finite, lr > 0, lr_final >= 0"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::invalid("adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.field.validate()?;
        self.render.validate()?;
        if self.recon.rays < 2 {
            return Err(Error::invalid("need at least 2 reconstruction rays per step"));
        }
        let n = &self.novel;
        if n.render_size == 0 || n.prior_size == 0 {
            return Err(Error::invalid("novel-view sizes must be positive"));
        }
        check_interval("radius", n.radius)?;
        check_interval("elevation", n.elevation)?;
        if n.radius[0] <= 0.0 {
            return Err(Error::invalid("view radius must be positive"));
        }
        if n.elevation[0] <= -90.0 || n.elevation[1] >= 90.0 {
            return Err(Error::invalid(
                "elevation must stay strictly between -90 and 90 degrees",
            ));
        }
        if !(n.vfov > 0.0 && n.vfov < 180.0) {
            return Err(Error::invalid("vertical field of view must be in (0, 180) degrees"));
        }
        self.weights.validate()?;
        check_interval("t_range", self.loss.t_range)?;
        if !(self.prior.sigma0 >= 0.0) {
            return Err(Error::invalid("sigma0 must be non-negative"));
        }
        if self.inversion.draws_per_step == 0 || !(self.inversion.lr > 0.0) {
            return Err(Error::invalid("inversion needs draws_per_step >= 1 and lr > 0"));
        }
        check_interval("inversion.t_range", self.inversion.t_range)?;
        if self.checkpoint.every > 0 && self.checkpoint.dir.is_none() {
            return Err(Error::invalid("checkpoint.every is set but checkpoint.dir is not"));
        }
        Ok(())
    }

    /// Cosine decay from `lr` at step 0 to `lr_final` at the last step.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let o = &self.optim;
        let span = (self.iterations.max(2) - 1) as f64;
        let f = (step as f64 / span).min(1.0);
        o.lr_final + 0.5 * (o.lr - o.lr_final) * (1.0 + (std::f64::consts::PI * f).cos())
    }

    /// Apply a `dotted.key=value` override, the value parsed as a TOML value.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", value.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::format(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::invalid(format!("'{key}' does not name a config key")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let cfg: Self = root
            .try_into()
            .map_err(|e| Error::invalid(format!("override '{assignment}': {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }
}
