use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Relative weights of the three losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_diff: f64,
    pub lambda_depth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_diff: 0.1,
            lambda_depth: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_rec, self.lambda_diff, self.lambda_depth];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be finite, non-negative, and not all zero: {w:?}"
            )));
        }
        Ok(())
    }
}

/// Scalar terms of one step; absent terms are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub recon: Option<Var>,
    pub diffusion: Option<Var>,
    pub depth: Option<Var>,
}

/// `lambda_rec * recon + lambda_diff * diffusion + lambda_depth * depth`,
/// leaving out terms with zero weight.
pub fn combine(g: &mut Graph, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (term, w) in [
        (terms.recon, weights.lambda_rec),
        (terms.diffusion, weights.lambda_diff),
        (terms.depth, weights.lambda_depth),
    ] {
        if let Some(v) = term {
            if w == 0.0 {
                continue;
            }
            let s = g.scale(v, w)?;
            total = Some(match total {
                None => s,
                Some(a) => g.add(a, s)?,
            });
        }
    }
    total.ok_or_else(|| Error::invalid("no loss term carries a positive weight"))
}

/// One training-log record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub recon: Option<f64>,
    pub diffusion: Option<f64>,
    pub depth: Option<f64>,
    pub total: f64,
    /// Diffusion timestep drawn this step.
    pub t: Option<usize>,
    /// Index of the sampled novel view (the step's RNG stream).
    pub view: Option<u64>,
    pub grad_norm: f64,
    /// Per-term gradient norms (reconstruction, diffusion, depth), when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_grad_norms: Option<[f64; 3]>,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl LossReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn is_finite(&self) -> bool {
        [self.recon, self.diffusion, self.depth]
            .iter()
            .flatten()
            .chain([self.total, self.grad_norm].iter())
            .all(|v| v.is_finite())
    }
}
