use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::HashGridConfig;
use crate::autodiff::{matmul_kernel, sigmoid, softplus, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Hash grid plus the perceptron that decodes its features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Initial value of the learnable offset added to the density logit.
    pub density_bias_init: f64,
    /// Half-width of the uniform initialization of grid features.
    pub table_init_scale: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden_width: 64,
            hidden_layers: 2,
            density_bias_init: -1.0,
            table_init_scale: 1e-4,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if !self.density_bias_init.is_finite() || !(self.table_init_scale.is_finite() && self.table_init_scale >= 0.0) {
            return Err(Error::invalid(
                "density bias and table init scale must be finite (scale >= 0)",
            ));
        }
        Ok(())
    }

    /// `(inputs, outputs)` of each dense layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.grid.feature_dim();
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, 4));
        dims
    }

    /// Shapes of every parameter tensor in declared order: grid tables, then
    /// weight and bias of each layer, then the density bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![vec![self.grid.table_size(), self.grid.features_per_level]; self.grid.levels];
        for (i, o) in self.layer_dims() {
            shapes.push(vec![i, o]);
            shapes.push(vec![1, o]);
        }
        shapes.push(vec![1]);
        shapes
    }
}

/// Color and density at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub rgb: [f64; 3],
    pub sigma: f64,
}

/// Learnable parameters of the radiance field.
///
/// Parameters kept by the trainer are always `f32`-representable so that
/// checkpoints round-trip exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    config: FieldConfig,
    tensors: Vec<Tensor>,
}

impl FieldParams {
    pub fn from_tensors(config: FieldConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "field expects {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (s, t)) in shapes.iter().zip(&tensors).enumerate() {
            if s.as_slice() != t.shape() {
                return Err(Error::shape(
                    "field params",
                    format!("tensor {i} has shape {:?}, expected {s:?}", t.shape()),
                ));
            }
        }
        Ok(Self { config, tensors })
    }

    /// All-zero parameters with a zero density bias.
    pub fn zeros(config: FieldConfig) -> Result<Self> {
        let tensors = config.param_shapes().into_iter().map(Tensor::zeros).collect();
        Self::from_tensors(config, tensors)
    }

    /// Seeded initialization: small uniform grid features, He-uniform hidden
    /// layers, Xavier-uniform output layer, zero biases.
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        let s = config.table_init_scale;
        for shape in config.param_shapes().into_iter().take(config.grid.levels) {
            let n = shape.iter().product();
            tensors.push(Tensor::new(shape, (0..n).map(|_| rng.random_range(-s..=s)).collect())?);
        }
        let dims = config.layer_dims();
        for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = if li + 1 < dims.len() {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            tensors.push(Tensor::new(vec![fan_in, fan_out], w)?);
            tensors.push(Tensor::zeros(vec![1, fan_out]));
        }
        tensors.push(Tensor::full(vec![1], config.density_bias_init));
        let tensors = tensors.iter().map(Tensor::round_to_f32).collect();
        Self::from_tensors(config, tensors)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn tables(&self) -> &[Tensor] {
        &self.tensors[..self.config.grid.levels]
    }

    fn layer(&self, i: usize) -> (&Tensor, &Tensor) {
        let base = self.config.grid.levels + 2 * i;
        (&self.tensors[base], &self.tensors[base + 1])
    }

    pub fn density_bias(&self) -> f64 {
        self.tensors.last().expect("density bias").data()[0]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (i, t) in self.tensors.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::invalid(format!("field parameter tensor {i} is not finite")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, p: [f64; 3]) -> Result<FieldOutput> {
        Ok(self.eval_batch(&[p])?[0])
    }

    /// Evaluate many points without recording a graph.
    pub fn eval_batch(&self, points: &[[f64; 3]]) -> Result<Vec<FieldOutput>> {
        self.ensure_finite()?;
        let n = points.len();
        let tables: Vec<&[f64]> = self.tables().iter().map(Tensor::data).collect();
        let dim = self.config.grid.feature_dim();
        let layouts = self.config.grid.layouts();
        let mut h = vec![0.0; n * dim];
        for (&p, row) in points.iter().zip(h.chunks_mut(dim)) {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("non-finite query point {p:?}")));
            }
            self.config.grid.encode_into(&layouts, &tables, p, row);
        }
        let dims = self.config.layer_dims();
        for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let (w, b) = self.layer(li);
            let mut next = matmul_kernel(&h, w.data(), n, fan_in, fan_out);
            let last = li + 1 == dims.len();
            for row in next.chunks_mut(fan_out) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                    if !last {
                        *v = v.max(0.0);
                    }
                }
            }
            h = next;
        }
        let db = self.density_bias();
        Ok(h.chunks(4)
            .map(|o| FieldOutput {
                rgb: [sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])],
                sigma: softplus(o[3] + db),
            })
            .collect())
    }

    /// Register every parameter tensor as a graph leaf.
    pub fn register(&self, g: &mut Graph, requires_grad: bool) -> FieldVars {
        FieldVars {
            vars: self.tensors.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect(),
            levels: self.config.grid.levels,
        }
    }
}

/// Graph handles of a registered [`FieldParams`], in declared order.
#[derive(Clone, Debug)]
pub struct FieldVars {
    vars: Vec<Var>,
    levels: usize,
}

impl FieldVars {
    /// Build handles from leaves created elsewhere, in declared order.
    pub fn from_vars(config: &FieldConfig, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != config.param_shapes().len() {
            return Err(Error::invalid("wrong number of field parameter variables"));
        }
        Ok(Self {
            vars,
            levels: config.grid.levels,
        })
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    pub fn tables(&self) -> &[Var] {
        &self.vars[..self.levels]
    }

    pub fn layer(&self, i: usize) -> (Var, Var) {
        let base = self.levels + 2 * i;
        (self.vars[base], self.vars[base + 1])
    }

    pub fn density_bias(&self) -> Var {
        *self.vars.last().expect("density bias")
    }
}
