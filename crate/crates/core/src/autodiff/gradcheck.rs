use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Relative-error floor used when both gradients are near zero.
const FLOOR: f64 = 1e-8;

/// Compare the reverse-mode gradient of `f` at `probe` against central
/// finite differences over every coordinate.
///
/// Returns `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn gradcheck<F>(f: F, probe: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..probe.numel()).collect();
    gradcheck_coords(f, probe, eps, &coords)
}

/// [`gradcheck`] restricted to the listed flat coordinates.
pub fn gradcheck_coords<F>(f: F, probe: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !probe.is_finite() {
        return Err(Error::invalid("gradcheck probe must be finite"));
    }
    let mut g = Graph::new();
    let x = g.param(probe.clone());
    let y = f(&mut g, x)?;
    let value = g.value(y).item()?;
    if !value.is_finite() {
        return Err(Error::invalid("function value at probe is not finite"));
    }
    let analytic = g.backward(y)?.wrt(x)?;

    let eval = |point: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(point);
        let y = f(&mut g, x)?;
        let v = g.value(y).item()?;
        if !v.is_finite() {
            return Err(Error::invalid("function value at perturbed probe is not finite"));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    for &i in coords {
        if i >= probe.numel() {
            return Err(Error::invalid(format!(
                "coordinate {i} out of range for probe of {} values",
                probe.numel()
            )));
        }
        let mut plus = probe.clone();
        plus.data_mut()[i] += eps;
        let mut minus = probe.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Directional variant: compares `<grad f, v>` with the central difference
/// of `f` along `v` for `directions` random unit vectors supported on
/// `coords` (all coordinates when empty). Coordinates with tiny gradients
/// no longer dominate through finite-difference roundoff.
pub fn gradcheck_directions<F>(
    f: F,
    probe: &Tensor,
    eps: f64,
    coords: &[usize],
    directions: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !probe.is_finite() {
        return Err(Error::invalid("gradcheck probe must be finite"));
    }
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..probe.numel()).collect();
        &all
    } else {
        coords
    };
    if let Some(&bad) = coords.iter().find(|&&i| i >= probe.numel()) {
        return Err(Error::invalid(format!(
            "coordinate {bad} out of range for probe of {} values",
            probe.numel()
        )));
    }
    let mut g = Graph::new();
    let x = g.param(probe.clone());
    let y = f(&mut g, x)?;
    if !g.value(y).item()?.is_finite() {
        return Err(Error::invalid("function value at probe is not finite"));
    }
    let analytic = g.backward(y)?.wrt(x)?;
    let eval = |point: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(point);
        let y = f(&mut g, x)?;
        let v = g.value(y).item()?;
        if !v.is_finite() {
            return Err(Error::invalid("function value at perturbed probe is not finite"));
        }
        Ok(v)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut v: Vec<f64> = coords.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|a| *a /= n);
        let mut plus = probe.clone();
        let mut minus = probe.clone();
        let mut a = 0.0;
        for (&i, &vi) in coords.iter().zip(&v) {
            plus.data_mut()[i] += eps * vi;
            minus.data_mut()[i] -= eps * vi;
            a += analytic.data()[i] * vi;
        }
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
