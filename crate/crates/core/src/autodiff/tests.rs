use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn sigmoid_and_softplus_at_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(x).unwrap();
    let p = g.softplus(x).unwrap();
    assert_eq!(g.value(s).item().unwrap(), 0.5);
    assert!((g.value(p).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn cumprod_exclusive_definition() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[2.0, 3.0, 5.0]));
    let y = g.cumprod_exclusive(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 6.0]);
}

#[test]
fn product_rule_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    let y = g.constant(t(&[3], &[4.0, -5.0, 6.0]));
    let xy = g.mul(x, y).unwrap();
    let loss = g.sum(xy).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[4.0, -5.0, 6.0]);
}

#[test]
fn exp_gradient_at_zero_is_one() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(vec![2, 3]));
    let e = g.exp(x).unwrap();
    let loss = g.sum(e).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn unreached_leaves_get_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let unused = g.param(t(&[2, 2], &[1.0; 4]));
    let loss = g.sum(x).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(unused).unwrap(), Tensor::zeros(vec![2, 2]));
}

#[test]
fn backward_rejects_non_scalar_and_detached() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let y = g.exp(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));

    let c = g.constant(t(&[2], &[1.0, 2.0]));
    let s = g.sum(c).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Detached(_))));

    let mut other = Graph::new();
    let z = other.param(Tensor::scalar(1.0));
    assert!(matches!(g.backward(z), Err(Error::Detached(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![4, 3]));
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(
        err.contains("add") && err.contains("[2, 3]") && err.contains("[4, 3]"),
        "{err}"
    );
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{err}");
}

#[test]
fn log_and_div_domain_errors_and_guard() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(g.log(x), Err(Error::Domain { op: "log", .. })));
    let one = g.scalar(1.0);
    assert!(matches!(g.div(one, x), Err(Error::Domain { op: "div", .. })));

    g.set_epsilon_guard(Some(1e-12));
    let l = g.log(x).unwrap();
    assert_eq!(g.value(l).data()[1], (1e-12f64).ln());
    let d = g.div(one, x).unwrap();
    assert_eq!(g.value(d).data()[1], 1e12);
}

#[test]
fn gather_scatter_adds_repeated_rows() {
    let mut g = Graph::new();
    let table = g.param(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let rows = g.gather(table, Arc::new(vec![2, 0, 2])).unwrap();
    assert_eq!(g.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    let loss = g.sum(rows).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);

    let bad = g.gather(table, Arc::new(vec![3]));
    assert!(matches!(bad, Err(Error::Shape { op: "gather", .. })));
}

#[test]
fn cumprod_backward_survives_zero_factors() {
    // division-free backward keeps gradients exact when a factor is zero
    let f = |g: &mut Graph, x: Var| {
        let y = g.cumprod_exclusive(x)?;
        let w = g.constant(t(&[1, 4], &[0.3, -1.2, 0.7, 2.0]));
        let yw = g.mul(y, w)?;
        g.sum(yw)
    };
    let err = gradcheck(f, &t(&[1, 4], &[0.5, 0.0, 1.5, -0.8]), 1e-6).unwrap();
    assert!(err < 1e-7, "rel err {err}");
}

#[test]
fn gradcheck_exact_for_linear_function() {
    let w = t(&[4], &[0.5, -2.0, 3.0, 1.25]);
    let f = |g: &mut Graph, x: Var| {
        let c = g.constant(w.clone());
        let p = g.mul(x, c)?;
        g.sum(p)
    };
    let err = gradcheck(f, &t(&[4], &[1.0, 2.0, -3.0, 0.5]), 1e-5).unwrap();
    assert!(err < 1e-10, "rel err {err}");
}

#[test]
fn gradcheck_square_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let probe = random(&mut rng, &[5, 3]);
    let f = |g: &mut Graph, x: Var| {
        let sq = g.mul(x, x)?;
        g.sum(sq)
    };
    assert!(gradcheck(f, &probe, 1e-5).unwrap() < 1e-6);
}

#[test]
fn gradcheck_errors_on_non_finite_value() {
    let f = |g: &mut Graph, x: Var| {
        let l = g.log(x)?;
        g.sum(l)
    };
    assert!(gradcheck(f, &t(&[2], &[1.0, 1e-6]), 1e-5).is_err());
}

fn two_layer_perceptron(g: &mut Graph, x: Var, w1: &Tensor, w2: &Tensor, inputs: &Tensor) -> crate::error::Result<Var> {
    // x holds the flattened first-layer bias
    let a = g.constant(inputs.clone());
    let w1 = g.constant(w1.clone());
    let w2 = g.constant(w2.clone());
    let h = g.matmul(a, w1)?;
    let h = g.add(h, x)?;
    let h = g.softplus(h)?;
    let o = g.matmul(h, w2)?;
    let o = g.sigmoid(o)?;
    let sq = g.powf(o, 2.0)?;
    g.mean(sq)
}

#[test]
fn perceptron_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = random(&mut rng, &[6, 4]);
    let w1 = random(&mut rng, &[4, 5]);
    let w2 = random(&mut rng, &[5, 2]);
    let bias = random(&mut rng, &[1, 5]);
    let err = gradcheck(|g, x| two_layer_perceptron(g, x, &w1, &w2, &inputs), &bias, 1e-5).unwrap();
    assert!(err < 1e-4, "rel err {err}");

    // and with respect to the first weight matrix
    let err = gradcheck(
        |g, w| {
            let a = g.constant(inputs.clone());
            let h = g.matmul(a, w)?;
            let h = g.relu(h)?;
            let w2 = g.constant(w2.clone());
            let o = g.matmul(h, w2)?;
            let o = g.exp(o)?;
            g.sum(o)
        },
        &w1,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probe = random(&mut rng, &[4, 3]);
    let build = |g: &mut Graph, x: Var| -> (Var, Var) {
        let e = g.exp(x).unwrap();
        let l1 = g.sum(e).unwrap();
        let s = g.sigmoid(x).unwrap();
        let p = g.mul(s, x).unwrap();
        let l2 = g.mean(p).unwrap();
        (l1, l2)
    };
    let (a, b) = (0.7, -2.3);

    let grad_of = |which: u8| -> Tensor {
        let mut g = Graph::new();
        let x = g.param(probe.clone());
        let (l1, l2) = build(&mut g, x);
        let loss = match which {
            1 => l1,
            2 => l2,
            _ => {
                let sa = g.scale(l1, a).unwrap();
                let sb = g.scale(l2, b).unwrap();
                g.add(sa, sb).unwrap()
            }
        };
        g.backward(loss).unwrap().wrt(x).unwrap()
    };
    let combined = grad_of(0);
    let expected = grad_of(1).scale(a).axpy(b, &grad_of(2)).unwrap();
    assert!(combined.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.param(random(&mut rng, &[3, 4]));
    let w = g.param(random(&mut rng, &[4, 2]));
    let h = g.matmul(x, w).unwrap();
    let h = g.softplus(h).unwrap();
    let c = g.cumprod_exclusive(h).unwrap();
    let s = g.sum_axis(c, 1).unwrap();
    let _ = g.mean(s).unwrap();
    let replayed = g.replay().unwrap();
    for (i, v) in replayed.iter().enumerate() {
        let original = g.value(g.var_at(i).unwrap());
        assert_eq!(v.data(), original.data());
    }
}

#[test]
fn single_precision_rounds_values() {
    let mut g = Graph::with_precision(Precision::Single);
    let x = g.constant(Tensor::scalar(0.1));
    assert_eq!(g.value(x).item().unwrap(), 0.1f32 as f64);
    let y = g.exp(x).unwrap();
    let v = g.value(y).item().unwrap();
    assert_eq!(v, v as f32 as f64);
}

#[test]
fn concat_slice_broadcast_reshape() {
    let mut g = Graph::new();
    let a = g.param(t(&[2, 1], &[1.0, 2.0]));
    let b = g.param(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let s = g.slice(c, 1, 1, 3).unwrap();
    assert_eq!(g.value(s).data(), &[3.0, 4.0, 5.0, 6.0]);
    let r = g.reshape(s, vec![4]).unwrap();
    let bc = g.broadcast(a, vec![2, 3]).unwrap();
    assert_eq!(g.value(bc).data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    let l1 = g.sum(r).unwrap();
    let l2 = g.sum(bc).unwrap();
    let loss = g.add(l1, l2).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(a).unwrap().data(), &[3.0, 3.0]);
    assert_eq!(grads.wrt(b).unwrap().data(), &[1.0; 4]);
}

#[test]
fn gather_weighted_matches_gather_then_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let table = random(&mut rng, &[5, 2]);
    let idx = Arc::new(vec![0, 4, 4, 1, 2, 3]);
    let w = Arc::new(vec![0.5, 0.25, 0.25, -1.0, 2.0, 0.0]);

    let mut g = Graph::new();
    let tv = g.param(table.clone());
    let fused = g.gather_weighted(tv, idx.clone(), w.clone(), 3).unwrap();
    assert_eq!(g.value(fused).shape(), &[2, 2]);
    let rows = g.gather(tv, idx.clone()).unwrap();
    let wv = g.constant(t(&[6, 1], &w));
    let scaled = g.mul(rows, wv).unwrap();
    let grouped = g.reshape(scaled, vec![2, 3, 2]).unwrap();
    let plain = g.sum_axis(grouped, 1).unwrap();
    for (a, b) in g.value(fused).data().iter().zip(g.value(plain).data()) {
        assert!((a - b).abs() < 1e-6);
    }

    let f = |g: &mut Graph, x: Var| {
        let y = g.gather_weighted(x, idx.clone(), w.clone(), 3)?;
        let sq = g.mul(y, y)?;
        g.sum(sq)
    };
    assert!(gradcheck(f, &table, 1e-5).unwrap() < 1e-5);

    let bad = g.gather_weighted(tv, Arc::new(vec![0, 1]), Arc::new(vec![1.0]), 1);
    assert!(bad.is_err());
}
