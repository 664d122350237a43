use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::autodiff::{gradcheck, gradcheck_directions, Graph, Tensor};
use crate::raster::Image;

fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn schedule_products() {
    let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
    assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
    assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
    let d = NoiseSchedule::default();
    assert_eq!(d.steps(), 1000);
    assert_eq!(d.alpha_bars()[0], 1.0 - 1e-4);
    assert!(d.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    assert!(d.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0));
    assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
    assert!(NoiseSchedule::linear(5, 0.3, 0.2).is_err());
    assert!(NoiseSchedule::linear(5, 0.0, 0.2).is_err());
    assert!(NoiseSchedule::linear(5, 0.1, 1.0).is_err());
}

#[test]
fn q_sample_substitutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = NoiseSchedule::default();
    let z0 = normal(&mut rng, vec![4, 3]);
    let eps = normal(&mut rng, vec![4, 3]);
    assert_eq!(q_sample_alpha(&z0, 1.0, &eps).unwrap(), z0);
    let zt = q_sample(&z0, 400, &Tensor::zeros(vec![4, 3]), &s).unwrap();
    let a = s.alpha_bar(400).unwrap().sqrt();
    assert!(zt.data().iter().zip(z0.data()).all(|(x, y)| (x - a * y).abs() < 1e-15));
    assert!(q_sample(&z0, 1000, &eps, &s).is_err());
    assert!(q_sample(&z0, 0, &Tensor::zeros(vec![3, 4]), &s).is_err());
}

#[test]
fn q_sample_preserves_unit_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = NoiseSchedule::default();
    let n = 100_000;
    let z0 = normal(&mut rng, vec![n]);
    let eps = normal(&mut rng, vec![n]);
    for t in [10, 300, 900] {
        let zt = q_sample(&z0, t, &eps, &s).unwrap();
        let m = zt.sum() / n as f64;
        let var = zt.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "t={t}: {var}");
    }
}

#[test]
fn analytic_eps_recovers_noise_without_data_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = NoiseSchedule::default();
    let mu = normal(&mut rng, vec![5, 2]);
    for t in [0, 17, 500, 999] {
        let eps = normal(&mut rng, vec![5, 2]);
        let zt = q_sample(&mu, t, &eps, &s).unwrap();
        let e = analytic_gaussian_eps(&zt, t, &mu, 0.0, &s).unwrap();
        assert!(e.max_abs_diff(&eps) < 1e-9, "t={t}");
        let at_mean = mu.scale(s.alpha_bar(t).unwrap().sqrt());
        let e = analytic_gaussian_eps(&at_mean, t, &mu, 0.7, &s).unwrap();
        assert!(e.data().iter().all(|v| v.abs() < 1e-15));
    }
}

#[test]
fn analytic_eps_beats_perturbed_linear_denoisers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = NoiseSchedule::default();
    let (t, sigma0, mu) = (600, 0.8, 0.3);
    let ab = s.alpha_bar(t).unwrap();
    let n = 100_000;
    let mut x = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        x.push(mu + sigma0 * rng.sample::<f64, _>(StandardNormal));
        eps.push(rng.sample::<f64, _>(StandardNormal));
    }
    let zt = q_sample_alpha(&Tensor::from_vec(x), ab, &Tensor::from_vec(eps.clone())).unwrap();
    let mu_t = Tensor::full(vec![n], mu);
    let best = analytic_gaussian_eps(&zt, t, &mu_t, sigma0, &s).unwrap();
    let mse = |pred: &[f64]| pred.iter().zip(&eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / n as f64;
    let base = mse(best.data());
    for (da, db) in [(0.05, 0.0), (-0.05, 0.0), (0.0, 0.1), (0.0, -0.1)] {
        let pert: Vec<f64> = zt
            .data()
            .iter()
            .map(|z| {
                let gain = (1.0 - ab).sqrt() / (ab * sigma0 * sigma0 + 1.0 - ab) * (1.0 + da);
                gain * (z - ab.sqrt() * (mu + db))
            })
            .collect();
        assert!(mse(&pert) > base, "{da} {db}");
    }
}

#[test]
fn residual_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = NoiseSchedule::default();
    let x = Image::new(3, 2, (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
    let codec = IdentityCodec;
    let cond = Tensor::zeros(vec![1, 4]);
    let eps = normal(&mut rng, vec![2, 3, 3]);
    let oracle = FixedDenoiser {
        output: eps.clone(),
        sched: s.clone(),
    };
    assert_eq!(
        diffusion_residual(&oracle, &codec, &x, &cond, 10, &eps, &s).unwrap(),
        0.0
    );
    let prior = AnalyticGaussianPrior::new(codec.encode(&x).unwrap(), 0.0, s.clone()).unwrap();
    for t in [3, 250, 990] {
        let eps = normal(&mut rng, vec![2, 3, 3]);
        let r = diffusion_residual(&prior, &codec, &x, &cond, t, &eps, &s).unwrap();
        assert!(r < 1e-18, "{r}");
    }
}

#[test]
fn residual_gradient_wrt_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = NoiseSchedule::default();
    let mu = normal(&mut rng, vec![3, 4, 3]);
    let prior = AnalyticGaussianPrior::new(mu, 0.4, s.clone()).unwrap();
    let eps = normal(&mut rng, vec![3, 4, 3]);
    let probe = normal(&mut rng, vec![12, 3]);
    let f = |g: &mut Graph, x| {
        let cond = g.constant(Tensor::zeros(vec![1, 2]));
        diffusion_residual_graph(g, &prior, &IdentityCodec, x, [4, 3], cond, 321, &eps, &s)
    };
    assert!(gradcheck(f, &probe, 1e-5).unwrap() < 1e-4);
    // graph and plain residuals agree
    let mut g = Graph::new();
    let x = g.constant(probe.clone());
    let r = f(&mut g, x).unwrap();
    let img = Image::from_tensor(4, 3, &probe).unwrap();
    let plain = diffusion_residual(&prior, &IdentityCodec, &img, &Tensor::zeros(vec![1, 2]), 321, &eps, &s).unwrap();
    assert!((g.value(r).item().unwrap() - plain).abs() < 1e-10);
}

#[test]
fn guidance_concat_and_split() {
    let s0 = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let s1 = Tensor::new(vec![1, 3], vec![7.0, 8.0, 9.0]).unwrap();
    let j = concat_guidance(s0.clone(), s1.clone()).unwrap();
    assert_eq!(j.len(), 3);
    assert_eq!(j.joint().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    let (a, b) = j.split(&j.joint()).unwrap();
    assert_eq!((a, b), (s0.clone(), s1));
    let e = concat_guidance(s0.clone(), Tensor::zeros(vec![0, 3])).unwrap();
    assert_eq!(e.joint(), s0);
    assert!(concat_guidance(s0, Tensor::zeros(vec![1, 4])).is_err());
}

#[test]
fn embedding_table_round_trip() {
    let t = EmbeddingTable::new(
        vec!["ball".into(), "cube".into()],
        Tensor::new(vec![2, 2], vec![0.5, -1.0, 0.25, 3.0]).unwrap(),
    )
    .unwrap();
    let back = EmbeddingTable::from_bytes(&t.to_bytes().unwrap()).unwrap();
    assert_eq!(back, t);
    assert_eq!(t.index_of("cube").unwrap(), 1);
    assert!(t.index_of("tree").is_err());
    assert_eq!(t.mean_row().data(), &[0.375, 1.0]);
    let mut bad = t.to_bytes().unwrap();
    bad[3] = b'F';
    assert!(EmbeddingTable::from_bytes(&bad).is_err());
    assert!(EmbeddingTable::new(vec!["a".into(), "a".into()], Tensor::zeros(vec![2, 2])).is_err());
}

fn tiny_toy_data(seed: u64) -> LabeledImages {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let label = i % 2;
        let base = if label == 0 { [0.9, 0.1, 0.1] } else { [0.1, 0.2, 0.9] };
        let data = (0..8 * 8)
            .flat_map(|_| base.map(|b| b + 0.05 * rng.random_range(-1.0..1.0)))
            .collect();
        images.push(Image::new(8, 8, data).unwrap());
        labels.push(label);
    }
    LabeledImages {
        images,
        labels,
        vocabulary: vec!["red".into(), "blue".into()],
    }
}

fn tiny_config(steps: usize) -> ToyConfig {
    ToyConfig {
        image_size: 8,
        embed_dim: 4,
        proj_dim: 8,
        hidden: 16,
        steps,
        batch: 8,
        lr: 1e-2,
        ..Default::default()
    }
}

#[test]
fn untrained_toy_predicts_zero_and_residual_is_noise_energy() {
    let data = tiny_toy_data(0);
    let sched = NoiseSchedule::default();
    let trained = train_toy_denoiser(&data, &sched, &tiny_config(0)).unwrap();
    let cond = trained.embeddings.row(0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total = 0.0;
    let draws = 200;
    for _ in 0..draws {
        let eps = normal(&mut rng, vec![8, 8, 3]);
        let t = rng.random_range(20..980);
        total += diffusion_residual(
            &trained.denoiser,
            &IdentityCodec,
            &data.images[0],
            &cond,
            t,
            &eps,
            &sched,
        )
        .unwrap();
    }
    let n = 8.0 * 8.0 * 3.0;
    assert!((total / draws as f64 / n - 1.0).abs() < 0.1);
    let again = train_toy_denoiser(&data, &sched, &tiny_config(0)).unwrap();
    assert_eq!(again.denoiser, trained.denoiser);
}

#[test]
fn toy_training_lowers_residual_and_round_trips() {
    let data = tiny_toy_data(1);
    let sched = NoiseSchedule::default();
    let trained = train_toy_denoiser(&data, &sched, &tiny_config(300)).unwrap();
    let untrained = train_toy_denoiser(&data, &sched, &tiny_config(0)).unwrap();
    let draws = ValidationDraws::new(&data.images[..10], &sched, [0.02, 0.98], 4, 9).unwrap();
    let conds: Vec<Tensor> = data.labels[..10].iter().map(|&l| trained.embeddings.row(l)).collect();
    let after = mean_residual(&trained.denoiser, &data.images[..10], &conds, &draws).unwrap();
    let before = mean_residual(&untrained.denoiser, &data.images[..10], &conds, &draws).unwrap();
    assert!(after < 0.7 * before, "{after} vs {before}");

    let bytes = trained.denoiser.to_bytes(&trained.embeddings).unwrap();
    let (d, e) = ToyDenoiser::from_bytes(&bytes).unwrap();
    assert_eq!(d, trained.denoiser);
    assert_eq!(e, trained.embeddings);
    assert_eq!(d.to_bytes(&e).unwrap(), bytes);
}

#[test]
fn toy_gradient_wrt_conditioning() {
    let data = tiny_toy_data(2);
    let sched = NoiseSchedule::default();
    let trained = train_toy_denoiser(&data, &sched, &tiny_config(50)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = normal(&mut rng, vec![8, 8, 3]);
    let x = data.images[3].to_tensor();
    let probe = trained.embeddings.row(1);
    let err = gradcheck_directions(
        |g: &mut Graph, c| {
            let x = g.constant(x.clone());
            diffusion_residual_graph(g, &trained.denoiser, &IdentityCodec, x, [8, 8], c, 200, &eps, &sched)
        },
        &probe,
        1e-5,
        &[],
        20,
        0,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn backends_satisfy_contract() {
    let data = tiny_toy_data(3);
    let sched = NoiseSchedule::default();
    let toy = train_toy_denoiser(&data, &sched, &tiny_config(5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = normal(&mut rng, vec![8, 8, 3]);
    check_denoiser_contract(&toy.denoiser, &z, &toy.embeddings.row(0)).unwrap();
    let analytic = AnalyticGaussianPrior::new(normal(&mut rng, vec![8, 8, 3]), 0.1, sched).unwrap();
    check_denoiser_contract(&analytic, &z, &Tensor::zeros(vec![1, 4])).unwrap();
}

#[test]
fn inversion_with_zero_steps_returns_init() {
    let data = tiny_toy_data(4);
    let sched = NoiseSchedule::default();
    let toy = train_toy_denoiser(&data, &sched, &tiny_config(5)).unwrap();
    let init = toy.embeddings.mean_row();
    let cfg = InversionConfig {
        steps: 0,
        ..Default::default()
    };
    let inv = textual_inversion(
        &data.images[..1],
        &toy.denoiser,
        &IdentityCodec,
        &sched,
        None,
        &init,
        &cfg,
    )
    .unwrap();
    assert_eq!(inv.embedding, init);
    assert!(inv.losses.is_empty());
}
