use std::sync::Arc;
use std::time::Duration;

use monoview::autodiff::Tensor;
use monoview::bridge::*;
use monoview::prior::{check_denoiser_contract, Denoiser, LatentCodec};
use monoview::raster::Image;
use serde_json::json;

fn client(mock: &MockBridge) -> BridgeClient {
    BridgeClient::new(&mock.url(), ClientConfig::default()).unwrap()
}

#[test]
fn health_and_advertised_schedule() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    let c = client(&mock);
    assert_eq!(c.health().unwrap()["status"], "ok");
    assert_eq!(c.schedule().unwrap(), monoview::prior::NoiseSchedule::default());
}

#[test]
fn remote_denoiser_passes_the_shared_contract() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    let d = RemoteDenoiser::connect(Arc::new(client(&mock))).unwrap();
    let z = Tensor::full(vec![4, 4, 3], 0.3);
    let cond = Tensor::full(vec![2, 16], 0.1);
    check_denoiser_contract(&d, &z, &cond).unwrap();
}

#[test]
fn remote_prediction_matches_analytic_formula() {
    let cfg = MockConfig::default();
    let mock = MockBridge::start(cfg.clone()).unwrap();
    let d = RemoteDenoiser::connect(Arc::new(client(&mock))).unwrap();
    let z = Tensor::new(vec![1, 2, 3], vec![0.1, 0.9, -0.4, 1.2, 0.5, 0.0]).unwrap();
    let cond = Tensor::zeros(vec![1, 4]);
    let got = d.predict(&z, 400, &cond).unwrap();
    let mu = Tensor::full(vec![1, 2, 3], cfg.mean);
    let want = monoview::prior::analytic_gaussian_eps(&z.round_to_f32(), 400, &mu, cfg.sigma0, &cfg.sched).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-6);
}

#[test]
fn error_statuses() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    let c = client(&mock);
    let z = Tensor::zeros(vec![2, 2, 3]);
    let mut short = TensorPayload::from_tensor(&z);
    short.shape = vec![2, 2, 4];
    let cond = TensorPayload::from_tensor(&Tensor::zeros(vec![1, 2]));
    let e = c
        .call("denoise", json!({ "z_t": short, "t": 1, "cond": cond }))
        .unwrap_err();
    assert!(e.to_string().contains("HTTP 422"), "{e}");
    let e = c.call("denoise", json!({ "z_t": "nope", "t": 1 })).unwrap_err();
    assert!(e.to_string().contains("HTTP 400"), "{e}");
    let e = c.call("nowhere", json!({})).unwrap_err();
    assert!(e.to_string().contains("HTTP 404"), "{e}");
    let e = c.caption(&Image::filled(2, 2, [0.0; 3]).unwrap()).unwrap_err();
    assert!(e.to_string().contains("unsupported"), "{e}");
}

#[test]
fn missing_protocol_header_is_rejected() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    let resp = ureq::get(&format!("{}/health", mock.url())).call();
    assert!(matches!(resp, Err(ureq::Error::Status(400, _))));
}

#[test]
fn busy_server_is_retried() {
    let mock = MockBridge::start(MockConfig {
        busy_first: 2,
        ..Default::default()
    })
    .unwrap();
    let c = BridgeClient::new(
        &mock.url(),
        ClientConfig {
            backoff: Duration::from_millis(5),
            ..Default::default()
        },
    )
    .unwrap();
    let e = c.text_embed("ball").unwrap();
    assert_eq!(e.shape(), &[1, 16]);
    assert_eq!(mock.served(), 3);
    assert_eq!(c.text_embed("ball").unwrap(), e);
    assert_ne!(c.text_embed("crate").unwrap(), e);
}

#[test]
fn retries_run_out() {
    let mock = MockBridge::start(MockConfig {
        busy_first: 100,
        ..Default::default()
    })
    .unwrap();
    let c = BridgeClient::new(
        &mock.url(),
        ClientConfig {
            retries: 2,
            backoff: Duration::from_millis(1),
            ..Default::default()
        },
    )
    .unwrap();
    let e = c.text_embed("ball").unwrap_err();
    assert!(e.to_string().contains("HTTP 503"), "{e}");
    assert_eq!(mock.served(), 3);
}

#[test]
fn slow_server_times_out() {
    let mock = MockBridge::start(MockConfig {
        delay: Duration::from_millis(400),
        ..Default::default()
    })
    .unwrap();
    let c = BridgeClient::new(
        &mock.url(),
        ClientConfig {
            timeout: Duration::from_millis(100),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(matches!(c.text_embed("x"), Err(monoview::Error::Backend { .. })));
}

#[test]
fn request_id_mismatch_is_an_error() {
    let mock = MockBridge::start(MockConfig {
        bad_echo: true,
        ..Default::default()
    })
    .unwrap();
    let c = client(&mock);
    let e = c
        .denoise(&Tensor::zeros(vec![2, 2, 3]), 3, &Tensor::zeros(vec![1, 2]))
        .unwrap_err();
    assert!(e.to_string().contains("not echoed"), "{e}");
    assert!(c.text_embed("fine").is_ok());
}

#[test]
fn remote_codec_shapes_and_pullback() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    let codec = RemoteCodec::connect(Arc::new(client(&mock))).unwrap();
    assert_eq!(codec.factor(), 2);
    assert_eq!(codec.latent_shape(8, 4), vec![2, 4, 3]);
    let img = Image::filled(8, 4, [0.25, 0.5, 0.75]).unwrap();
    let z = codec.encode(&img).unwrap();
    assert_eq!(z.shape(), &[2, 4, 3]);
    assert_eq!(codec.decode(&z).unwrap(), img);
    let dz = Tensor::full(vec![2, 4, 3], 0.125);
    let back = codec.pullback(&img, &dz).unwrap();
    assert_eq!(back.shape(), &[32, 3]);
    assert!(back.data().iter().all(|v| (v - 0.125).abs() < 1e-6));
    assert!(codec.encode(&Image::filled(3, 3, [0.0; 3]).unwrap()).is_err());
}

#[test]
fn depth_endpoint() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    let d = client(&mock).depth(&Image::filled(5, 3, [1.0; 3]).unwrap()).unwrap();
    assert_eq!((d.width(), d.height()), (5, 3));
    assert!(d.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn endpoint_checks_pass_against_the_mock() {
    let mock = MockBridge::start(MockConfig::default()).unwrap();
    for r in check_endpoint(&client(&mock)) {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

#[test]
fn unreachable_endpoint_fails_every_check() {
    let url = {
        let mock = MockBridge::start(MockConfig::default()).unwrap();
        mock.url()
    };
    let c = BridgeClient::new(
        &url,
        ClientConfig {
            timeout: Duration::from_millis(200),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(check_endpoint(&c).iter().all(|r| !r.passed));
    assert!(BridgeClient::new("ftp://x", ClientConfig::default()).is_err());
}
