use serde_json::json;

use super::client::BridgeClient;
use super::payload::TensorPayload;
use crate::autodiff::Tensor;
use crate::raster::Image;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: crate::Result<String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fail(detail: String) -> crate::Error {
    crate::Error::Backend {
        backend: "remote".into(),
        detail,
    }
}

/// Protocol checks against a live endpoint: health, shape echo, the 422
/// answer to a short payload, request-id echo, and the encode/decode shape
/// round trip. Unreachable endpoints fail every check.
pub fn check_endpoint(client: &BridgeClient) -> Vec<CheckResult> {
    let z = Tensor::full(vec![8, 8, 3], 0.25);
    let cond = Tensor::full(vec![2, 4], 0.1);
    vec![
        check("health", client.health().map(|v| v.to_string())),
        check(
            "denoise shape echo",
            client.denoise(&z, 10, &cond).and_then(|eps| {
                if eps.shape() == z.shape() {
                    Ok(format!("{:?}", eps.shape()))
                } else {
                    Err(fail(format!("{:?} for {:?}", eps.shape(), z.shape())))
                }
            }),
        ),
        check("short payload rejected with 422", {
            let mut p = TensorPayload::from_tensor(&z);
            p.shape = vec![8, 8, 4];
            match client.call(
                "denoise",
                json!({ "z_t": p, "t": 10, "cond": TensorPayload::from_tensor(&cond) }),
            ) {
                Ok(_) => Err(fail("accepted".into())),
                Err(e) if e.to_string().contains("HTTP 422") => Ok(e.to_string()),
                Err(e) => Err(fail(format!("wrong failure: {e}"))),
            }
        }),
        check(
            "request id echo",
            client
                .call("text_embed", json!({ "text": "probe" }))
                .map(|v| format!("{}", v["request_id"])),
        ),
        check("encode/decode shape round trip", {
            Image::filled(16, 8, [0.3, 0.6, 0.9]).and_then(|img| {
                let z = client.encode(&img)?;
                let back = client.decode(&z)?;
                if back.same_size(&img) {
                    Ok(format!("latent {:?}", z.shape()))
                } else {
                    Err(fail(format!("{}x{} came back", back.width(), back.height())))
                }
            })
        }),
    ]
}
