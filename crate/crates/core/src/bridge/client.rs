use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::payload::TensorPayload;
use super::{PROTO_HEADER, PROTO_VERSION};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::prior::NoiseSchedule;
use crate::raster::{DepthMap, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub timeout: Duration,
    /// Extra attempts after a 503.
    pub retries: usize,
    /// First backoff; doubles on every retry.
    pub backoff: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            retries: 4,
            backoff: Duration::from_millis(100),
        }
    }
}

/// Blocking client of the bridge protocol. Safe to share between threads;
/// the agent pools connections.
pub struct BridgeClient {
    base: String,
    agent: ureq::Agent,
    config: ClientConfig,
    next_id: AtomicU64,
}

fn backend(detail: impl Into<String>) -> Error {
    Error::Backend {
        backend: "remote".into(),
        detail: detail.into(),
    }
}

impl BridgeClient {
    pub fn new(base_url: &str, config: ClientConfig) -> Result<Self> {
        let base = base_url.trim_end_matches('/').to_string();
        if !base.starts_with("http://") {
            return Err(Error::invalid(format!(
                "bridge url must start with http://, got {base_url:?}"
            )));
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(Self {
            base,
            agent,
            config,
            next_id: AtomicU64::new(0),
        })
    }

    /// Client for the endpoint named by `NERDI_BRIDGE_URL`.
    pub fn from_env() -> Result<Self> {
        let url =
            std::env::var(super::URL_ENV).map_err(|_| Error::invalid(format!("{} is not set", super::URL_ENV)))?;
        Self::new(&url, ClientConfig::default())
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request_id(&self) -> String {
        format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// POST `body` (plus a fresh request id) and return the response object.
    /// Retries on 503; other failures map to `Error::Backend`.
    pub fn call(&self, endpoint: &str, mut body: Value) -> Result<Value> {
        let id = self.request_id();
        body["request_id"] = Value::String(id.clone());
        let url = format!("{}/{}", self.base, endpoint.trim_start_matches('/'));
        let mut wait = self.config.backoff;
        let mut attempt = 0;
        loop {
            let sent = self
                .agent
                .post(&url)
                .set(PROTO_HEADER, PROTO_VERSION)
                .send_json(body.clone());
            match sent {
                Ok(resp) => {
                    let v: Value = resp
                        .into_json()
                        .map_err(|e| backend(format!("{endpoint}: unreadable response: {e}")))?;
                    let echoed = v.get("request_id").and_then(Value::as_str);
                    if echoed != Some(id.as_str()) {
                        return Err(backend(format!(
                            "{endpoint}: request id {id:?} not echoed (got {echoed:?})"
                        )));
                    }
                    return Ok(v);
                }
                Err(ureq::Error::Status(503, _)) if attempt < self.config.retries => {
                    std::thread::sleep(wait);
                    wait *= 2;
                    attempt += 1;
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let msg = resp
                        .into_json::<Value>()
                        .ok()
                        .map(|v| {
                            format!(
                                "{}: {}",
                                v["error"].as_str().unwrap_or("error"),
                                v["message"].as_str().unwrap_or("")
                            )
                        })
                        .unwrap_or_default();
                    return Err(backend(format!("{endpoint}: HTTP {code} {msg}")));
                }
                Err(ureq::Error::Transport(t)) => return Err(backend(format!("{endpoint}: {t}"))),
            }
        }
    }

    fn payload_field(v: &Value, endpoint: &str, field: &str) -> Result<TensorPayload> {
        let p = v
            .get(field)
            .ok_or_else(|| backend(format!("{endpoint}: response has no `{field}`")))?;
        serde_json::from_value(p.clone()).map_err(|e| backend(format!("{endpoint}: bad `{field}`: {e}")))
    }

    /// GET /health; returns the response object (status is checked).
    pub fn health(&self) -> Result<Value> {
        let resp = self
            .agent
            .get(&format!("{}/health", self.base))
            .set(PROTO_HEADER, PROTO_VERSION)
            .call()
            .map_err(|e| backend(format!("health: {e}")))?;
        let v: Value = resp.into_json().map_err(|e| backend(format!("health: {e}")))?;
        if v["status"] != "ok" {
            return Err(backend(format!("health: status {}", v["status"])));
        }
        Ok(v)
    }

    /// Schedule advertised by /health, or the default when none is given.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let v = self.health()?;
        match v.get("schedule") {
            None => Ok(NoiseSchedule::default()),
            Some(s) => {
                let steps = s["steps"].as_u64().ok_or_else(|| backend("health: schedule.steps"))?;
                let lo = s["beta_start"]
                    .as_f64()
                    .ok_or_else(|| backend("health: schedule.beta_start"))?;
                let hi = s["beta_end"]
                    .as_f64()
                    .ok_or_else(|| backend("health: schedule.beta_end"))?;
                NoiseSchedule::linear(steps as usize, lo, hi)
            }
        }
    }

    pub fn denoise(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        let v = self.call(
            "denoise",
            json!({
                "z_t": TensorPayload::from_tensor(z_t),
                "t": t,
                "cond": TensorPayload::from_tensor(cond),
            }),
        )?;
        Ok(Self::payload_field(&v, "denoise", "eps")?.decode()?)
    }

    pub fn text_embed(&self, text: &str) -> Result<Tensor> {
        let v = self.call("text_embed", json!({ "text": text }))?;
        Ok(Self::payload_field(&v, "text_embed", "embedding")?.decode()?)
    }

    pub fn encode(&self, image: &Image) -> Result<Tensor> {
        let v = self.call("encode", json!({ "image": TensorPayload::from_image(image) }))?;
        Ok(Self::payload_field(&v, "encode", "latent")?.decode()?)
    }

    pub fn decode(&self, latent: &Tensor) -> Result<Image> {
        let v = self.call("decode", json!({ "latent": TensorPayload::from_tensor(latent) }))?;
        Ok(Self::payload_field(&v, "decode", "image")?.decode_image()?)
    }

    pub fn depth(&self, image: &Image) -> Result<DepthMap> {
        let v = self.call("depth", json!({ "image": TensorPayload::from_image(image) }))?;
        Ok(Self::payload_field(&v, "depth", "depth")?.decode_depth()?)
    }

    /// Caption text; servers without a captioner answer with an error.
    pub fn caption(&self, image: &Image) -> Result<String> {
        let v = self.call("caption", json!({ "image": TensorPayload::from_image(image) }))?;
        v["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| backend("caption: response has no `text`"))
    }
}
