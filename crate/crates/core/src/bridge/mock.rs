use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tiny_http::{Header, Method, Response, Server};

use super::payload::{PayloadError, TensorPayload};
use super::{PROTO_HEADER, PROTO_VERSION};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::prior::{analytic_gaussian_eps, NoiseSchedule};

/// Behavior of the in-process mock bridge.
#[derive(Clone, Debug)]
pub struct MockConfig {
    /// `/denoise` answers with the analytic Gaussian prior around this
    /// constant latent value.
    pub mean: f64,
    pub sigma0: f64,
    pub sched: NoiseSchedule,
    /// Average-pool factor of `/encode`.
    pub factor: usize,
    pub embed_dim: usize,
    /// Answer 503 to this many requests before serving normally.
    pub busy_first: usize,
    /// Sleep before every answer.
    pub delay: Duration,
    /// Answer `/denoise` with a wrong request id.
    pub bad_echo: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            mean: 0.5,
            sigma0: 0.1,
            sched: NoiseSchedule::default(),
            factor: 2,
            embed_dim: 16,
            busy_first: 0,
            delay: Duration::ZERO,
            bad_echo: false,
        }
    }
}

/// Bridge server on a loopback port, serving until dropped.
pub struct MockBridge {
    server: Arc<Server>,
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
    served: Arc<AtomicUsize>,
}

struct Reply {
    status: u16,
    body: Value,
}

fn error(status: u16, code: &str, message: impl Into<String>) -> Reply {
    Reply {
        status,
        body: json!({ "error": code, "message": message.into() }),
    }
}

fn payload_error(e: PayloadError) -> Reply {
    match e {
        PayloadError::Malformed(m) => error(400, "malformed", m),
        e @ PayloadError::Length { .. } => error(422, "shape", e.to_string()),
    }
}

fn field(body: &Value, name: &str) -> std::result::Result<Tensor, Reply> {
    let v = body
        .get(name)
        .ok_or_else(|| error(400, "malformed", format!("missing `{name}`")))?;
    let p: TensorPayload =
        serde_json::from_value(v.clone()).map_err(|e| error(400, "malformed", format!("`{name}`: {e}")))?;
    p.decode().map_err(payload_error)
}

fn ok(body: Value) -> Reply {
    Reply { status: 200, body }
}

impl MockBridge {
    pub fn start(config: MockConfig) -> Result<Self> {
        if config.factor == 0 || config.embed_dim == 0 {
            return Err(Error::invalid("mock factor and embed_dim must be positive"));
        }
        let server = Server::http("127.0.0.1:0").map_err(|e| Error::invalid(format!("mock bridge: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::invalid("mock bridge has no ip address"))?;
        let server = Arc::new(server);
        let served = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let served = Arc::clone(&served);
            std::thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    let n = served.fetch_add(1, Ordering::SeqCst);
                    let mut raw = String::new();
                    let reply = if req.as_reader().read_to_string(&mut raw).is_err() {
                        error(400, "malformed", "body is not utf-8")
                    } else {
                        let proto = req
                            .headers()
                            .iter()
                            .find(|h| h.field.equiv(PROTO_HEADER))
                            .map(|h| h.value.as_str().to_string());
                        handle(&config, n, req.method(), req.url(), proto.as_deref(), &raw)
                    };
                    if !config.delay.is_zero() {
                        std::thread::sleep(config.delay);
                    }
                    let text = reply.body.to_string();
                    let resp = Response::from_string(text)
                        .with_status_code(reply.status)
                        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
                        .with_header(Header::from_bytes(PROTO_HEADER, PROTO_VERSION).expect("static header"));
                    // the client may have timed out and hung up
                    let _ = req.respond(resp);
                }
            })
        };
        Ok(Self {
            server,
            addr,
            handle: Some(handle),
            served,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far.
    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }
}

impl Drop for MockBridge {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle(config: &MockConfig, n: usize, method: &Method, url: &str, proto: Option<&str>, raw: &str) -> Reply {
    if n < config.busy_first {
        return error(503, "busy", "model busy");
    }
    if proto != Some(PROTO_VERSION) {
        return error(400, "protocol", format!("expected {PROTO_HEADER}: {PROTO_VERSION}"));
    }
    if url == "/health" {
        return match method {
            Method::Get => ok(json!({
                "status": "ok",
                "schedule": {
                    "steps": config.sched.steps(),
                    "beta_start": config.sched.beta()[0],
                    "beta_end": config.sched.beta()[config.sched.steps() - 1],
                },
            })),
            _ => error(405, "method", "use GET"),
        };
    }
    if *method != Method::Post {
        return error(405, "method", "use POST");
    }
    let body: Value = match serde_json::from_str(raw) {
        Ok(v @ Value::Object(_)) => v,
        Ok(_) => return error(400, "malformed", "body must be a JSON object"),
        Err(e) => return error(400, "malformed", e.to_string()),
    };
    let id = body.get("request_id").cloned().unwrap_or(Value::Null);
    let mut reply = match route(config, url, &body) {
        Ok(r) | Err(r) => r,
    };
    let echo = if config.bad_echo && url == "/denoise" {
        Value::String("not-your-id".into())
    } else {
        id
    };
    reply.body["request_id"] = echo;
    reply
}

fn route(config: &MockConfig, url: &str, body: &Value) -> std::result::Result<Reply, Reply> {
    match url {
        "/denoise" => {
            let z = field(body, "z_t")?;
            let cond = field(body, "cond")?;
            if cond.rank() != 2 {
                return Err(error(
                    422,
                    "shape",
                    format!("cond must be [K, D], got {:?}", cond.shape()),
                ));
            }
            let t = body["t"]
                .as_u64()
                .ok_or_else(|| error(400, "malformed", "`t` must be a non-negative integer"))?
                as usize;
            if t >= config.sched.steps() {
                return Err(error(422, "timestep", format!("t = {t} outside the schedule")));
            }
            let mu = Tensor::full(z.shape().to_vec(), config.mean);
            let eps = analytic_gaussian_eps(&z, t, &mu, config.sigma0, &config.sched)
                .map_err(|e| error(500, "internal", e.to_string()))?;
            Ok(ok(json!({ "eps": TensorPayload::from_tensor(&eps) })))
        }
        "/encode" => {
            let x = field(body, "image")?;
            let f = config.factor;
            match *x.shape() {
                [h, w, 3] if h % f == 0 && w % f == 0 && h > 0 && w > 0 => {
                    let (lh, lw) = (h / f, w / f);
                    let mut z = vec![0.0; lh * lw * 3];
                    for y in 0..h {
                        for xx in 0..w {
                            for c in 0..3 {
                                z[((y / f) * lw + xx / f) * 3 + c] += x.data()[(y * w + xx) * 3 + c];
                            }
                        }
                    }
                    let norm = 1.0 / (f * f) as f64;
                    let z = Tensor::new(vec![lh, lw, 3], z.into_iter().map(|v| v * norm).collect())
                        .map_err(|e| error(500, "internal", e.to_string()))?;
                    Ok(ok(json!({ "latent": TensorPayload::from_tensor(&z) })))
                }
                _ => Err(error(
                    422,
                    "shape",
                    format!("image {:?} must be [H, W, 3] with sides divisible by {f}", x.shape()),
                )),
            }
        }
        "/decode" => {
            let z = field(body, "latent")?;
            let f = config.factor;
            match *z.shape() {
                [lh, lw, 3] => {
                    let (h, w) = (lh * f, lw * f);
                    let mut img = Vec::with_capacity(h * w * 3);
                    for y in 0..h {
                        for x in 0..w {
                            let i = ((y / f) * lw + x / f) * 3;
                            img.extend_from_slice(&z.data()[i..i + 3]);
                        }
                    }
                    let img = Tensor::new(vec![h, w, 3], img).map_err(|e| error(500, "internal", e.to_string()))?;
                    Ok(ok(json!({ "image": TensorPayload::from_tensor(&img) })))
                }
                _ => Err(error(422, "shape", format!("latent {:?} must be [h, w, 3]", z.shape()))),
            }
        }
        "/text_embed" => {
            let text = body["text"]
                .as_str()
                .ok_or_else(|| error(400, "malformed", "`text` must be a string"))?;
            let digest = Sha256::digest(text.as_bytes());
            let mut seed = [0u8; 32];
            seed.copy_from_slice(&digest);
            let mut rng = ChaCha8Rng::from_seed(seed);
            let v: Vec<f64> = (0..config.embed_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e = Tensor::new(vec![1, config.embed_dim], v).map_err(|e| error(500, "internal", e.to_string()))?;
            Ok(ok(json!({ "embedding": TensorPayload::from_tensor(&e) })))
        }
        "/depth" => {
            let x = field(body, "image")?;
            match *x.shape() {
                [h, w, 3] => {
                    // brighter is nearer
                    let d: Vec<f64> = x.data().chunks(3).map(|p| 2.0 - (p[0] + p[1] + p[2]) / 3.0).collect();
                    let d = Tensor::new(vec![h, w], d).map_err(|e| error(500, "internal", e.to_string()))?;
                    Ok(ok(json!({ "depth": TensorPayload::from_tensor(&d) })))
                }
                _ => Err(error(422, "shape", format!("image {:?} must be [H, W, 3]", x.shape()))),
            }
        }
        "/caption" => Err(error(500, "unsupported", "no captioner")),
        other => Err(error(404, "not_found", format!("no endpoint {other}"))),
    }
}
