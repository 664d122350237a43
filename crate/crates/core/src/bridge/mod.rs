//! Client side of the model-server protocol: JSON over HTTP with base64
//! `f32` tensors. Also an in-process mock server for tests.

mod client;
mod conformance;
mod mock;
mod payload;
mod remote;

pub use client::{BridgeClient, ClientConfig};
pub use conformance::{check_endpoint, CheckResult};
pub use mock::{MockBridge, MockConfig};
pub use payload::{PayloadError, TensorPayload};
pub use remote::{RemoteCodec, RemoteDenoiser};

pub const PROTO_HEADER: &str = "X-NeRDi-Proto";
pub const PROTO_VERSION: &str = "1";
/// Environment variable naming the bridge endpoint.
pub const URL_ENV: &str = "NERDI_BRIDGE_URL";
