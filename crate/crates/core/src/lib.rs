pub mod autodiff;
pub mod bridge;
pub mod container;
pub mod error;
pub mod field;
pub mod objective;
pub mod prior;
pub mod raster;
pub mod render;
pub mod toolkit;
pub mod trainer;

pub use error::{Error, Result};
