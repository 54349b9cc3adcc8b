pub mod cluster;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod math;
pub mod proxy;
pub mod rerank;
pub mod sampler;
pub mod trainer;

pub use error::{IceError, Result};
