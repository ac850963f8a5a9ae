pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod interaction;
pub mod io;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod params;
pub mod sampler;
pub mod tqm;
pub mod trainer;
pub mod tsq;
pub mod vqm;

pub use error::{Result, TsqError};
