//! Conditional normalizing-flow denoiser for hyperspectral cubes.

pub mod checkpoint;
pub mod config;
pub mod cube;
pub mod data;
pub mod degradation;
pub mod encoder;
pub mod error;
pub mod flow;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod model_config;
pub mod objective;
pub mod params;
pub mod rng;
pub mod train;
pub mod verify;

pub use config::RunConfig;
pub use cube::HsiCube;
pub use error::{HidError, Result};
pub use layers::Init;
pub use model::{ConditionStack, HidFlowNet};
pub use model_config::{EncoderConfig, FlowConfig, ModelConfig};
pub use params::{Bound, ParamId, ParameterStore};
