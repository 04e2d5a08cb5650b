//! Frequency-gated attention networks built on a small reverse-mode tensor
//! engine, with the training, evaluation, and Grad-CAM tooling around them.

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod report;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelSpec};
pub use tensor::{ParamStore, Shape, Tape, Tensor, Var, Variable};
