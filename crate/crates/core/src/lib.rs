//! Test-time search over an analytic conditional diffusion model with
//! prompt-embedding perturbation and frequency-shaped SDE noise.

pub mod rng;

pub mod analysis;
pub mod config;
pub mod embedding;
pub mod error;
pub mod grid;
pub mod guidance;
pub mod io;
pub mod lab;
pub mod noiseshape;
pub mod reward;
pub mod sampler;
pub mod schedule;
pub mod search;
pub mod tep;
pub mod toymodel;

pub use config::{resolve_config, validate_config, ExperimentConfig};
pub use embedding::{Branch, ConditionPair, PromptEmbedding};
pub use error::{Error, Result, Violation};
pub use grid::LatentGrid;
pub use lab::Lab;
pub use rng::{derive_stream, Label, RngStream};
pub use schedule::{schedule_eval, ScheduleKind, ScheduleSpec};
