//! Scenario configuration, synthetic data generation, experiment driver,
//! metrics and file I/O.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod hungarian;
pub mod metrics;
pub mod runner;

pub use bounds::run_bounds;
pub use config::{ScenarioConfig, Variant};
pub use dataset::{generate_dataset, RunTruth};
pub use hungarian::hungarian_assign;
pub use metrics::{compute_metrics, MetricTable};
pub use runner::{run_slam, RunRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Prior(#[from] crate::priors::PriorError),
}
