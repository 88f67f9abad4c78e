//! Synthetic expert-trajectory generator: demand patterns over a grid
//! network, route-choice models, seeded per-vehicle sampling, train/test
//! splitting, and vehicle-accumulation traffic states.

#![forbid(unsafe_code)]

pub mod choice;
pub mod generate;
pub mod io;
pub mod pattern;
pub mod scenario;
pub mod traffic;

pub use choice::{route_choice_probabilities, RouteChoiceModel};
pub use generate::{generate_dataset, generate_dataset_opts, split_train_test, GenOptions};
pub use io::{DatasetMeta, Trajectory, TrajectoryDataset};
pub use pattern::{DemandPattern, PatternKind};
pub use scenario::{build_flip_scenario, FlipScenario};
pub use traffic::{compute_accumulation, TrafficState};

#[derive(Debug, thiserror::Error)]
pub enum DemandError {
    #[error("bad demand input: {0}")]
    BadInput(String),
    #[error("network error: {0}")]
    Road(#[from] roadnet::RoadError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad dataset: {0}")]
    BadData(String),
}

pub type Result<T> = std::result::Result<T, DemandError>;
