//! Directed-grid road network: links as observations, four turn actions, a
//! next-observation lookup with masks, route enumeration, and a validated
//! JSON file format.

#![forbid(unsafe_code)]

pub mod io;
pub mod network;
pub mod routes;

pub use network::{
    build_grid, Action, Heading, Link, LinkId, LinkKind, Obs, RoadNetwork, StepChoices,
};
pub use routes::enumerate_routes;

#[derive(Debug, thiserror::Error)]
pub enum RoadError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("malformed history: {0}")]
    BadHistory(String),
    #[error("bad network: {0}")]
    BadNetwork(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad network file: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RoadError>;
