//! Spatial tessellation: cluster trajectory points into cells of a chosen
//! radius and rewrite trajectories as cell sequences. Cells come from greedy
//! leader clustering, so the partition depends only on point order and R,
//! never on a random draw.

#![forbid(unsafe_code)]

mod partition;
mod sample;
mod sequence;

pub use partition::{cluster_points, CellPartition};
pub use sample::{link_polyline, network_points, trajectory_cell_sequence, trajectory_points};
pub use sequence::{
    read_cells_jsonl, to_cell_sequence, write_cells_jsonl, CellSequence, CellTok,
};

#[derive(Debug, thiserror::Error)]
pub enum TessError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("bad file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TessError>;
