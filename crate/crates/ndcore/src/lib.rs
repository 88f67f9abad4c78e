//! Dense f64 tensors with reverse-mode differentiation, recurrent cells,
//! Adam, a finite-difference gradient checker, and a flat binary parameter
//! container. Everything the learned trajectory models need, and nothing else.

#![forbid(unsafe_code)]

pub mod check;
pub mod optim;
pub mod params;
pub mod recurrent;
pub mod serialize;
pub mod tape;
pub mod tensor;

pub use check::gradient_check;
pub use optim::adam_step;
pub use params::ParameterSet;
pub use recurrent::{CellKind, RecurrentCellConfig, StackVars};
pub use serialize::{load_params, save_params};
pub use tape::{softmax_cross_entropy, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NdError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad parameter file: {0}")]
    BadFile(String),
}

pub type Result<T> = std::result::Result<T, NdError>;
