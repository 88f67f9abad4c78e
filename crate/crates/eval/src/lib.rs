//! Trajectory metrics: sequence similarity (BLEU, METEOR), route-distribution
//! divergence, prediction scores, correct-path probabilities, dataset
//! complexity, and aggregate region statistics. Everything here is a pure
//! function over token sequences; trajectories and cell sequences are
//! converted to flat token ids upstream.

#![forbid(unsafe_code)]

mod cpp;
mod dist;
mod ngram;
mod region;
mod report;
mod scores;

pub use cpp::{ccdf, cpp_k, Ccdf, CppResult};
pub use dist::{complexity_sensitivity, route_jsd, transition_entropy};
pub use ngram::{bleu, bleu_flagged, meteor};
pub use region::{region_metrics, RegionReport};
pub use report::{mean_std, svg_line_chart, EvalReport, ModelScores};
pub use scores::{max_score_eval, prediction_score_eval, Metric, PredictionScores};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A trajectory reduced to metric space: interior tokens (links or cells,
/// End stripped) plus whether the source reached a proper end.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TokenSeq {
    pub toks: Vec<usize>,
    pub complete: bool,
}

impl TokenSeq {
    pub fn complete(toks: Vec<usize>) -> TokenSeq {
        TokenSeq {
            toks,
            complete: true,
        }
    }
}

/// Next-token view of a trajectory model. `prefix` holds interior tokens in
/// order (empty = at Start); the result is a probability vector over all
/// tokens with the end token last, summing to 1 with masked entries exactly
/// zero.
pub trait NextTokenModel {
    /// The end-of-sequence token id; valid interior tokens are 0..end_token.
    fn end_token(&self) -> usize;
    fn prefix_dist(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}
