//! Generative models over tokenised trajectories: a Markov-chain baseline,
//! recurrent behaviour-cloning policies (with an optional traffic-state
//! attention variant), a max-entropy soft-value-iteration planner, and an
//! adversarial policy/value/discriminator bundle. All of them speak the
//! `eval::NextTokenModel` protocol so scoring code never cares which one it
//! is talking to.

#![forbid(unsafe_code)]

pub mod arnn;
pub mod gail;
pub mod maxent;
pub mod policy;
pub mod rollout;
pub mod serialize;
#[cfg(test)]
pub(crate) mod testutil;
pub mod tokens;
pub mod transition;

pub use arnn::{arnn_train, AttnConfig, AttnPolicy};
pub use gail::{
    gail_discriminator_objective, gail_discriminator_update, gail_policy_update, gail_train,
    gail_value_update, GailConfig, GailLog, TrajGailBundle,
};
pub use maxent::{maxent_train, MaxEntMode, MaxEntModel};
pub use policy::{rnn_train, PolicyConfig, SequencePolicy};
pub use rollout::{rollout_sample, AnyModel, RolloutReport};
pub use serialize::{load_model, save_model, LoadedModel, ModelManifest};
pub use tokens::{LinkSpace, TokenSpace};
pub use transition::{fit_transition, TransitionMatrix};

/// Errors shared by every model in the crate.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("sampling failed: {0}")]
    Sample(String),
    #[error("numeric error: {0}")]
    Numeric(#[from] ndcore::NdError),
    #[error("network error: {0}")]
    Net(#[from] roadnet::RoadError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dedicated RNG for slot `index` under a run seed. Mirrors the stream
/// scheme used by the data generator so per-item draws never depend on
/// batching or worker count.
pub(crate) fn stream(seed: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ index)
}

/// Draw an index from unnormalised nonnegative weights via a cumulative
/// scan. `None` when the total mass is not positive.
pub(crate) fn sample_index<R: rand::Rng>(rng: &mut R, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Some(i);
        }
    }
    weights.iter().rposition(|w| *w > 0.0)
}
