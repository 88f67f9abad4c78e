//! Autoregressive sampling for every model kind. Each trajectory index
//! owns a dedicated RNG stream, so results are identical no matter how the
//! batch is partitioned across calls or workers.

use eval::TokenSeq;

use crate::gail::TrajGailBundle;
use crate::maxent::MaxEntModel;
use crate::policy::{policy_step_dists, SequencePolicy, StepperState};
use crate::tokens::TokenSpace;
use crate::transition::TransitionMatrix;
use crate::{sample_index, stream, ModelError, Result};

pub enum AnyModel<'a> {
    Transition(&'a TransitionMatrix),
    Policy(&'a SequencePolicy),
    MaxEnt(&'a MaxEntModel),
    Gail(&'a TrajGailBundle),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RolloutReport {
    pub seqs: Vec<TokenSeq>,
    /// How many sequences hit `max_len` before terminating.
    pub incomplete: usize,
}

/// Sample `n` trajectories. A sequence that reaches `max_len` interior
/// tokens without terminating is kept but marked incomplete.
pub fn rollout_sample(model: &AnyModel, n: usize, max_len: usize, seed: u64) -> Result<RolloutReport> {
    rollout_slice(model, 0, n, max_len, seed)
}

/// The `[start, start + n)` index window of the batch `rollout_sample`
/// draws: concatenating contiguous windows in index order reproduces the
/// full batch byte for byte, so callers may fan windows out to workers.
pub fn rollout_slice(
    model: &AnyModel,
    start: usize,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<RolloutReport> {
    if n == 0 {
        return Err(ModelError::BadInput("n must be >= 1".into()));
    }
    if max_len < 2 {
        return Err(ModelError::BadInput("max_len must be >= 2".into()));
    }
    let seqs = match model {
        AnyModel::Transition(tm) => rollout_rowwise(
            start,
            n,
            max_len,
            seed,
            tm.end_token(),
            |prefix_last| match prefix_last {
                None => tm.start_dist(),
                Some((_, t)) => tm.row_dist(t),
            },
        )?,
        AnyModel::MaxEnt(me) => rollout_rowwise(
            start,
            n,
            max_len,
            seed,
            me.space.end_token(),
            |prefix_last| match prefix_last {
                None => {
                    let mut d = vec![0.0; me.space.end_token() + 1];
                    for (l, p) in me.start_dist().iter().enumerate() {
                        d[l] = *p;
                    }
                    Ok(d)
                }
                Some((pos, t)) => {
                    let row = me.policy_row(pos - 1, t);
                    let mut d = vec![0.0; me.space.end_token() + 1];
                    for (a, s) in me.space.succ(t).iter().enumerate() {
                        if let Some(next) = *s {
                            d[next] += row[a];
                        }
                    }
                    Ok(d)
                }
            },
        )?,
        AnyModel::Policy(p) => {
            sample_policy_rollouts(&p.params, &p.cfg, &p.space, start, n, max_len, seed)?
        }
        AnyModel::Gail(g) => {
            sample_policy_rollouts(&g.policy, &g.cfg.policy, &g.space, start, n, max_len, seed)?
        }
    };
    let incomplete = seqs.iter().filter(|s| !s.complete).count();
    Ok(RolloutReport { seqs, incomplete })
}

/// Sampling loop for models whose next-token distribution is a cheap
/// per-row lookup. `dist(None)` is the start step; `dist(Some((pos, t)))`
/// conditions on current token `t` at interior position `pos - 1`.
fn rollout_rowwise<F>(
    start: usize,
    n: usize,
    max_len: usize,
    seed: u64,
    end: usize,
    dist: F,
) -> Result<Vec<TokenSeq>>
where
    F: Fn(Option<(usize, usize)>) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(n);
    for i in start..start + n {
        let mut rng = stream(seed, i as u64);
        let mut toks: Vec<usize> = Vec::new();
        let mut complete = false;
        loop {
            let key = toks.last().map(|t| (toks.len(), *t));
            let d = dist(key)?;
            let Some(tok) = sample_index(&mut rng, &d) else {
                return Err(ModelError::Sample(format!(
                    "zero-mass distribution at position {} of rollout {i}",
                    toks.len()
                )));
            };
            if tok == end {
                complete = true;
                break;
            }
            toks.push(tok);
            if toks.len() == max_len {
                break;
            }
        }
        out.push(TokenSeq { toks, complete });
    }
    Ok(out)
}

/// Batched sampling from a recurrent policy parameter set. Rows that
/// finish drop out of the batch; the recurrent state tensors are carried
/// between per-step tapes.
pub(crate) fn sample_policy_rollouts(
    ps: &ndcore::ParameterSet,
    cfg: &crate::policy::PolicyConfig,
    space: &TokenSpace,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<TokenSeq>> {
    let end = space.end_token();
    let mut seqs: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut complete = vec![false; n];
    let mut rngs: Vec<rand_chacha::ChaCha8Rng> =
        (0..n).map(|i| stream(seed, i as u64)).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut state = StepperState::zeros(cfg.layers, n, cfg.hidden);
    let mut last: Vec<Option<usize>> = vec![None; n];
    while !active.is_empty() {
        let step_last: Vec<Option<usize>> = active.iter().map(|id| last[*id]).collect();
        let dists = policy_step_dists(ps, cfg, space, &mut state, &step_last)?;
        let mut keep_rows: Vec<usize> = Vec::with_capacity(active.len());
        let mut next_active: Vec<usize> = Vec::with_capacity(active.len());
        for (row, id) in active.iter().enumerate() {
            let Some(tok) = sample_index(&mut rngs[*id], &dists[row]) else {
                return Err(ModelError::Sample(format!(
                    "zero-mass distribution at position {} of rollout {id}",
                    seqs[*id].len()
                )));
            };
            if tok == end {
                complete[*id] = true;
                continue;
            }
            seqs[*id].push(tok);
            last[*id] = Some(tok);
            if seqs[*id].len() < max_len {
                keep_rows.push(row);
                next_active.push(*id);
            }
        }
        state.keep_rows(&keep_rows);
        active = next_active;
    }
    Ok(seqs
        .into_iter()
        .zip(complete)
        .map(|(toks, complete)| TokenSeq { toks, complete })
        .collect())
}
