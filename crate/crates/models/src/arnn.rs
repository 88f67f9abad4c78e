//! Traffic-aware recurrent policy. A snapshot of network state (per
//! location, a short histogram over time bins) initializes the recurrent
//! stack through learned projections, and an additive attention over the
//! same snapshot feeds a context vector into every step's input.

use eval::TokenSeq;
use ndcore::recurrent::{bind_stack, stack_step, StackState};
use ndcore::{adam_step, ParameterSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::policy::{
    bind_heads, init_policy_params, step_targets, PolicyBatch, PolicyConfig, ADAM_BETAS, ADAM_EPS,
};
use crate::tokens::TokenSpace;
use crate::{stream, ModelError, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AttnConfig {
    pub base: PolicyConfig,
    /// Width of the additive attention scorer.
    pub att_dim: usize,
    /// Histogram length per location.
    pub state_dim: usize,
    /// Number of observed locations.
    pub n_loc: usize,
}

impl AttnConfig {
    pub fn new(base: PolicyConfig, n_loc: usize) -> AttnConfig {
        AttnConfig {
            base,
            att_dim: 16,
            state_dim: 10,
            n_loc,
        }
    }

    pub fn flat_len(&self) -> usize {
        self.n_loc * self.state_dim
    }
}

pub struct AttnPolicy {
    pub cfg: AttnConfig,
    pub space: TokenSpace,
    pub params: ParameterSet,
}

/// One trajectory paired with the traffic snapshot observed at its
/// departure, flattened to `n_loc * state_dim` values.
pub type StatePair = (TokenSeq, Vec<f64>);

impl AttnPolicy {
    pub fn new(space: TokenSpace, cfg: AttnConfig, seed: u64) -> Result<AttnPolicy> {
        if cfg.n_loc == 0 || cfg.state_dim == 0 || cfg.att_dim == 0 {
            return Err(ModelError::BadInput(
                "attention sizes must all be >= 1".into(),
            ));
        }
        let mut ps = ParameterSet::new();
        let mut rng = stream(seed, 0);
        let input = cfg.base.embed + cfg.state_dim;
        init_policy_params(&mut ps, &cfg.base, &space, input, &mut rng)?;
        let flat = cfg.flat_len();
        let init_bound = 1.0 / (flat as f64).sqrt();
        for l in 0..cfg.base.layers {
            ps.insert_uniform(
                &format!("init_w.l{l}"),
                &[flat, cfg.base.hidden],
                init_bound,
                &mut rng,
            )?;
            ps.insert(&format!("init_b.l{l}"), Tensor::zeros(&[1, cfg.base.hidden]))?;
        }
        ps.insert_uniform(
            "att_w1",
            &[cfg.state_dim, cfg.att_dim],
            1.0 / (cfg.state_dim as f64).sqrt(),
            &mut rng,
        )?;
        ps.insert_uniform(
            "att_w2",
            &[cfg.base.hidden, cfg.att_dim],
            1.0 / (cfg.base.hidden as f64).sqrt(),
            &mut rng,
        )?;
        ps.insert("att_b", Tensor::zeros(&[1, cfg.att_dim]))?;
        ps.insert_uniform(
            "att_v",
            &[cfg.att_dim, 1],
            1.0 / (cfg.att_dim as f64).sqrt(),
            &mut rng,
        )?;
        Ok(AttnPolicy { cfg, space, params: ps })
    }

    /// Teacher-forced mean cross-entropy per step over `pairs`, no updates.
    pub fn dataset_ce(&self, pairs: &[StatePair]) -> Result<f64> {
        let batches = make_state_batches(&self.space, &self.cfg, pairs)?;
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        let mut steps = 0.0;
        for b in &batches {
            let (ce, n, _) = arnn_ce_terms(&mut tape, &self.params, &self.cfg, &self.space, b, false)?;
            steps += n as f64;
            total = Some(match total {
                None => ce,
                Some(t) => tape.add(t, ce),
            });
        }
        let total = total.expect("batches nonempty");
        Ok(tape.value(total).item() / steps)
    }

    /// Per-step attention weight rows for one trajectory; each row sums
    /// to one over the observed locations.
    pub fn attention_alphas(&self, toks: &[usize], state: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pair = (TokenSeq::complete(toks.to_vec()), state.to_vec());
        let batches = make_state_batches(&self.space, &self.cfg, std::slice::from_ref(&pair))?;
        let mut tape = Tape::new();
        let (_, _, alphas) =
            arnn_ce_terms(&mut tape, &self.params, &self.cfg, &self.space, &batches[0], true)?;
        Ok(alphas
            .into_iter()
            .map(|v| tape.value(v).row(0).to_vec())
            .collect())
    }
}

struct StateBatch {
    toks: Vec<Vec<usize>>,
    /// Flattened snapshots, one row of `flat_len` per trajectory.
    states: Vec<Vec<f64>>,
}

fn make_state_batches(
    space: &TokenSpace,
    cfg: &AttnConfig,
    pairs: &[StatePair],
) -> Result<Vec<StateBatch>> {
    if pairs.is_empty() {
        return Err(ModelError::BadInput("no trajectories given".into()));
    }
    let seqs: Vec<TokenSeq> = pairs.iter().map(|(s, _)| s.clone()).collect();
    space.check_seqs(&seqs)?;
    let flat = cfg.flat_len();
    for (i, (s, st)) in pairs.iter().enumerate() {
        if !s.complete {
            return Err(ModelError::BadInput(format!(
                "trajectory {i} is incomplete"
            )));
        }
        if st.len() != flat {
            return Err(ModelError::BadInput(format!(
                "trajectory {i} carries {} state values, expected {flat}",
                st.len()
            )));
        }
        if st.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::BadInput(format!(
                "trajectory {i} carries a non-finite state value"
            )));
        }
    }
    let mut by_len: std::collections::BTreeMap<usize, StateBatch> = std::collections::BTreeMap::new();
    for (s, st) in pairs {
        let e = by_len.entry(s.toks.len()).or_insert_with(|| StateBatch {
            toks: Vec::new(),
            states: Vec::new(),
        });
        e.toks.push(s.toks.clone());
        e.states.push(st.clone());
    }
    Ok(by_len.into_values().collect())
}

/// Builds the teacher-forced loss of one batch. Returns the summed
/// cross-entropy, the number of prediction rows, and (when asked) the
/// per-step attention weight vars.
fn arnn_ce_terms(
    tape: &mut Tape,
    ps: &ParameterSet,
    cfg: &AttnConfig,
    space: &TokenSpace,
    batch: &StateBatch,
    want_alphas: bool,
) -> Result<(Var, usize, Vec<Var>)> {
    let b = batch.toks.len();
    let m = batch.toks[0].len();
    let n = cfg.n_loc;
    let s_dim = cfg.state_dim;
    let steps = m + 1;
    let rnn_cfg = cfg.base.stack(cfg.base.embed + s_dim)?;
    let sv = bind_stack(tape, ps, &rnn_cfg, "rnn");
    let emb = tape.param(ps, "emb");
    let heads = bind_heads(tape, ps, space);
    let att_w1 = tape.param(ps, "att_w1");
    let att_w2 = tape.param(ps, "att_w2");
    let att_b = tape.param(ps, "att_b");
    let att_v = tape.param(ps, "att_v");

    // Snapshot rows: b * n rows of one location histogram each.
    let mut loc_rows = Vec::with_capacity(b * n * s_dim);
    for st in &batch.states {
        loc_rows.extend_from_slice(st);
    }
    let state_flat = tape.constant(Tensor::from_vec(&[b * n, s_dim], loc_rows.clone())?);
    let whole_flat = tape.constant(Tensor::from_vec(&[b, n * s_dim], loc_rows)?);
    let proj1 = tape.matmul(state_flat, att_w1);
    let rep_idx: Vec<usize> = (0..b * n).map(|r| r / n).collect();
    let ones_row = tape.constant(Tensor::filled(&[1, s_dim], 1.0));

    // Learned initial hidden state per layer; LSTM cells start at zero.
    let mut h0 = Vec::with_capacity(cfg.base.layers);
    for l in 0..cfg.base.layers {
        let iw = tape.param(ps, &format!("init_w.l{l}"));
        let ib = tape.param(ps, &format!("init_b.l{l}"));
        let lin = tape.matmul(whole_flat, iw);
        let lin_b = tape.add_row(lin, ib);
        h0.push(tape.tanh(lin_b));
    }
    let zeros = tape.constant(Tensor::zeros(&[b, cfg.base.hidden]));
    let mut state = StackState {
        h: h0,
        c: vec![zeros; cfg.base.layers],
    };

    let pb = PolicyBatch {
        toks: batch.toks.clone(),
        complete: true,
        step_weights: None,
    };
    let mut ce_sum: Option<Var> = None;
    let mut alphas = Vec::new();
    for i in 0..steps {
        // Additive attention against the previous top-layer state.
        let s_prev = state.h[cfg.base.layers - 1];
        let proj2 = tape.matmul(s_prev, att_w2);
        let proj2_rep = tape.gather_rows(proj2, &rep_idx);
        let lin = tape.add(proj1, proj2_rep);
        let lin_b = tape.add_row(lin, att_b);
        let act = tape.tanh(lin_b);
        let score = tape.matmul(act, att_v);
        let score_rows = tape.reshape(score, &[b, n]);
        let log_alpha = tape.log_softmax_rows(score_rows, None);
        let alpha = tape.exp(log_alpha);
        if want_alphas {
            alphas.push(alpha);
        }
        let alpha_col = tape.reshape(alpha, &[b * n, 1]);
        let alpha_mat = tape.matmul(alpha_col, ones_row);
        let weighted = tape.mul(alpha_mat, state_flat);
        let context = tape.sum_group_rows(weighted, n);

        let idx: Vec<usize> = if i == 0 {
            vec![0; b]
        } else {
            batch.toks.iter().map(|t| t[i - 1] + 1).collect()
        };
        let x_tok = tape.gather_rows(emb, &idx);
        let x = tape.concat_cols(x_tok, context);
        let h = stack_step(tape, &sv, &mut state, x)?;
        let (logits, labels, mask) = step_targets(tape, space, &heads, h, &pb, i)?;
        let xent = tape.xent_rows(logits, &labels, mask.as_deref())?;
        let s = tape.sum_all(xent);
        ce_sum = Some(match ce_sum {
            None => s,
            Some(t) => tape.add(t, s),
        });
    }
    Ok((ce_sum.expect("steps >= 1"), b * steps, alphas))
}

/// Teacher-forced training over trajectory-snapshot pairs; one full-batch
/// Adam step per epoch. Returns the policy and its epoch loss curve.
pub fn arnn_train(
    pairs: &[StatePair],
    space: TokenSpace,
    cfg: AttnConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(AttnPolicy, Vec<f64>)> {
    if epochs == 0 {
        return Err(ModelError::BadInput("epochs must be >= 1".into()));
    }
    if !(lr > 0.0) {
        return Err(ModelError::BadInput("learning rate must be positive".into()));
    }
    let mut policy = AttnPolicy::new(space, cfg, seed)?;
    let batches = make_state_batches(&policy.space, &policy.cfg, pairs)?;
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let loss =
            state_dataset_loss_step(&mut policy.params, &policy.cfg, &policy.space, &batches)?;
        if !loss.is_finite() {
            return Err(ModelError::Train(format!(
                "loss became non-finite at epoch {epoch}"
            )));
        }
        adam_step(&mut policy.params, lr, ADAM_BETAS, ADAM_EPS)?;
        losses.push(loss);
    }
    Ok((policy, losses))
}

/// Builds the full-batch objective over `batches`, accumulates its
/// gradients into `ps`, and returns the loss value.
fn state_dataset_loss_step(
    ps: &mut ParameterSet,
    cfg: &AttnConfig,
    space: &TokenSpace,
    batches: &[StateBatch],
) -> Result<f64> {
    let total_steps: f64 = batches
        .iter()
        .map(|b| (b.toks.len() * (b.toks[0].len() + 1)) as f64)
        .sum();
    let mut tape = Tape::new();
    let mut total: Option<Var> = None;
    for b in batches {
        let (ce, _, _) = arnn_ce_terms(&mut tape, ps, cfg, space, b, false)?;
        total = Some(match total {
            None => ce,
            Some(t) => tape.add(t, ce),
        });
    }
    let total = total.expect("nonempty data");
    let loss_var = tape.scale(total, 1.0 / total_steps);
    let loss = tape.value(loss_var).item();
    let grads = tape.backward(loss_var);
    ps.accumulate(&grads)?;
    Ok(loss)
}

/// One evaluation of the attention objective with gradients left in `ps`:
/// exactly what a training epoch steps on. Meant for gradient
/// verification and diagnostics.
pub fn arnn_loss_with_grads(
    ps: &mut ParameterSet,
    cfg: &AttnConfig,
    space: &TokenSpace,
    pairs: &[StatePair],
) -> Result<f64> {
    let batches = make_state_batches(space, cfg, pairs)?;
    state_dataset_loss_step(ps, cfg, space, &batches)
}
