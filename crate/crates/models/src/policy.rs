//! Recurrent next-token policy trained by teacher forcing. One embedding
//! table feeds a GRU or LSTM stack; at link granularity two linear heads
//! sit on top (entry choice for the first step, turn choice afterwards),
//! at cell granularity a single head covers the whole alphabet.

use eval::{NextTokenModel, TokenSeq};
use ndcore::recurrent::{bind_stack, init_stack, stack_step, zero_state, StackState};
use ndcore::{adam_step, CellKind, ParameterSet, RecurrentCellConfig, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::tokens::TokenSpace;
use crate::{stream, ModelError, Result};

pub(crate) const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub(crate) const ADAM_EPS: f64 = 1e-8;

pub(crate) mod cell_kind_str {
    use ndcore::CellKind;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(k: &CellKind, s: S) -> Result<S::Ok, S::Error> {
        match k {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CellKind, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(serde::de::Error::custom(format!(
                "unknown cell kind {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PolicyConfig {
    #[serde(with = "cell_kind_str")]
    pub kind: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub embed: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: CellKind::Lstm,
            hidden: 64,
            layers: 3,
            embed: 64,
        }
    }
}

impl PolicyConfig {
    pub(crate) fn stack(&self, input: usize) -> Result<RecurrentCellConfig> {
        Ok(RecurrentCellConfig::new(
            self.kind, input, self.hidden, self.layers,
        )?)
    }
}

#[derive(Debug)]
pub struct SequencePolicy {
    pub cfg: PolicyConfig,
    pub space: TokenSpace,
    pub params: ParameterSet,
}

/// Registers embedding, stack, and head parameters for a policy over
/// `space` into `ps`. Shared with the adversarial bundle, whose policy has
/// the same shape.
pub(crate) fn init_policy_params(
    ps: &mut ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    input: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    let interior = space.interior();
    let e_bound = 1.0 / (cfg.embed as f64).sqrt();
    ps.insert_uniform("emb", &[interior + 1, cfg.embed], e_bound, rng)?;
    init_stack(ps, &cfg.stack(input)?, "rnn", rng)?;
    let h_bound = 1.0 / (cfg.hidden as f64).sqrt();
    match space {
        TokenSpace::Link(ls) => {
            ps.insert_uniform("head_w", &[cfg.hidden, 4], h_bound, rng)?;
            ps.insert("head_b", Tensor::zeros(&[1, 4]))?;
            let e = ls.entries().len();
            ps.insert_uniform("entry_w", &[cfg.hidden, e], h_bound, rng)?;
            ps.insert("entry_b", Tensor::zeros(&[1, e]))?;
        }
        TokenSpace::Symbol { n } => {
            ps.insert_uniform("head_w", &[cfg.hidden, n + 1], h_bound, rng)?;
            ps.insert("head_b", Tensor::zeros(&[1, n + 1]))?;
        }
    }
    Ok(())
}

impl SequencePolicy {
    pub fn new(space: TokenSpace, cfg: PolicyConfig, seed: u64) -> Result<SequencePolicy> {
        if space.interior() == 0 {
            return Err(ModelError::BadInput("empty vocabulary".into()));
        }
        let mut ps = ParameterSet::new();
        let mut rng = stream(seed, 0);
        init_policy_params(&mut ps, &cfg, &space, cfg.embed, &mut rng)?;
        Ok(SequencePolicy { cfg, space, params: ps })
    }

    /// Teacher-forced mean cross-entropy per prediction step, no updates.
    pub fn dataset_ce(&self, seqs: &[TokenSeq]) -> Result<f64> {
        self.space.check_seqs(seqs)?;
        let batches = make_batches(seqs, false)?;
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        let mut steps = 0.0;
        for b in &batches {
            let terms = policy_ce_terms(
                &mut tape,
                &self.params,
                &self.cfg,
                &self.space,
                b,
                false,
            )?;
            steps += terms.weight_total;
            total = Some(match total {
                None => terms.ce_sum,
                Some(t) => tape.add(t, terms.ce_sum),
            });
        }
        let total = total.expect("batches nonempty");
        Ok(tape.value(total).item() / steps)
    }
}

/// One same-shape batch of sequences: uniform interior length, uniform
/// completeness, optional per-step per-row loss weights.
pub(crate) struct PolicyBatch {
    pub toks: Vec<Vec<usize>>,
    pub complete: bool,
    /// `step_weights[i][r]` scales row `r` of step `i`; `None` means 1.
    pub step_weights: Option<Vec<Vec<f64>>>,
}

impl PolicyBatch {
    pub fn steps(&self) -> usize {
        let m = self.toks[0].len();
        if self.complete {
            m + 1
        } else {
            m
        }
    }
}

pub(crate) struct CeTerms {
    /// Sum over rows and steps of weighted cross-entropy.
    pub ce_sum: Var,
    /// Sum over rows and steps of the (unweighted) policy entropy.
    pub ent_sum: Option<Var>,
    /// Sum of the weights applied (row count when unweighted).
    pub weight_total: f64,
}

/// Builds the teacher-forced loss terms of one batch on `tape`. Labels on
/// masked actions are contract errors surfaced by the tape.
pub(crate) fn policy_ce_terms(
    tape: &mut Tape,
    ps: &ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    batch: &PolicyBatch,
    collect_entropy: bool,
) -> Result<CeTerms> {
    let b = batch.toks.len();
    if b == 0 {
        return Err(ModelError::BadInput("empty batch".into()));
    }
    let m = batch.toks[0].len();
    if m == 0 {
        return Err(ModelError::BadInput("empty sequence in batch".into()));
    }
    if batch.toks.iter().any(|t| t.len() != m) {
        return Err(ModelError::BadInput("ragged batch".into()));
    }
    let steps = batch.steps();
    let rnn_cfg = cfg.stack(tape_input_width(cfg, ps))?;
    let sv = bind_stack(tape, ps, &rnn_cfg, "rnn");
    let emb = tape.param(ps, "emb");
    let heads = bind_heads(tape, ps, space);
    let mut state = zero_state(tape, &rnn_cfg, b);
    let mut ce_sum: Option<Var> = None;
    let mut ent_sum: Option<Var> = None;
    let mut weight_total = 0.0;
    for i in 0..steps {
        let idx: Vec<usize> = if i == 0 {
            vec![0; b]
        } else {
            batch.toks.iter().map(|t| t[i - 1] + 1).collect()
        };
        let x = tape.gather_rows(emb, &idx);
        let h = stack_step(tape, &sv, &mut state, x)?;
        let (logits, labels, mask) = step_targets(tape, space, &heads, h, batch, i)?;
        let xent = tape.xent_rows(logits, &labels, mask.as_deref())?;
        let weighted = match &batch.step_weights {
            Some(w) => {
                weight_total += w[i].iter().sum::<f64>();
                tape.weight_rows(xent, &w[i])
            }
            None => {
                weight_total += b as f64;
                xent
            }
        };
        let s = tape.sum_all(weighted);
        ce_sum = Some(match ce_sum {
            None => s,
            Some(t) => tape.add(t, s),
        });
        if collect_entropy {
            let ent = tape.entropy_rows(logits, mask.as_deref());
            let es = tape.sum_all(ent);
            ent_sum = Some(match ent_sum {
                None => es,
                Some(t) => tape.add(t, es),
            });
        }
    }
    Ok(CeTerms {
        ce_sum: ce_sum.expect("steps >= 1"),
        ent_sum,
        weight_total,
    })
}

fn tape_input_width(cfg: &PolicyConfig, ps: &ParameterSet) -> usize {
    // The stack's own U matrix is authoritative; the attention variant
    // widens the input beyond the embedding.
    ps.value("rnn.l0.u_z")
        .or_else(|| ps.value("rnn.l0.u_i"))
        .map(|t| t.shape()[0])
        .unwrap_or(cfg.embed)
}

pub(crate) struct HeadVars {
    pub w: Var,
    pub b: Var,
    pub entry: Option<(Var, Var)>,
}

pub(crate) fn bind_heads(tape: &mut Tape, ps: &ParameterSet, space: &TokenSpace) -> HeadVars {
    let w = tape.param(ps, "head_w");
    let b = tape.param(ps, "head_b");
    let entry = match space {
        TokenSpace::Link(_) => Some((tape.param(ps, "entry_w"), tape.param(ps, "entry_b"))),
        TokenSpace::Symbol { .. } => None,
    };
    HeadVars { w, b, entry }
}

/// Logits, labels, and flattened mask for step `i` of a batch.
pub(crate) fn step_targets(
    tape: &mut Tape,
    space: &TokenSpace,
    heads: &HeadVars,
    h: Var,
    batch: &PolicyBatch,
    i: usize,
) -> Result<(Var, Vec<usize>, Option<Vec<bool>>)> {
    let m = batch.toks[0].len();
    match space {
        TokenSpace::Link(ls) => {
            if i == 0 {
                let (ew, eb) = heads.entry.expect("link space has an entry head");
                let lin = tape.matmul(h, ew);
                let logits = tape.add_row(lin, eb);
                let labels = batch
                    .toks
                    .iter()
                    .map(|t| {
                        ls.entry_index(t[0]).ok_or_else(|| {
                            ModelError::BadInput(format!("token {} is not an entry", t[0]))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((logits, labels, None))
            } else {
                let lin = tape.matmul(h, heads.w);
                let logits = tape.add_row(lin, heads.b);
                let mut labels = Vec::with_capacity(batch.toks.len());
                let mut mask = Vec::with_capacity(batch.toks.len() * 4);
                for t in &batch.toks {
                    let from = t[i - 1];
                    let to = if i < m { t[i] } else { ls.end_token() };
                    let a = ls.action_to(from, to).ok_or_else(|| {
                        ModelError::BadInput(format!("no action moves {from} to {to}"))
                    })?;
                    labels.push(a);
                    mask.extend_from_slice(&ls.action_mask(from));
                }
                Ok((logits, labels, Some(mask)))
            }
        }
        TokenSpace::Symbol { n } => {
            let lin = tape.matmul(h, heads.w);
            let logits = tape.add_row(lin, heads.b);
            let labels: Vec<usize> = batch
                .toks
                .iter()
                .map(|t| if i < m { t[i] } else { *n })
                .collect();
            let mask = if i == 0 {
                let mut row = vec![true; *n + 1];
                row[*n] = false;
                Some(row.repeat(batch.toks.len()))
            } else {
                None
            };
            Ok((logits, labels, mask))
        }
    }
}

/// Deduplicates sequences into weighted batches bucketed by length and
/// completeness. Weights are occurrence counts, applied at every step.
pub(crate) fn make_batches(seqs: &[TokenSeq], require_complete: bool) -> Result<Vec<PolicyBatch>> {
    let mut counts: BTreeMap<(usize, bool, Vec<usize>), f64> = BTreeMap::new();
    for s in seqs {
        if require_complete && !s.complete {
            return Err(ModelError::BadInput(
                "training data holds an incomplete trajectory".into(),
            ));
        }
        *counts
            .entry((s.toks.len(), s.complete, s.toks.clone()))
            .or_insert(0.0) += 1.0;
    }
    let mut buckets: BTreeMap<(usize, bool), (Vec<Vec<usize>>, Vec<f64>)> = BTreeMap::new();
    for ((len, complete, toks), c) in counts {
        let e = buckets.entry((len, complete)).or_default();
        e.0.push(toks);
        e.1.push(c);
    }
    Ok(buckets
        .into_iter()
        .map(|((_, complete), (toks, w))| {
            let steps = if complete {
                toks[0].len() + 1
            } else {
                toks[0].len()
            };
            PolicyBatch {
                toks,
                complete,
                step_weights: Some(vec![w; steps]),
            }
        })
        .collect())
}

/// Teacher-forced training; returns the trained policy with its per-epoch
/// mean loss curve. One full-batch Adam step per epoch.
pub fn rnn_train(
    seqs: &[TokenSeq],
    space: TokenSpace,
    cfg: PolicyConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(SequencePolicy, Vec<f64>)> {
    let mut policy = SequencePolicy::new(space, cfg, seed)?;
    let losses = bc_train(&mut policy, seqs, epochs, lr)?;
    Ok((policy, losses))
}

pub fn bc_train(
    policy: &mut SequencePolicy,
    seqs: &[TokenSeq],
    epochs: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if epochs == 0 {
        return Err(ModelError::BadInput("epochs must be >= 1".into()));
    }
    if !(lr > 0.0) {
        return Err(ModelError::BadInput("learning rate must be positive".into()));
    }
    policy.space.check_seqs(seqs)?;
    let batches = make_batches(seqs, true)?;
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let loss = dataset_loss_step(&mut policy.params, &policy.cfg, &policy.space, &batches)?;
        if !loss.is_finite() {
            return Err(ModelError::Train(format!(
                "loss became non-finite at epoch {epoch}"
            )));
        }
        adam_step(&mut policy.params, lr, ADAM_BETAS, ADAM_EPS)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Builds the full-batch objective over `batches`, accumulates its
/// gradients into `ps`, and returns the loss value.
fn dataset_loss_step(
    ps: &mut ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    batches: &[PolicyBatch],
) -> Result<f64> {
    let total_steps: f64 = batches
        .iter()
        .map(|b| {
            b.step_weights.as_ref().expect("weighted")[0].iter().sum::<f64>() * b.steps() as f64
        })
        .sum();
    let mut tape = Tape::new();
    let mut total: Option<Var> = None;
    for b in batches {
        let terms = policy_ce_terms(&mut tape, ps, cfg, space, b, false)?;
        total = Some(match total {
            None => terms.ce_sum,
            Some(t) => tape.add(t, terms.ce_sum),
        });
    }
    let total = total.expect("nonempty data");
    let loss_var = tape.scale(total, 1.0 / total_steps);
    let loss = tape.value(loss_var).item();
    let grads = tape.backward(loss_var);
    ps.accumulate(&grads)?;
    Ok(loss)
}

/// One evaluation of the behaviour-cloning objective with gradients left
/// in `ps`: exactly what a training epoch steps on. Meant for gradient
/// verification and diagnostics.
pub fn bc_loss_with_grads(
    ps: &mut ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    seqs: &[TokenSeq],
) -> Result<f64> {
    space.check_seqs(seqs)?;
    let batches = make_batches(seqs, true)?;
    dataset_loss_step(ps, cfg, space, &batches)
}

/// Incremental batched forward state for sampling: plain tensors carried
/// between per-step tapes.
pub(crate) struct StepperState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl StepperState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> StepperState {
        StepperState {
            h: (0..layers).map(|_| Tensor::zeros(&[batch, hidden])).collect(),
            c: (0..layers).map(|_| Tensor::zeros(&[batch, hidden])).collect(),
        }
    }

    pub fn keep_rows(&mut self, keep: &[usize]) {
        let take = |t: &Tensor| {
            let cols = t.cols();
            let mut vals = Vec::with_capacity(keep.len() * cols);
            for &r in keep {
                vals.extend_from_slice(t.row(r));
            }
            Tensor::from_vec(&[keep.len(), cols], vals).expect("row subset")
        };
        self.h = self.h.iter().map(take).collect();
        self.c = self.c.iter().map(take).collect();
    }
}

/// Masked softmax over a logits row, restricted to `allow`; entries outside
/// `allow` are exactly zero.
pub(crate) fn masked_softmax_row(logits: &[f64], allow: &[bool]) -> Vec<f64> {
    let mx = logits
        .iter()
        .zip(allow)
        .filter(|(_, a)| **a)
        .map(|(z, _)| *z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; logits.len()];
    if mx == f64::NEG_INFINITY {
        return out;
    }
    let mut denom = 0.0;
    for (j, (z, a)) in logits.iter().zip(allow).enumerate() {
        if *a {
            let e = (z - mx).exp();
            out[j] = e;
            denom += e;
        }
    }
    for v in &mut out {
        *v /= denom;
    }
    out
}

/// Advance one step for every row and return per-row next-token
/// distributions over `0..=end`. `last[r]` is the row's current token,
/// `None` for the start step. State tensors update in place.
pub(crate) fn policy_step_dists(
    ps: &ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    state: &mut StepperState,
    last: &[Option<usize>],
) -> Result<Vec<Vec<f64>>> {
    let b = last.len();
    if b == 0 {
        return Err(ModelError::BadInput("empty step batch".into()));
    }
    let mut tape = Tape::new();
    let rnn_cfg = cfg.stack(tape_input_width(cfg, ps))?;
    let sv = bind_stack(&mut tape, ps, &rnn_cfg, "rnn");
    let emb = tape.param(ps, "emb");
    let heads = bind_heads(&mut tape, ps, space);
    let mut st = StackState {
        h: state.h.iter().map(|t| tape.constant(t.clone())).collect(),
        c: state.c.iter().map(|t| tape.constant(t.clone())).collect(),
    };
    let idx: Vec<usize> = last.iter().map(|l| l.map_or(0, |t| t + 1)).collect();
    let x = tape.gather_rows(emb, &idx);
    let h = stack_step(&mut tape, &sv, &mut st, x)?;
    for (l, hv) in st.h.iter().enumerate() {
        state.h[l] = tape.value(*hv).clone();
    }
    for (l, cv) in st.c.iter().enumerate() {
        state.c[l] = tape.value(*cv).clone();
    }
    let end = space.end_token();
    let mut dists = Vec::with_capacity(b);
    match space {
        TokenSpace::Link(ls) => {
            let lin = tape.matmul(h, heads.w);
            let act_logits = tape.add_row(lin, heads.b);
            let (ew, eb) = heads.entry.expect("link space has an entry head");
            let elin = tape.matmul(h, ew);
            let ent_logits = tape.add_row(elin, eb);
            let act_vals = tape.value(act_logits).clone();
            let ent_vals = tape.value(ent_logits).clone();
            for (r, l) in last.iter().enumerate() {
                let mut dist = vec![0.0; end + 1];
                match l {
                    None => {
                        let row = ent_vals.row(r);
                        let allow = vec![true; row.len()];
                        let p = masked_softmax_row(row, &allow);
                        for (k, tok) in ls.entries().iter().enumerate() {
                            dist[*tok] = p[k];
                        }
                    }
                    Some(t) => {
                        let mask = ls.action_mask(*t);
                        let p = masked_softmax_row(act_vals.row(r), &mask);
                        for (a, pa) in p.iter().enumerate() {
                            if let Some(to) = ls.succ(*t)[a] {
                                dist[to] += pa;
                            }
                        }
                    }
                }
                dists.push(dist);
            }
        }
        TokenSpace::Symbol { n } => {
            let lin = tape.matmul(h, heads.w);
            let logits = tape.add_row(lin, heads.b);
            let vals = tape.value(logits).clone();
            for (r, l) in last.iter().enumerate() {
                let mut allow = vec![true; n + 1];
                if l.is_none() {
                    allow[*n] = false;
                }
                dists.push(masked_softmax_row(vals.row(r), &allow));
            }
        }
    }
    Ok(dists)
}

/// Next-token distribution after replaying `prefix` through the policy
/// parameters; shared by the plain policy and the adversarial bundle.
pub(crate) fn policy_prefix_dist(
    ps: &ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    prefix: &[usize],
) -> eval::Result<Vec<f64>> {
    let end = space.end_token();
    if let Some(&bad) = prefix.iter().find(|t| **t >= end) {
        return Err(eval::EvalError::Model(format!(
            "prefix token {bad} outside vocabulary of {end}"
        )));
    }
    let mut state = StepperState::zeros(cfg.layers, 1, cfg.hidden);
    let err = |e: ModelError| eval::EvalError::Model(e.to_string());
    let mut dist = policy_step_dists(ps, cfg, space, &mut state, &[None]).map_err(err)?;
    for &t in prefix {
        dist = policy_step_dists(ps, cfg, space, &mut state, &[Some(t)]).map_err(err)?;
    }
    Ok(dist.pop().expect("one row"))
}

impl NextTokenModel for SequencePolicy {
    fn end_token(&self) -> usize {
        self.space.end_token()
    }

    fn prefix_dist(&self, prefix: &[usize]) -> eval::Result<Vec<f64>> {
        policy_prefix_dist(&self.params, &self.cfg, &self.space, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::LinkSpace;

    fn tiny(kind: CellKind) -> PolicyConfig {
        PolicyConfig {
            kind,
            hidden: 16,
            layers: 1,
            embed: 8,
        }
    }

    fn grid_space() -> TokenSpace {
        let net = roadnet::build_grid(4, 4, 200.0).unwrap();
        TokenSpace::Link(LinkSpace::from_network(&net).unwrap())
    }

    /// Any complete route through the grid starting at the given entry.
    fn walk(ls: &LinkSpace, entry_pos: usize, prefer: usize) -> Vec<usize> {
        let mut tok = ls.entries()[entry_pos];
        let mut toks = vec![tok];
        loop {
            let s = ls.succ(tok);
            if s[3].is_some() {
                return toks;
            }
            let a = if s[prefer].is_some() {
                prefer
            } else {
                (0..3).find(|a| s[*a].is_some()).unwrap()
            };
            tok = s[a].unwrap();
            toks.push(tok);
        }
    }

    #[test]
    fn zeroed_parameters_give_uniform_cross_entropy() {
        let space = TokenSpace::Symbol { n: 6 };
        let mut pol = SequencePolicy::new(space, tiny(CellKind::Lstm), 7).unwrap();
        let names: Vec<String> = pol.params.names().map(String::from).collect();
        for n in names {
            for v in pol.params.value_mut(&n).unwrap().values_mut() {
                *v = 0.0;
            }
        }
        // Zero logits: first step is uniform over 6 symbols, later steps
        // over all 7 classes.
        let seqs = vec![TokenSeq::complete(vec![0, 1, 2])];
        let got = pol.dataset_ce(&seqs).unwrap();
        let want = ((6.0f64).ln() + 3.0 * (7.0f64).ln()) / 4.0;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn single_route_is_memorized() {
        let space = grid_space();
        let ls = space.as_link().unwrap().clone();
        let route = walk(&ls, 0, 0);
        let seqs = vec![TokenSeq::complete(route.clone()); 8];
        let (pol, losses) =
            rnn_train(&seqs, space, tiny(CellKind::Gru), 250, 0.05, 11).unwrap();
        assert!(losses.last().unwrap() < &0.01);
        // Every step of the route gets probability above 0.99.
        let mut prefix: Vec<usize> = Vec::new();
        for &t in &route {
            let d = pol.prefix_dist(&prefix).unwrap();
            assert!(d[t] > 0.99, "p({t}) = {} at len {}", d[t], prefix.len());
            prefix.push(t);
        }
        let d = pol.prefix_dist(&prefix).unwrap();
        assert!(d[ls.end_token()] > 0.99);
    }

    #[test]
    fn balanced_branch_probability_is_recovered() {
        // Two routes from one entry that differ in their action somewhere.
        let space = grid_space();
        let ls = space.as_link().unwrap().clone();
        let ra = walk(&ls, 2, 0);
        let rb = walk(&ls, 2, 1);
        assert_ne!(ra, rb);
        let mut seqs = vec![TokenSeq::complete(ra.clone()); 6];
        seqs.extend(vec![TokenSeq::complete(rb.clone()); 6]);
        let (pol, _) = rnn_train(&seqs, space, tiny(CellKind::Lstm), 400, 0.03, 3).unwrap();
        // At the first divergence point the two continuations split evenly.
        let split = ra.iter().zip(&rb).take_while(|(a, b)| a == b).count();
        assert!(split >= 1);
        let d = pol.prefix_dist(&ra[..split]).unwrap();
        assert!(
            (d[ra[split]] - 0.5).abs() < 0.05,
            "branch a weight {}",
            d[ra[split]]
        );
        assert!(
            (d[rb[split]] - 0.5).abs() < 0.05,
            "branch b weight {}",
            d[rb[split]]
        );
    }

    #[test]
    fn epoch_losses_trend_down_with_small_upticks() {
        let space = TokenSpace::Symbol { n: 5 };
        let seqs = vec![
            TokenSeq::complete(vec![0, 1, 2, 3]),
            TokenSeq::complete(vec![0, 1, 4]),
            TokenSeq::complete(vec![2, 1, 0]),
        ];
        let (_, losses) = rnn_train(&seqs, space, tiny(CellKind::Gru), 120, 0.02, 5).unwrap();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "loss jumped {} -> {}", w[0], w[1]);
        }
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn non_finite_loss_is_a_training_error() {
        let space = TokenSpace::Symbol { n: 4 };
        let mut pol = SequencePolicy::new(space, tiny(CellKind::Gru), 9).unwrap();
        pol.params.value_mut("head_w").unwrap().values_mut()[0] = f64::NAN;
        let seqs = vec![TokenSeq::complete(vec![0, 1])];
        let err = bc_train(&mut pol, &seqs, 3, 0.01).unwrap_err();
        assert!(matches!(err, ModelError::Train(_)), "{err}");
    }

    #[test]
    fn fresh_policy_distributions_respect_masks() {
        let space = grid_space();
        let ls = space.as_link().unwrap().clone();
        let pol = SequencePolicy::new(space, tiny(CellKind::Lstm), 2).unwrap();
        let d0 = pol.prefix_dist(&[]).unwrap();
        assert_eq!(d0.len(), ls.end_token() + 1);
        assert!((d0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d0[ls.end_token()], 0.0);
        for (t, p) in d0.iter().enumerate().take(ls.n_links()) {
            if ls.entry_index(t).is_none() {
                assert_eq!(*p, 0.0);
            }
        }
        let entry = ls.entries()[4];
        let d1 = pol.prefix_dist(&[entry]).unwrap();
        assert!((d1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let legal: Vec<usize> = ls.succ(entry).iter().flatten().copied().collect();
        for (tok, p) in d1.iter().enumerate() {
            if !legal.contains(&tok) {
                assert_eq!(*p, 0.0, "token {tok} should be masked");
            }
        }
    }

    #[test]
    fn incomplete_sequences_are_rejected_by_training() {
        let space = TokenSpace::Symbol { n: 3 };
        let seqs = vec![TokenSeq {
            toks: vec![0, 1],
            complete: false,
        }];
        let err = rnn_train(&seqs, space, tiny(CellKind::Gru), 2, 0.01, 1).unwrap_err();
        assert!(matches!(err, ModelError::BadInput(_)));
    }

    #[test]
    fn same_seed_reproduces_the_same_parameters() {
        let space = TokenSpace::Symbol { n: 4 };
        let seqs = vec![
            TokenSeq::complete(vec![0, 1, 2]),
            TokenSeq::complete(vec![3, 1]),
        ];
        let (a, la) =
            rnn_train(&seqs, space.clone(), tiny(CellKind::Lstm), 20, 0.02, 42).unwrap();
        let (b, lb) =
            rnn_train(&seqs, space.clone(), tiny(CellKind::Lstm), 20, 0.02, 42).unwrap();
        assert_eq!(la, lb);
        for n in a.params.names() {
            assert_eq!(
                a.params.value(n).unwrap().values(),
                b.params.value(n).unwrap().values(),
                "param {n}"
            );
        }
        let (c, _) = rnn_train(&seqs, space, tiny(CellKind::Lstm), 20, 0.02, 43).unwrap();
        let differs = c
            .params
            .names()
            .any(|n| c.params.value(n).unwrap().values() != a.params.value(n).unwrap().values());
        assert!(differs);
    }

    #[test]
    fn dataset_ce_matches_the_first_training_loss() {
        let space = TokenSpace::Symbol { n: 5 };
        let seqs = vec![
            TokenSeq::complete(vec![0, 1, 2]),
            TokenSeq::complete(vec![0, 1, 2]),
            TokenSeq::complete(vec![4, 3]),
        ];
        let pol = SequencePolicy::new(space.clone(), tiny(CellKind::Gru), 8).unwrap();
        let ce = pol.dataset_ce(&seqs).unwrap();
        let mut pol2 = SequencePolicy::new(space, tiny(CellKind::Gru), 8).unwrap();
        let losses = bc_train(&mut pol2, &seqs, 1, 1e-6).unwrap();
        assert!((ce - losses[0]).abs() < 1e-12);
    }
}
