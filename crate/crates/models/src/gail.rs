//! Adversarial imitation over link tokens. Three separately-optimized
//! parameter sets share one architecture family: a recurrent policy with
//! entry and turn heads, a recurrent state-action value net, and a
//! recurrent discriminator telling generated steps from expert steps.
//! Rewards are the discriminator's surprise, values chase bootstrapped
//! targets, and the policy climbs a value-weighted likelihood with an
//! entropy bonus.

use std::collections::BTreeSet;

use eval::{NextTokenModel, TokenSeq};
use ndcore::recurrent::{bind_stack, init_stack, stack_step, zero_state};
use ndcore::{adam_step, ParameterSet, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::policy::{
    init_policy_params, policy_ce_terms, policy_prefix_dist, PolicyBatch, PolicyConfig,
    ADAM_BETAS, ADAM_EPS,
};
use crate::rollout::sample_policy_rollouts;
use crate::tokens::{LinkSpace, TokenSpace};
use crate::{splitmix64, stream, ModelError, Result};

/// Discriminator output clamp; caps the step reward at -ln(1e-8).
const D_CLAMP: f64 = 1e-8;
/// Mode-collapse alarm: this many consecutive iterations with a single
/// distinct generated route (on multi-route data).
const COLLAPSE_RUN: usize = 200;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct GailConfig {
    pub policy: PolicyConfig,
    pub iters: usize,
    /// Rollouts sampled per iteration; also the expert minibatch size.
    pub n_samples: usize,
    pub d_updates: usize,
    pub g_updates: usize,
    pub lr: f64,
    pub gamma: f64,
    /// Entropy bonus weight in the policy objective.
    pub lambda: f64,
    /// Rollout truncation length.
    pub max_len: usize,
    /// Subtract the mean value estimate before weighting the policy loss.
    pub center_advantage: bool,
}

impl Default for GailConfig {
    fn default() -> Self {
        GailConfig {
            policy: PolicyConfig::default(),
            iters: 20_000,
            n_samples: 20_000,
            d_updates: 2,
            g_updates: 6,
            lr: 5e-5,
            gamma: 0.95,
            lambda: 0.01,
            max_len: 40,
            center_advantage: false,
        }
    }
}

impl GailConfig {
    /// Small-scale preset that trains in minutes on one core.
    pub fn desk() -> GailConfig {
        GailConfig {
            policy: PolicyConfig {
                kind: ndcore::CellKind::Lstm,
                hidden: 32,
                layers: 2,
                embed: 32,
            },
            iters: 600,
            n_samples: 128,
            d_updates: 2,
            g_updates: 6,
            lr: 1e-3,
            gamma: 0.95,
            lambda: 0.01,
            max_len: 24,
            center_advantage: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.n_samples == 0 || self.d_updates == 0 || self.g_updates == 0 {
            return Err(ModelError::BadInput(
                "iters, n_samples, d_updates, g_updates must all be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(ModelError::BadInput("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ModelError::BadInput("gamma must lie in [0, 1]".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(ModelError::BadInput("lambda must be >= 0".into()));
        }
        if self.max_len < 2 {
            return Err(ModelError::BadInput("max_len must be >= 2".into()));
        }
        Ok(())
    }
}

pub struct TrajGailBundle {
    pub cfg: GailConfig,
    pub space: TokenSpace,
    /// Generator: embedding, stack, entry and turn heads.
    pub policy: ParameterSet,
    /// State-action value net: own embedding and stack, scalar heads.
    pub value: ParameterSet,
    /// Discriminator: same shape as the value net.
    pub disc: ParameterSet,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct GailRow {
    pub iter: usize,
    pub j_policy: f64,
    pub j_value: f64,
    pub j_discrim: f64,
    pub entropy: f64,
    pub unique_routes: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GailLog {
    pub rows: Vec<GailRow>,
    pub warnings: Vec<String>,
}

impl GailLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,J_policy,J_value,J_discrim,entropy,unique_routes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.j_policy, r.j_value, r.j_discrim, r.entropy, r.unique_routes
            ));
        }
        out
    }
}

/// Registers critic parameters (shared shape of the value net and the
/// discriminator): embedding, stack, and zero-initialized scalar heads, so
/// scores start at exactly zero.
fn init_critic_params(
    ps: &mut ParameterSet,
    cfg: &PolicyConfig,
    ls: &LinkSpace,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<()> {
    let e_bound = 1.0 / (cfg.embed as f64).sqrt();
    ps.insert_uniform("emb", &[ls.n_links() + 1, cfg.embed], e_bound, rng)?;
    init_stack(ps, &cfg.stack(cfg.embed)?, "rnn", rng)?;
    ps.insert("out_h", Tensor::zeros(&[cfg.hidden, 1]))?;
    ps.insert("out_a", Tensor::zeros(&[4, 1]))?;
    ps.insert("out_b", Tensor::zeros(&[1, 1]))?;
    ps.insert("ent_h", Tensor::zeros(&[cfg.hidden, 1]))?;
    ps.insert("ent_a", Tensor::zeros(&[ls.entries().len(), 1]))?;
    ps.insert("ent_b", Tensor::zeros(&[1, 1]))?;
    Ok(())
}

impl TrajGailBundle {
    pub fn new(space: TokenSpace, cfg: GailConfig, seed: u64) -> Result<TrajGailBundle> {
        cfg.validate()?;
        let Some(ls) = space.as_link() else {
            return Err(ModelError::BadInput(
                "the adversarial bundle needs link granularity".into(),
            ));
        };
        let ls = ls.clone();
        let mut policy = ParameterSet::new();
        init_policy_params(
            &mut policy,
            &cfg.policy,
            &space,
            cfg.policy.embed,
            &mut stream(seed, 1),
        )?;
        let mut value = ParameterSet::new();
        init_critic_params(&mut value, &cfg.policy, &ls, &mut stream(seed, 2))?;
        let mut disc = ParameterSet::new();
        init_critic_params(&mut disc, &cfg.policy, &ls, &mut stream(seed, 3))?;
        Ok(TrajGailBundle {
            cfg,
            space,
            policy,
            value,
            disc,
        })
    }

    pub fn link(&self) -> &LinkSpace {
        self.space.as_link().expect("bundle is link-granularity")
    }
}

impl NextTokenModel for TrajGailBundle {
    fn end_token(&self) -> usize {
        self.space.end_token()
    }

    fn prefix_dist(&self, prefix: &[usize]) -> eval::Result<Vec<f64>> {
        policy_prefix_dist(&self.policy, &self.cfg.policy, &self.space, prefix)
    }
}

/// Rollouts grouped for batched forwards: uniform length and completeness
/// within a group, with the original indices kept for row alignment.
struct GenGroup {
    ids: Vec<usize>,
    toks: Vec<Vec<usize>>,
    complete: bool,
}

fn group_seqs(seqs: &[TokenSeq]) -> Result<Vec<GenGroup>> {
    if seqs.is_empty() {
        return Err(ModelError::BadInput("empty batch of trajectories".into()));
    }
    let mut groups: std::collections::BTreeMap<(usize, bool), GenGroup> =
        std::collections::BTreeMap::new();
    for (i, s) in seqs.iter().enumerate() {
        if s.toks.is_empty() {
            return Err(ModelError::BadInput(format!("trajectory {i} is empty")));
        }
        let e = groups
            .entry((s.toks.len(), s.complete))
            .or_insert_with(|| GenGroup {
                ids: Vec::new(),
                toks: Vec::new(),
                complete: s.complete,
            });
        e.ids.push(i);
        e.toks.push(s.toks.clone());
    }
    Ok(groups.into_values().collect())
}

fn scored_steps(m: usize, complete: bool) -> usize {
    if complete {
        m + 1
    } else {
        m
    }
}

/// Entry index of the first token and the action index of every later
/// step, terminate included for complete sequences.
fn step_actions(ls: &LinkSpace, toks: &[usize], complete: bool) -> Result<(usize, Vec<usize>)> {
    let entry = ls.entry_index(toks[0]).ok_or_else(|| {
        ModelError::BadInput(format!("token {} is not an entry", toks[0]))
    })?;
    let m = toks.len();
    let steps = scored_steps(m, complete);
    let mut acts = Vec::with_capacity(steps.saturating_sub(1));
    for i in 1..steps {
        let to = if i < m { toks[i] } else { ls.end_token() };
        let a = ls.action_to(toks[i - 1], to).ok_or_else(|| {
            ModelError::BadInput(format!("no action moves {} to {}", toks[i - 1], to))
        })?;
        acts.push(a);
    }
    Ok((entry, acts))
}

/// Builds per-step critic scores for one group on `tape`: `[B,1]` score
/// vars, one per scored step.
fn critic_scores(
    tape: &mut Tape,
    ps: &ParameterSet,
    cfg: &PolicyConfig,
    ls: &LinkSpace,
    group: &GenGroup,
) -> Result<Vec<Var>> {
    let b = group.toks.len();
    let m = group.toks[0].len();
    let steps = scored_steps(m, group.complete);
    let rnn_cfg = cfg.stack(cfg.embed)?;
    let sv = bind_stack(tape, ps, &rnn_cfg, "rnn");
    let emb = tape.param(ps, "emb");
    let out_h = tape.param(ps, "out_h");
    let out_a = tape.param(ps, "out_a");
    let out_b = tape.param(ps, "out_b");
    let ent_h = tape.param(ps, "ent_h");
    let ent_a = tape.param(ps, "ent_a");
    let ent_b = tape.param(ps, "ent_b");
    let mut state = zero_state(tape, &rnn_cfg, b);
    let mut entries = Vec::with_capacity(b);
    let mut acts: Vec<Vec<usize>> = Vec::with_capacity(b);
    for t in &group.toks {
        let (e, a) = step_actions(ls, t, group.complete)?;
        entries.push(e);
        acts.push(a);
    }
    let mut scores = Vec::with_capacity(steps);
    for i in 0..steps {
        let idx: Vec<usize> = if i == 0 {
            vec![0; b]
        } else {
            group.toks.iter().map(|t| t[i - 1] + 1).collect()
        };
        let x = tape.gather_rows(emb, &idx);
        let h = stack_step(tape, &sv, &mut state, x)?;
        let z = if i == 0 {
            let lin = tape.matmul(h, ent_h);
            let a_term = tape.gather_rows(ent_a, &entries);
            let sum = tape.add(lin, a_term);
            tape.add_row(sum, ent_b)
        } else {
            let lin = tape.matmul(h, out_h);
            let step_acts: Vec<usize> = acts.iter().map(|a| a[i - 1]).collect();
            let a_term = tape.gather_rows(out_a, &step_acts);
            let sum = tape.add(lin, a_term);
            tape.add_row(sum, out_b)
        };
        scores.push(z);
    }
    Ok(scores)
}

/// Inference forward of a critic stack over `m + 1` steps (start plus
/// every token); returns the hidden rows per step as plain tensors.
fn critic_hidden_values(
    ps: &ParameterSet,
    cfg: &PolicyConfig,
    group: &GenGroup,
) -> Result<Vec<Tensor>> {
    let b = group.toks.len();
    let m = group.toks[0].len();
    let mut tape = Tape::new();
    let rnn_cfg = cfg.stack(cfg.embed)?;
    let sv = bind_stack(&mut tape, ps, &rnn_cfg, "rnn");
    let emb = tape.param(ps, "emb");
    let mut state = zero_state(&mut tape, &rnn_cfg, b);
    let mut out = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let idx: Vec<usize> = if i == 0 {
            vec![0; b]
        } else {
            group.toks.iter().map(|t| t[i - 1] + 1).collect()
        };
        let x = tape.gather_rows(emb, &idx);
        let h = stack_step(&mut tape, &sv, &mut state, x)?;
        out.push(tape.value(h).clone());
    }
    Ok(out)
}

fn head_col(ps: &ParameterSet, name: &str) -> Vec<f64> {
    ps.value(name).expect("critic head exists").values().to_vec()
}

/// Critic score for the taken action at one step, in plain arithmetic.
fn score_rows(
    ps: &ParameterSet,
    h: &Tensor,
    step: usize,
    entries: &[usize],
    acts: &[Vec<usize>],
) -> Vec<f64> {
    let (wh, wa, b0) = if step == 0 {
        (head_col(ps, "ent_h"), head_col(ps, "ent_a"), head_col(ps, "ent_b")[0])
    } else {
        (head_col(ps, "out_h"), head_col(ps, "out_a"), head_col(ps, "out_b")[0])
    };
    (0..h.rows())
        .map(|r| {
            let dot: f64 = h.row(r).iter().zip(&wh).map(|(x, w)| x * w).sum();
            let a = if step == 0 {
                entries[r]
            } else {
                acts[r][step - 1]
            };
            dot + wa[a] + b0
        })
        .collect()
}

/// Per-action critic scores at one step (turn heads only).
fn action_score_rows(ps: &ParameterSet, h: &Tensor) -> Vec<[f64; 4]> {
    let wh = head_col(ps, "out_h");
    let wa = head_col(ps, "out_a");
    let b0 = head_col(ps, "out_b")[0];
    (0..h.rows())
        .map(|r| {
            let dot: f64 = h.row(r).iter().zip(&wh).map(|(x, w)| x * w).sum();
            [dot + wa[0] + b0, dot + wa[1] + b0, dot + wa[2] + b0, dot + wa[3] + b0]
        })
        .collect()
}

/// Inference forward of the policy over a group; returns, for step
/// `i = 1..=m`, the masked turn distribution per row.
fn policy_turn_dists(
    ps: &ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    group: &GenGroup,
) -> Result<Vec<Vec<[f64; 4]>>> {
    let ls = space.as_link().expect("link space");
    let b = group.toks.len();
    let m = group.toks[0].len();
    let mut tape = Tape::new();
    let rnn_cfg = cfg.stack(cfg.embed)?;
    let sv = bind_stack(&mut tape, ps, &rnn_cfg, "rnn");
    let emb = tape.param(ps, "emb");
    let head_w = tape.param(ps, "head_w");
    let head_b = tape.param(ps, "head_b");
    let mut state = zero_state(&mut tape, &rnn_cfg, b);
    let mut out = Vec::with_capacity(m);
    for i in 0..=m {
        let idx: Vec<usize> = if i == 0 {
            vec![0; b]
        } else {
            group.toks.iter().map(|t| t[i - 1] + 1).collect()
        };
        let x = tape.gather_rows(emb, &idx);
        let h = stack_step(&mut tape, &sv, &mut state, x)?;
        if i == 0 {
            continue;
        }
        let lin = tape.matmul(h, head_w);
        let logits = tape.add_row(lin, head_b);
        let vals = tape.value(logits);
        let mut rows = Vec::with_capacity(b);
        for (r, t) in group.toks.iter().enumerate() {
            let mask = ls.action_mask(t[i - 1]);
            let p = crate::policy::masked_softmax_row(vals.row(r), &mask);
            rows.push([p[0], p[1], p[2], p[3]]);
        }
        out.push(rows);
    }
    Ok(out)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Discriminator-derived step rewards for generated rollouts:
/// `-ln clamp(D, 1e-8, 1-1e-8)` per scored step, aligned with `gen`.
pub fn rollout_rewards(bundle: &TrajGailBundle, gen: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
    let ls = bundle.link();
    let cfg = &bundle.cfg.policy;
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); gen.len()];
    for group in group_seqs(gen)? {
        let m = group.toks[0].len();
        let steps = scored_steps(m, group.complete);
        let h = critic_hidden_values(&bundle.disc, cfg, &group)?;
        let mut entries = Vec::new();
        let mut acts = Vec::new();
        for t in &group.toks {
            let (e, a) = step_actions(ls, t, group.complete)?;
            entries.push(e);
            acts.push(a);
        }
        let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(steps); group.ids.len()];
        for (i, hi) in h.iter().enumerate().take(steps) {
            let z = score_rows(&bundle.disc, hi, i, &entries, &acts);
            for (r, zi) in z.iter().enumerate() {
                let d = sigmoid(*zi).clamp(D_CLAMP, 1.0 - D_CLAMP);
                rows[r].push(-d.ln());
            }
        }
        for (r, id) in group.ids.iter().enumerate() {
            out[*id] = std::mem::take(&mut rows[r]);
        }
    }
    Ok(out)
}

/// Bootstrapped value targets, treated as constants by the value update:
/// reward plus the policy-expected value of the next state; terminal steps
/// keep the bare reward.
pub(crate) fn value_targets(
    bundle: &TrajGailBundle,
    gen: &[TokenSeq],
    rewards: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let cfg = &bundle.cfg.policy;
    let gamma = bundle.cfg.gamma;
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); gen.len()];
    for group in group_seqs(gen)? {
        let m = group.toks[0].len();
        let steps = scored_steps(m, group.complete);
        let h = critic_hidden_values(&bundle.value, cfg, &group)?;
        let pi = policy_turn_dists(&bundle.policy, cfg, &bundle.space, &group)?;
        // Per-action values at steps 1..=m.
        let q_next: Vec<Vec<[f64; 4]>> = (1..=m)
            .map(|i| action_score_rows(&bundle.value, &h[i]))
            .collect();
        for (r, id) in group.ids.iter().enumerate() {
            let rw = &rewards[*id];
            if rw.len() != steps {
                return Err(ModelError::BadInput(format!(
                    "rollout {id} carries {} rewards for {steps} steps",
                    rw.len()
                )));
            }
            let mut ys = Vec::with_capacity(steps);
            for t in 0..steps {
                let terminal = group.complete && t + 1 == steps;
                let y = if terminal {
                    rw[t]
                } else {
                    let exp: f64 = (0..4)
                        .map(|a| pi[t][r][a] * q_next[t][r][a])
                        .sum();
                    rw[t] + gamma * exp
                };
                ys.push(y);
            }
            out[*id] = ys;
        }
    }
    Ok(out)
}

/// Value estimates of the taken action at every scored step, aligned with
/// `gen`.
pub(crate) fn taken_q(bundle: &TrajGailBundle, gen: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
    let ls = bundle.link();
    let cfg = &bundle.cfg.policy;
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); gen.len()];
    for group in group_seqs(gen)? {
        let m = group.toks[0].len();
        let steps = scored_steps(m, group.complete);
        let h = critic_hidden_values(&bundle.value, cfg, &group)?;
        let mut entries = Vec::new();
        let mut acts = Vec::new();
        for t in &group.toks {
            let (e, a) = step_actions(ls, t, group.complete)?;
            entries.push(e);
            acts.push(a);
        }
        let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(steps); group.ids.len()];
        for (i, hi) in h.iter().enumerate().take(steps) {
            let z = score_rows(&bundle.value, hi, i, &entries, &acts);
            for (r, zi) in z.iter().enumerate() {
                rows[r].push(*zi);
            }
        }
        for (r, id) in group.ids.iter().enumerate() {
            out[*id] = std::mem::take(&mut rows[r]);
        }
    }
    Ok(out)
}

/// Builds the discriminator objective on `tape`: mean binary
/// cross-entropy of generated steps labeled 1 plus mean of expert steps
/// labeled 0. At an uninformative discriminator it equals ln 4.
fn build_discrim_objective(
    tape: &mut Tape,
    disc: &ParameterSet,
    cfg: &PolicyConfig,
    ls: &LinkSpace,
    real: &[TokenSeq],
    gen: &[TokenSeq],
) -> Result<Var> {
    let mut halves = Vec::with_capacity(2);
    for (seqs, target) in [(gen, 1.0), (real, 0.0)] {
        let mut sum: Option<Var> = None;
        let mut rows = 0usize;
        for group in group_seqs(seqs)? {
            let scores = critic_scores(tape, disc, cfg, ls, &group)?;
            for z in scores {
                let b = tape.value(z).rows();
                let bce = tape.bce_logits(z, &vec![target; b]);
                let s = tape.sum_all(bce);
                rows += b;
                sum = Some(match sum {
                    None => s,
                    Some(t) => tape.add(t, s),
                });
            }
        }
        let sum = sum.expect("nonempty side");
        halves.push(tape.scale(sum, 1.0 / rows as f64));
    }
    Ok(tape.add(halves[0], halves[1]))
}

/// The discriminator objective without touching any parameters.
pub fn gail_discriminator_objective(
    bundle: &TrajGailBundle,
    real: &[TokenSeq],
    gen: &[TokenSeq],
) -> Result<f64> {
    let ls = bundle.link().clone();
    let mut tape = Tape::new();
    let j = build_discrim_objective(&mut tape, &bundle.disc, &bundle.cfg.policy, &ls, real, gen)?;
    Ok(tape.value(j).item())
}

/// The discriminator objective with gradients left in `disc`. Meant for
/// gradient verification and diagnostics.
pub fn discrim_loss_with_grads(
    disc: &mut ParameterSet,
    cfg: &PolicyConfig,
    ls: &LinkSpace,
    real: &[TokenSeq],
    gen: &[TokenSeq],
) -> Result<f64> {
    let mut tape = Tape::new();
    let j = build_discrim_objective(&mut tape, disc, cfg, ls, real, gen)?;
    let v = tape.value(j).item();
    let grads = tape.backward(j);
    disc.accumulate(&grads)?;
    Ok(v)
}

/// One Adam step on the discriminator; returns the objective re-evaluated
/// after the step.
pub fn gail_discriminator_update(
    bundle: &mut TrajGailBundle,
    real: &[TokenSeq],
    gen: &[TokenSeq],
) -> Result<f64> {
    let ls = bundle.link().clone();
    let mut tape = Tape::new();
    let j = build_discrim_objective(&mut tape, &bundle.disc, &bundle.cfg.policy, &ls, real, gen)?;
    if !tape.value(j).item().is_finite() {
        return Err(ModelError::Train("discriminator objective is non-finite".into()));
    }
    let grads = tape.backward(j);
    bundle.disc.accumulate(&grads)?;
    adam_step(&mut bundle.disc, bundle.cfg.lr, ADAM_BETAS, ADAM_EPS)?;
    gail_discriminator_objective(bundle, real, gen)
}

/// Builds the mean-squared error of critic scores against fixed
/// `targets` on `tape`.
fn build_value_objective(
    tape: &mut Tape,
    value: &ParameterSet,
    cfg: &PolicyConfig,
    ls: &LinkSpace,
    gen: &[TokenSeq],
    targets: &[Vec<f64>],
) -> Result<Var> {
    let mut sum: Option<Var> = None;
    let mut rows = 0usize;
    for group in group_seqs(gen)? {
        let scores = critic_scores(tape, value, cfg, ls, &group)?;
        for (i, z) in scores.into_iter().enumerate() {
            let y: Vec<f64> = group
                .ids
                .iter()
                .map(|id| {
                    targets
                        .get(*id)
                        .and_then(|t| t.get(i))
                        .copied()
                        .ok_or_else(|| {
                            ModelError::BadInput(format!(
                                "missing target for rollout {id} step {i}"
                            ))
                        })
                })
                .collect::<Result<_>>()?;
            let b = y.len();
            let y_col = tape.constant(Tensor::from_vec(&[b, 1], y)?);
            let diff = tape.sub(z, y_col);
            let sq = tape.mul(diff, diff);
            let s = tape.sum_all(sq);
            rows += b;
            sum = Some(match sum {
                None => s,
                Some(t) => tape.add(t, s),
            });
        }
    }
    let sum = sum.expect("nonempty rollouts");
    Ok(tape.scale(sum, 1.0 / rows as f64))
}

/// The value objective with gradients left in `value`. Meant for gradient
/// verification and diagnostics.
pub fn value_loss_with_grads(
    value: &mut ParameterSet,
    cfg: &PolicyConfig,
    ls: &LinkSpace,
    gen: &[TokenSeq],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let mut tape = Tape::new();
    let j = build_value_objective(&mut tape, value, cfg, ls, gen, targets)?;
    let v = tape.value(j).item();
    let grads = tape.backward(j);
    value.accumulate(&grads)?;
    Ok(v)
}

/// One Adam step of mean-squared error against `targets`; returns the
/// pre-step loss.
pub fn gail_value_update(
    bundle: &mut TrajGailBundle,
    gen: &[TokenSeq],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let ls = bundle.link().clone();
    let mut tape = Tape::new();
    let loss_var =
        build_value_objective(&mut tape, &bundle.value, &bundle.cfg.policy, &ls, gen, targets)?;
    let loss = tape.value(loss_var).item();
    if !loss.is_finite() {
        return Err(ModelError::Train("value loss is non-finite".into()));
    }
    let grads = tape.backward(loss_var);
    bundle.value.accumulate(&grads)?;
    adam_step(&mut bundle.value, bundle.cfg.lr, ADAM_BETAS, ADAM_EPS)?;
    Ok(loss)
}

/// Builds the policy surrogate on `tape`: mean value-weighted
/// cross-entropy minus `lambda` times mean step entropy. Returns the loss
/// var and the mean entropy value.
#[allow(clippy::too_many_arguments)]
fn build_policy_objective(
    tape: &mut Tape,
    policy: &ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    gen: &[TokenSeq],
    q: &[Vec<f64>],
    lambda: f64,
    center: f64,
) -> Result<(Var, f64)> {
    let mut ce_sum: Option<Var> = None;
    let mut ent_sum: Option<Var> = None;
    let mut rows = 0usize;
    for group in group_seqs(gen)? {
        let m = group.toks[0].len();
        let steps = scored_steps(m, group.complete);
        let mut weights = vec![Vec::with_capacity(group.ids.len()); steps];
        for id in &group.ids {
            let row = q.get(*id).ok_or_else(|| {
                ModelError::BadInput(format!("missing value estimates for rollout {id}"))
            })?;
            if row.len() != steps {
                return Err(ModelError::BadInput(format!(
                    "rollout {id} carries {} value estimates for {steps} steps",
                    row.len()
                )));
            }
            for (i, v) in row.iter().enumerate() {
                weights[i].push(v - center);
            }
        }
        let batch = PolicyBatch {
            toks: group.toks.clone(),
            complete: group.complete,
            step_weights: Some(weights),
        };
        let terms = policy_ce_terms(tape, policy, cfg, space, &batch, true)?;
        rows += group.ids.len() * steps;
        ce_sum = Some(match ce_sum {
            None => terms.ce_sum,
            Some(t) => tape.add(t, terms.ce_sum),
        });
        let ent = terms.ent_sum.expect("entropy requested");
        ent_sum = Some(match ent_sum {
            None => ent,
            Some(t) => tape.add(t, ent),
        });
    }
    let ce_sum = ce_sum.expect("nonempty rollouts");
    let ent_sum = ent_sum.expect("nonempty rollouts");
    let n = rows as f64;
    let ce_mean = tape.scale(ce_sum, 1.0 / n);
    let ent_term = tape.scale(ent_sum, lambda / n);
    let loss_var = tape.sub(ce_mean, ent_term);
    let mean_entropy = tape.value(ent_sum).item() / n;
    Ok((loss_var, mean_entropy))
}

fn center_of(q: &[Vec<f64>], enabled: bool) -> f64 {
    if !enabled {
        return 0.0;
    }
    let (mut s, mut n) = (0.0, 0usize);
    for row in q {
        s += row.iter().sum::<f64>();
        n += row.len();
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// The policy surrogate with gradients left in `policy`. Meant for
/// gradient verification and diagnostics.
pub fn policy_loss_with_grads(
    policy: &mut ParameterSet,
    cfg: &PolicyConfig,
    space: &TokenSpace,
    gen: &[TokenSeq],
    q: &[Vec<f64>],
    lambda: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss_var, _) =
        build_policy_objective(&mut tape, policy, cfg, space, gen, q, lambda, 0.0)?;
    let v = tape.value(loss_var).item();
    let grads = tape.backward(loss_var);
    policy.accumulate(&grads)?;
    Ok(v)
}

/// One Adam step on the policy: value-weighted cross-entropy minus the
/// entropy bonus. Returns the pre-step surrogate loss and the mean policy
/// entropy per step.
pub fn gail_policy_update(
    bundle: &mut TrajGailBundle,
    gen: &[TokenSeq],
    q: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let center = center_of(q, bundle.cfg.center_advantage);
    let mut tape = Tape::new();
    let (loss_var, mean_entropy) = build_policy_objective(
        &mut tape,
        &bundle.policy,
        &bundle.cfg.policy,
        &bundle.space,
        gen,
        q,
        bundle.cfg.lambda,
        center,
    )?;
    let loss = tape.value(loss_var).item();
    if !loss.is_finite() {
        return Err(ModelError::Train("policy loss is non-finite".into()));
    }
    let grads = tape.backward(loss_var);
    bundle.policy.accumulate(&grads)?;
    adam_step(&mut bundle.policy, bundle.cfg.lr, ADAM_BETAS, ADAM_EPS)?;
    Ok((loss, mean_entropy))
}

/// True when the tail of `uniques` sat at a single distinct route for the
/// whole alarm window.
pub(crate) fn collapsed(uniques: &[usize]) -> bool {
    uniques.len() >= COLLAPSE_RUN
        && uniques[uniques.len() - COLLAPSE_RUN..].iter().all(|u| *u == 1)
}

/// Full adversarial training loop. Per iteration: sample rollouts, take
/// `d_updates` discriminator steps against expert minibatches, refresh the
/// rewards, then `g_updates` rounds of one value step followed by one
/// policy step on the same rollouts.
pub fn gail_train(
    real: &[TokenSeq],
    space: TokenSpace,
    cfg: GailConfig,
    seed: u64,
) -> Result<(TrajGailBundle, GailLog)> {
    cfg.validate()?;
    space.check_seqs(real)?;
    if real.iter().any(|s| !s.complete) {
        return Err(ModelError::BadInput(
            "expert data holds an incomplete trajectory".into(),
        ));
    }
    let mut bundle = TrajGailBundle::new(space, cfg, seed)?;
    let real_unique: usize = {
        let set: BTreeSet<&[usize]> = real.iter().map(|s| s.toks.as_slice()).collect();
        set.len()
    };
    let mut log = GailLog::default();
    let mut uniques = Vec::with_capacity(cfg.iters);
    let mut collapse_reported = false;
    let mut mb_rng = stream(seed, 4);
    for iter in 0..cfg.iters {
        let roll_seed = splitmix64(seed ^ 0xA11C_E5EED) ^ iter as u64;
        let gen = sample_policy_rollouts(
            &bundle.policy,
            &bundle.cfg.policy,
            &bundle.space,
            cfg.n_samples,
            cfg.max_len,
            roll_seed,
        )?;
        let mut j_d = f64::NAN;
        for _ in 0..cfg.d_updates {
            let mb = expert_minibatch(real, cfg.n_samples, &mut mb_rng);
            j_d = gail_discriminator_update(&mut bundle, &mb, &gen)?;
        }
        let rewards = rollout_rewards(&bundle, &gen)?;
        let mut j_v = f64::NAN;
        let mut j_p = f64::NAN;
        let mut entropy = f64::NAN;
        for _ in 0..cfg.g_updates {
            let targets = value_targets(&bundle, &gen, &rewards)?;
            j_v = gail_value_update(&mut bundle, &gen, &targets)?;
            let q = taken_q(&bundle, &gen)?;
            let (p, e) = gail_policy_update(&mut bundle, &gen, &q)?;
            j_p = p;
            entropy = e;
        }
        let unique_routes = {
            let set: BTreeSet<&[usize]> = gen
                .iter()
                .filter(|s| s.complete)
                .map(|s| s.toks.as_slice())
                .collect();
            set.len()
        };
        uniques.push(unique_routes);
        if !j_d.is_finite() || !j_v.is_finite() || !j_p.is_finite() || !entropy.is_finite() {
            return Err(ModelError::Train(format!(
                "non-finite objective at iteration {iter}"
            )));
        }
        log.rows.push(GailRow {
            iter,
            j_policy: j_p,
            j_value: j_v,
            j_discrim: j_d,
            entropy,
            unique_routes,
        });
        if !collapse_reported && real_unique > 1 && collapsed(&uniques) {
            log.warnings.push(format!(
                "generator emitted a single distinct route for {COLLAPSE_RUN} iterations (through iteration {iter}) while the expert data holds {real_unique}"
            ));
            collapse_reported = true;
        }
    }
    Ok((bundle, log))
}

/// Expert minibatch of up to `n` trajectories drawn without replacement.
fn expert_minibatch(
    real: &[TokenSeq],
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<TokenSeq> {
    use rand::Rng;
    if real.len() <= n {
        return real.to_vec();
    }
    let mut idx: Vec<usize> = (0..real.len()).collect();
    for i in 0..n {
        let j = i + rng.gen_range(0..idx.len() - i);
        idx.swap(i, j);
    }
    idx[..n].iter().map(|i| real[*i].clone()).collect()
}
