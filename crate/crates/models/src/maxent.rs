//! Max-entropy route model over link tokens. Rewards live on states (or
//! state-action pairs), a fixed-horizon soft value iteration turns them
//! into stochastic policies, and training matches expected visitation
//! frequencies to the empirical ones by plain gradient ascent.

use eval::{NextTokenModel, TokenSeq};
use serde::{Deserialize, Serialize};

use crate::tokens::LinkSpace;
use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MaxEntMode {
    /// One reward per link; matches state visitation frequencies.
    Svf,
    /// One reward per link-action pair; matches state-action frequencies.
    Savf,
}

impl MaxEntMode {
    pub fn label(self) -> &'static str {
        match self {
            MaxEntMode::Svf => "svf",
            MaxEntMode::Savf => "savf",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxEntModel {
    pub mode: MaxEntMode,
    /// `[L]` for Svf, `[L * 4]` for Savf.
    pub weights: Vec<f64>,
    pub horizon: usize,
    /// Empirical first-link distribution, `[L]`.
    pub start: Vec<f64>,
    pub space: LinkSpace,
    /// `policy[t][l][a]`, rebuilt from the weights after every update.
    policy: Vec<Vec<[f64; 4]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaxEntLog {
    /// Sup-norm visitation gap after each iteration.
    pub gaps: Vec<f64>,
    pub converged: bool,
}

const GAP_TOL: f64 = 1e-2;
const DIVERGE_RUN: usize = 10;

fn reward(mode: MaxEntMode, w: &[f64], l: usize, a: usize) -> f64 {
    match mode {
        MaxEntMode::Svf => w[l],
        MaxEntMode::Savf => w[l * 4 + a],
    }
}

/// Fixed-horizon soft value iteration. Termination is an absorbing state
/// worth `end_step_reward` per remaining step, so adding a constant to
/// every reward (this one included) shifts all values uniformly and leaves
/// every policy unchanged.
pub fn soft_value_policies(
    space: &LinkSpace,
    mode: MaxEntMode,
    weights: &[f64],
    end_step_reward: f64,
    horizon: usize,
) -> Result<Vec<Vec<[f64; 4]>>> {
    let l_count = space.n_links();
    let want = match mode {
        MaxEntMode::Svf => l_count,
        MaxEntMode::Savf => l_count * 4,
    };
    if weights.len() != want {
        return Err(ModelError::BadInput(format!(
            "{} weights for a {} table",
            weights.len(),
            want
        )));
    }
    if horizon == 0 {
        return Err(ModelError::BadInput("horizon must be >= 1".into()));
    }
    let end = space.end_token();
    let end_value = |t: usize| (horizon - t) as f64 * end_step_reward;
    let mut v_next = vec![0.0; l_count];
    let mut policy = vec![vec![[0.0; 4]; l_count]; horizon];
    for t in (0..horizon).rev() {
        let mut v_here = vec![0.0; l_count];
        for l in 0..l_count {
            let mut q = [f64::NEG_INFINITY; 4];
            for (a, s) in space.succ(l).iter().enumerate() {
                let Some(next) = *s else { continue };
                let cont = if next == end {
                    end_value(t + 1)
                } else if t + 1 < horizon {
                    v_next[next]
                } else {
                    // Beyond the horizon nothing more is collected.
                    0.0
                };
                q[a] = reward(mode, weights, l, a) + cont;
            }
            let mx = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(ModelError::BadInput(format!(
                    "link {l} has no legal action"
                )));
            }
            let lse = mx + q.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
            v_here[l] = lse;
            for a in 0..4 {
                policy[t][l][a] = if q[a] == f64::NEG_INFINITY {
                    0.0
                } else {
                    (q[a] - lse).exp()
                };
            }
        }
        v_next = v_here;
    }
    Ok(policy)
}

/// Expected per-trajectory visitation under `policy` from `start`:
/// state-action mass accumulated over the horizon.
fn expected_visitation(
    space: &LinkSpace,
    policy: &[Vec<[f64; 4]>],
    start: &[f64],
) -> Vec<[f64; 4]> {
    let l_count = space.n_links();
    let end = space.end_token();
    let mut rho = vec![[0.0; 4]; l_count];
    let mut d = start.to_vec();
    for step in policy {
        let mut d_next = vec![0.0; l_count];
        for l in 0..l_count {
            if d[l] == 0.0 {
                continue;
            }
            for (a, s) in space.succ(l).iter().enumerate() {
                let Some(next) = *s else { continue };
                let p = d[l] * step[l][a];
                rho[l][a] += p;
                if next != end {
                    d_next[next] += p;
                }
            }
        }
        d = d_next;
    }
    rho
}

/// Per-trajectory empirical state-action counts; every trajectory must be
/// complete so its final Terminate action is known.
fn empirical_visitation(space: &LinkSpace, seqs: &[TokenSeq]) -> Result<(Vec<[f64; 4]>, Vec<f64>)> {
    let l_count = space.n_links();
    let mut emp = vec![[0.0; 4]; l_count];
    let mut start = vec![0.0; l_count];
    let n = seqs.len() as f64;
    for s in seqs {
        if !s.complete {
            return Err(ModelError::BadInput(
                "visitation matching needs complete trajectories".into(),
            ));
        }
        space.check_seq(&s.toks, true)?;
        start[s.toks[0]] += 1.0 / n;
        for (i, &l) in s.toks.iter().enumerate() {
            let to = if i + 1 < s.toks.len() {
                s.toks[i + 1]
            } else {
                space.end_token()
            };
            let a = space
                .action_to(l, to)
                .expect("checked by check_seq above");
            emp[l][a] += 1.0 / n;
        }
    }
    Ok((emp, start))
}

fn sup_gap(mode: MaxEntMode, emp: &[[f64; 4]], exp: &[[f64; 4]]) -> f64 {
    let mut g: f64 = 0.0;
    match mode {
        MaxEntMode::Svf => {
            for (e, x) in emp.iter().zip(exp) {
                let es: f64 = e.iter().sum();
                let xs: f64 = x.iter().sum();
                g = g.max((es - xs).abs());
            }
        }
        MaxEntMode::Savf => {
            for (e, x) in emp.iter().zip(exp) {
                for a in 0..4 {
                    g = g.max((e[a] - x[a]).abs());
                }
            }
        }
    }
    g
}

/// True when the tail of `gaps` grew strictly `DIVERGE_RUN` times in a row.
pub(crate) fn diverged(gaps: &[f64]) -> bool {
    if gaps.len() < DIVERGE_RUN + 1 {
        return false;
    }
    gaps[gaps.len() - DIVERGE_RUN - 1..]
        .windows(2)
        .all(|w| w[1] > w[0])
}

/// Gradient-ascent visitation matching. The horizon is the longest
/// trajectory plus two steps of slack.
pub fn maxent_train(
    seqs: &[TokenSeq],
    space: LinkSpace,
    mode: MaxEntMode,
    iters: usize,
    lr: f64,
) -> Result<(MaxEntModel, MaxEntLog)> {
    if seqs.is_empty() {
        return Err(ModelError::BadInput("no trajectories given".into()));
    }
    if iters == 0 {
        return Err(ModelError::BadInput("iters must be >= 1".into()));
    }
    if !(lr != 0.0 && lr.is_finite()) {
        return Err(ModelError::BadInput("learning rate must be finite and nonzero".into()));
    }
    let horizon = seqs.iter().map(|s| s.toks.len()).max().unwrap() + 2;
    let (emp, start) = empirical_visitation(&space, seqs)?;
    let l_count = space.n_links();
    let mut weights = vec![
        0.0;
        match mode {
            MaxEntMode::Svf => l_count,
            MaxEntMode::Savf => l_count * 4,
        }
    ];
    let mut gaps = Vec::with_capacity(iters);
    let mut converged = false;
    for _ in 0..iters {
        let policy = soft_value_policies(&space, mode, &weights, 0.0, horizon)?;
        let exp = expected_visitation(&space, &policy, &start);
        let gap = sup_gap(mode, &emp, &exp);
        gaps.push(gap);
        if diverged(&gaps) {
            return Err(ModelError::Train(format!(
                "visitation gap grew for {DIVERGE_RUN} straight iterations (now {gap:.4})"
            )));
        }
        if gap < GAP_TOL {
            converged = true;
            break;
        }
        for l in 0..l_count {
            match mode {
                MaxEntMode::Svf => {
                    let es: f64 = emp[l].iter().sum();
                    let xs: f64 = exp[l].iter().sum();
                    weights[l] += lr * (es - xs);
                }
                MaxEntMode::Savf => {
                    for a in 0..4 {
                        weights[l * 4 + a] += lr * (emp[l][a] - exp[l][a]);
                    }
                }
            }
        }
    }
    let policy = soft_value_policies(&space, mode, &weights, 0.0, horizon)?;
    let model = MaxEntModel {
        mode,
        weights,
        horizon,
        start,
        space,
        policy,
    };
    Ok((model, MaxEntLog { gaps, converged }))
}

impl MaxEntModel {
    /// Action distribution at trip position `t` on link `l`; positions past
    /// the horizon reuse the last table.
    pub fn policy_row(&self, t: usize, l: usize) -> &[f64; 4] {
        let t = t.min(self.horizon - 1);
        &self.policy[t][l]
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start
    }

    /// Rebuilds the cached policy tables from the stored weights; call
    /// after deserializing hand-edited weights.
    pub fn refresh_policy(&mut self) -> Result<()> {
        self.policy =
            soft_value_policies(&self.space, self.mode, &self.weights, 0.0, self.horizon)?;
        Ok(())
    }
}

impl NextTokenModel for MaxEntModel {
    fn end_token(&self) -> usize {
        self.space.end_token()
    }

    fn prefix_dist(&self, prefix: &[usize]) -> eval::Result<Vec<f64>> {
        let end = self.space.end_token();
        let mut dist = vec![0.0; end + 1];
        match prefix.last() {
            None => {
                for (l, p) in self.start.iter().enumerate() {
                    dist[l] = *p;
                }
            }
            Some(&l) => {
                if l >= end {
                    return Err(eval::EvalError::Model(format!(
                        "prefix token {l} outside vocabulary of {end}"
                    )));
                }
                let row = self.policy_row(prefix.len() - 1, l);
                for (a, s) in self.space.succ(l).iter().enumerate() {
                    if let Some(next) = *s {
                        dist[next] += row[a];
                    }
                }
            }
        }
        Ok(dist)
    }
}
