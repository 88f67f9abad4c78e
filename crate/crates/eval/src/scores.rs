//! Trajectory-set scoring: best-match similarity against a reference set,
//! and sampled completion scores for prefix prediction.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ngram::{bleu, meteor};
use crate::{EvalError, NextTokenModel, Result, TokenSeq};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// BLEU with the given maximum n-gram order.
    Bleu(usize),
    Meteor,
}

impl Metric {
    pub fn apply(&self, cand: &[usize], refr: &[usize]) -> Result<f64> {
        match self {
            Metric::Bleu(n) => bleu(cand, refr, *n),
            Metric::Meteor => meteor(cand, refr),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Metric::Bleu(n) => format!("bleu{n}"),
            Metric::Meteor => "meteor".into(),
        }
    }
}

/// For each generated trajectory, its best score against any reference
/// route. The reference is deduplicated by route key first; the maximum
/// over a multiset equals the maximum over its support.
pub fn max_score_eval(gen: &[TokenSeq], reference: &[TokenSeq], metric: Metric) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(EvalError::BadInput("empty reference dataset".into()));
    }
    let routes: BTreeSet<&[usize]> = reference.iter().map(|t| t.toks.as_slice()).collect();
    let mut out = Vec::with_capacity(gen.len());
    for tr in gen {
        let mut best = f64::NEG_INFINITY;
        for r in &routes {
            let s = metric.apply(&tr.toks, r)?;
            if s > best {
                best = s;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PredictionScores {
    /// Mean completion score per original trajectory length.
    pub per_len: BTreeMap<usize, f64>,
    pub per_len_counts: BTreeMap<usize, usize>,
    /// Mean over all test cases of their per-case average.
    pub overall: f64,
    pub cases: usize,
    /// Completions that died on an all-zero distribution.
    pub flagged: usize,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Some(i);
        }
    }
    Some(weights.len() - 1)
}

/// Per test trajectory longer than `g`: draw `n_samples` completions of the
/// g-token prefix from the model, score each generated suffix against the
/// true suffix, and average. Results aggregate by original trajectory
/// length. Completions hitting an all-zero distribution score 0 and are
/// flagged; completions still open at `max_len` tokens are scored on what
/// they produced.
pub fn prediction_score_eval(
    model: &dyn NextTokenModel,
    test: &[TokenSeq],
    g: usize,
    n_samples: usize,
    metric: Metric,
    seed: u64,
    max_len: usize,
) -> Result<PredictionScores> {
    if n_samples == 0 {
        return Err(EvalError::BadInput("need at least one sample".into()));
    }
    if max_len <= g {
        return Err(EvalError::BadInput(
            "max_len must exceed the prefix length".into(),
        ));
    }
    let end = model.end_token();
    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut overall = 0.0;
    let mut cases = 0;
    let mut flagged = 0;
    for (i, tr) in test.iter().enumerate() {
        if tr.toks.len() <= g {
            continue;
        }
        let true_suffix = &tr.toks[g..];
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ i as u64);
        let mut case_sum = 0.0;
        for _ in 0..n_samples {
            let mut toks = tr.toks[..g].to_vec();
            let mut dead = false;
            loop {
                let dist = model.prefix_dist(&toks)?;
                match sample_index(&mut rng, &dist) {
                    None => {
                        dead = true;
                        break;
                    }
                    Some(t) if t == end => break,
                    Some(t) => {
                        toks.push(t);
                        if toks.len() >= max_len {
                            break;
                        }
                    }
                }
            }
            let suffix = &toks[g..];
            if dead {
                flagged += 1;
            } else if !suffix.is_empty() {
                case_sum += metric.apply(suffix, true_suffix)?;
            }
        }
        let case_mean = case_sum / n_samples as f64;
        let m = tr.toks.len();
        *sums.entry(m).or_insert(0.0) += case_mean;
        *counts.entry(m).or_insert(0) += 1;
        overall += case_mean;
        cases += 1;
    }
    if cases == 0 {
        return Err(EvalError::BadInput(
            "no test trajectory is longer than the prefix".into(),
        ));
    }
    let per_len = sums
        .iter()
        .map(|(&m, &s)| (m, s / counts[&m] as f64))
        .collect();
    Ok(PredictionScores {
        per_len,
        per_len_counts: counts,
        overall: overall / cases as f64,
        cases,
        flagged,
    })
}
