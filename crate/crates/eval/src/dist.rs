//! Dataset-level distribution metrics: route-distribution divergence,
//! link-transition entropy, and the entropy-vs-divergence trend line.

use std::collections::BTreeMap;

use crate::{EvalError, Result, TokenSeq};

/// Route key: the interior token sequence, or None for routes outside the
/// reference set (incomplete rollouts always fall here).
type RouteKey = Option<Vec<usize>>;

fn route_frequencies(ds: &[TokenSeq]) -> BTreeMap<Vec<usize>, f64> {
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for tr in ds {
        *counts.entry(tr.toks.clone()).or_insert(0) += 1;
    }
    let n = ds.len() as f64;
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n))
        .collect()
}

/// Jensen-Shannon distance between the generated and real route
/// distributions, with everything outside the real route set pooled into a
/// single unseen bucket. Base-2 logs keep the distance in [0, 1]. Also
/// returns how many generated trajectories landed in that bucket.
pub fn route_jsd(gen: &[TokenSeq], real: &[TokenSeq]) -> Result<(f64, usize)> {
    if gen.is_empty() {
        return Err(EvalError::BadInput("empty generated dataset".into()));
    }
    if real.is_empty() {
        return Err(EvalError::BadInput("empty real dataset".into()));
    }
    let real_freq = route_frequencies(real);

    let mut gen_counts: BTreeMap<RouteKey, usize> = BTreeMap::new();
    let mut unknown = 0;
    for tr in gen {
        let key = if tr.complete && real_freq.contains_key(&tr.toks) {
            Some(tr.toks.clone())
        } else {
            unknown += 1;
            None
        };
        *gen_counts.entry(key).or_insert(0) += 1;
    }
    let n_gen = gen.len() as f64;

    // Support: every real route plus the unseen bucket.
    let mut d_sum = 0.0;
    let mut add_term = |p: f64, q: f64| {
        let m = 0.5 * (p + q);
        if p > 0.0 {
            d_sum += 0.5 * p * (p / m).log2();
        }
        if q > 0.0 {
            d_sum += 0.5 * q * (q / m).log2();
        }
    };
    for (key, &p) in &real_freq {
        let q = gen_counts
            .get(&Some(key.clone()))
            .map_or(0.0, |&c| c as f64 / n_gen);
        add_term(p, q);
    }
    add_term(0.0, unknown as f64 / n_gen);

    // Clamp tiny negative rounding noise before the square root.
    Ok((d_sum.max(0.0).sqrt(), unknown))
}

/// Mean per-link Shannon entropy (natural log) of the next-link conditional
/// distribution, averaged over links with at least one observed outgoing
/// link transition. Sequence ends are not transitions.
pub fn transition_entropy(ds: &[TokenSeq]) -> Result<f64> {
    if ds.is_empty() {
        return Err(EvalError::BadInput("empty dataset".into()));
    }
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for tr in ds {
        for w in tr.toks.windows(2) {
            *counts.entry(w[0]).or_default().entry(w[1]).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for succ in counts.values() {
        let row_sum: usize = succ.values().sum();
        let mut h = 0.0;
        for &c in succ.values() {
            let p = c as f64 / row_sum as f64;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        total += h;
    }
    Ok(total / counts.len() as f64)
}

/// Ordinary least-squares line through (entropy, divergence) points.
/// Returns (slope, intercept).
pub fn complexity_sensitivity(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(EvalError::BadInput(
            "need at least two points for a trend line".into(),
        ));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EvalError::Degenerate(
            "all points share one entropy value; slope is unidentified".into(),
        ));
    }
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}
