//! Aggregate region statistics over cell sequences: unique-visitor counts,
//! inter-cell flows, and the cell revisit ratio.

use std::collections::{BTreeMap, BTreeSet};

use crate::{EvalError, Result, TokenSeq};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegionReport {
    /// Per cell: unique trajectories that touched it, over trajectory count.
    pub visitors: BTreeMap<usize, f64>,
    /// Ordered (from, to, flow) triples: observed transitions over
    /// trajectory count, sorted by cell pair.
    pub flows: Vec<(usize, usize, f64)>,
    /// Per-trajectory revisit ratios (m - m_u)/m in percent, dataset order.
    pub revisit: Vec<f64>,
    pub revisit_mean: f64,
}

impl RegionReport {
    pub fn flow(&self, from: usize, to: usize) -> f64 {
        self.flows
            .iter()
            .find(|(f, t, _)| *f == from && *t == to)
            .map_or(0.0, |(_, _, v)| *v)
    }
}

/// Shared statistics for one dataset of cell sequences. Callers run it on
/// generated and real data separately for side-by-side comparison.
pub fn region_metrics(ds: &[TokenSeq]) -> Result<RegionReport> {
    if ds.is_empty() {
        return Err(EvalError::BadInput("empty dataset".into()));
    }
    let n = ds.len() as f64;
    let mut visitor_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut flow_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut revisit = Vec::with_capacity(ds.len());
    for tr in ds {
        if tr.toks.is_empty() {
            return Err(EvalError::BadInput("empty cell sequence".into()));
        }
        let unique: BTreeSet<usize> = tr.toks.iter().copied().collect();
        for &c in &unique {
            *visitor_counts.entry(c).or_insert(0) += 1;
        }
        for w in tr.toks.windows(2) {
            *flow_counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
        let m = tr.toks.len() as f64;
        let m_u = unique.len() as f64;
        revisit.push((m - m_u) / m * 100.0);
    }
    let revisit_mean = revisit.iter().sum::<f64>() / n;
    Ok(RegionReport {
        visitors: visitor_counts
            .into_iter()
            .map(|(c, v)| (c, v as f64 / n))
            .collect(),
        flows: flow_counts
            .into_iter()
            .map(|((f, t), v)| (f, t, v as f64 / n))
            .collect(),
        revisit,
        revisit_mean,
    })
}
