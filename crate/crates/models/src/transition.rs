//! First-order Markov transition baseline fitted by counting. Rows are
//! exact rational frequencies; rows never observed in the data are flagged
//! and absorb straight to the end token so sampling cannot stall.

use eval::{NextTokenModel, TokenSeq};
use serde::{Deserialize, Serialize};

use crate::tokens::TokenSpace;
use crate::{ModelError, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TransitionMatrix {
    vocab_end: usize,
    start_counts: Vec<u64>,
    /// `counts[a][b]` transitions a -> b; column `vocab_end` is termination.
    counts: Vec<Vec<u64>>,
    absorbing: Vec<usize>,
}

/// Count transitions over interior tokens plus the end column. Incomplete
/// trajectories contribute their interior moves but no termination count.
pub fn fit_transition(seqs: &[TokenSeq], space: &TokenSpace) -> Result<TransitionMatrix> {
    space.check_seqs(seqs)?;
    let end = space.end_token();
    let mut start_counts = vec![0u64; end];
    let mut counts = vec![vec![0u64; end + 1]; end];
    for s in seqs {
        start_counts[s.toks[0]] += 1;
        for w in s.toks.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        if s.complete {
            counts[*s.toks.last().expect("nonempty")][end] += 1;
        }
    }
    let absorbing = (0..end)
        .filter(|t| counts[*t].iter().all(|c| *c == 0))
        .collect();
    Ok(TransitionMatrix {
        vocab_end: end,
        start_counts,
        counts,
        absorbing,
    })
}

impl TransitionMatrix {
    pub fn end_token(&self) -> usize {
        self.vocab_end
    }

    /// Tokens with no observed outgoing transition. Their rows put all
    /// mass on termination.
    pub fn absorbing_rows(&self) -> &[usize] {
        &self.absorbing
    }

    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts[from][to]
    }

    /// Next-token distribution out of `from`, length `end + 1`.
    pub fn row_dist(&self, from: usize) -> Result<Vec<f64>> {
        if from >= self.vocab_end {
            return Err(ModelError::BadInput(format!(
                "token {from} outside vocabulary of {}",
                self.vocab_end
            )));
        }
        let row = &self.counts[from];
        let total: u64 = row.iter().sum();
        let mut dist = vec![0.0; self.vocab_end + 1];
        if total == 0 {
            dist[self.vocab_end] = 1.0;
        } else {
            for (b, c) in row.iter().enumerate() {
                dist[b] = *c as f64 / total as f64;
            }
        }
        Ok(dist)
    }

    /// Empirical first-token distribution, length `end + 1` with zero mass
    /// on termination.
    pub fn start_dist(&self) -> Result<Vec<f64>> {
        let total: u64 = self.start_counts.iter().sum();
        if total == 0 {
            return Err(ModelError::BadInput(
                "transition matrix fitted with no trajectories".into(),
            ));
        }
        let mut dist = vec![0.0; self.vocab_end + 1];
        for (t, c) in self.start_counts.iter().enumerate() {
            dist[t] = *c as f64 / total as f64;
        }
        Ok(dist)
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        let row = &self.counts[from];
        let total: u64 = row.iter().sum();
        if total == 0 {
            return if to == self.vocab_end { 1.0 } else { 0.0 };
        }
        row[to] as f64 / total as f64
    }
}

impl NextTokenModel for TransitionMatrix {
    fn end_token(&self) -> usize {
        self.vocab_end
    }

    fn prefix_dist(&self, prefix: &[usize]) -> eval::Result<Vec<f64>> {
        let out = match prefix.last() {
            None => self.start_dist(),
            Some(&t) => self.row_dist(t),
        };
        out.map_err(|e| eval::EvalError::Model(e.to_string()))
    }
}
