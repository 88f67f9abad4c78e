//! Sequence-overlap scores over token ids.

use std::collections::HashMap;

use crate::{EvalError, Result};

/// Floor substituted for zero or undefined n-gram precisions so the
/// geometric mean stays finite.
pub const PRECISION_FLOOR: f64 = 1e-9;

fn ngram_counts(seq: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m: HashMap<&[usize], usize> = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Modified n-gram precision: candidate n-gram counts clipped by the
/// reference counts, over the number of candidate n-grams. `None` when the
/// candidate has no n-grams of this order.
fn clipped_precision(cand: &[usize], refr: &[usize], n: usize) -> Option<f64> {
    if cand.len() < n {
        return None;
    }
    let ref_counts = ngram_counts(refr, n);
    let cand_counts = ngram_counts(cand, n);
    let total: usize = cand_counts.values().sum();
    let matched: usize = cand_counts
        .iter()
        .map(|(g, c)| (*c).min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    Some(matched as f64 / total as f64)
}

/// BLEU with n-gram orders 1..=n. Orders above the candidate length carry
/// no information and would force every score below 1, so the order caps at
/// the candidate length; the flag reports when that truncation happened.
/// Zero precisions within the cap fall back to the smoothing floor.
pub fn bleu_flagged(cand: &[usize], refr: &[usize], n: usize) -> Result<(f64, bool)> {
    if cand.is_empty() || refr.is_empty() {
        return Err(EvalError::BadInput("bleu needs non-empty sequences".into()));
    }
    if n == 0 {
        return Err(EvalError::BadInput("bleu order must be at least 1".into()));
    }
    let flagged = cand.len() < n;
    let n_eff = n.min(cand.len());
    let mut log_sum = 0.0;
    for k in 1..=n_eff {
        let p = match clipped_precision(cand, refr, k) {
            Some(raw) if raw > 0.0 => raw,
            _ => PRECISION_FLOOR,
        };
        log_sum += p.ln();
    }
    let geo = (log_sum / n_eff as f64).exp();
    let brevity = (cand.len() as f64 / refr.len() as f64).min(1.0);
    Ok((brevity * geo, flagged))
}

/// BLEU-n score in [0, 1]; 1 exactly when the sequences are identical.
pub fn bleu(cand: &[usize], refr: &[usize], n: usize) -> Result<f64> {
    bleu_flagged(cand, refr, n).map(|(s, _)| s)
}

/// One-to-one unigram alignment between candidate and reference positions.
/// `pairs[i] = (cand_pos, ref_pos)`, sorted by candidate position.
struct Alignment {
    pairs: Vec<(usize, usize)>,
}

impl Alignment {
    fn chunks(&self) -> usize {
        let mut c = 0;
        for (t, (i, j)) in self.pairs.iter().enumerate() {
            if t == 0 {
                c = 1;
            } else {
                let (pi, pj) = self.pairs[t - 1];
                if *i != pi + 1 || *j != pj + 1 {
                    c += 1;
                }
            }
        }
        c
    }

    fn crossings(&self) -> usize {
        let mut x = 0;
        for a in 0..self.pairs.len() {
            for b in a + 1..self.pairs.len() {
                if self.pairs[a].1 > self.pairs[b].1 {
                    x += 1;
                }
            }
        }
        x
    }
}

/// Total achievable matches: per token, the smaller occurrence count.
fn max_matches(cand: &[usize], refr: &[usize]) -> usize {
    let mut cc: HashMap<usize, usize> = HashMap::new();
    let mut rc: HashMap<usize, usize> = HashMap::new();
    for &t in cand {
        *cc.entry(t).or_insert(0) += 1;
    }
    for &t in refr {
        *rc.entry(t).or_insert(0) += 1;
    }
    cc.iter()
        .map(|(t, c)| (*c).min(rc.get(t).copied().unwrap_or(0)))
        .sum()
}

/// Threshold below which the alignment search is exhaustive; above it a
/// greedy left-to-right pass is used instead.
const EXHAUSTIVE_MATCH_LIMIT: usize = 8;

/// Alignment ranking key: (crossings, chunks, pair list).
type AlignKey = (usize, usize, Vec<(usize, usize)>);

/// Exhaustive search over maximum-match alignments: fewest crossings, then
/// fewest chunks, then the lexicographically smallest pair list.
fn align_exhaustive(cand: &[usize], refr: &[usize], m: usize) -> Alignment {
    struct Search<'a> {
        cand: &'a [usize],
        refr: &'a [usize],
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<AlignKey>,
        m: usize,
        // Per token, how many reference occurrences remain unused.
        ref_avail: HashMap<usize, usize>,
        // Per token, how many candidate occurrences remain at or after the
        // cursor. Used to prune branches that cannot reach m matches.
        cand_remaining: Vec<HashMap<usize, usize>>,
    }
    impl Search<'_> {
        fn matches_reachable(&self, pos: usize) -> usize {
            let mut total = 0;
            for (t, c) in &self.cand_remaining[pos] {
                total += (*c).min(self.ref_avail.get(t).copied().unwrap_or(0));
            }
            total
        }
        fn go(&mut self, pos: usize) {
            let done = self.current.len();
            if done + self.matches_reachable(pos) < self.m {
                return;
            }
            if done == self.m {
                let a = Alignment {
                    pairs: self.current.clone(),
                };
                let key = (a.crossings(), a.chunks());
                let better = match &self.best {
                    None => true,
                    Some((bx, bc, bp)) => {
                        key < (*bx, *bc) || (key == (*bx, *bc) && self.current < *bp)
                    }
                };
                if better {
                    self.best = Some((key.0, key.1, self.current.clone()));
                }
                return;
            }
            let tok = self.cand[pos];
            for j in 0..self.refr.len() {
                if !self.used[j] && self.refr[j] == tok {
                    self.used[j] = true;
                    *self.ref_avail.get_mut(&tok).unwrap() -= 1;
                    self.current.push((pos, j));
                    self.go(pos + 1);
                    self.current.pop();
                    *self.ref_avail.get_mut(&tok).unwrap() += 1;
                    self.used[j] = false;
                }
            }
            // Leave this candidate position unmatched.
            self.go(pos + 1);
        }
    }

    let mut ref_avail: HashMap<usize, usize> = HashMap::new();
    for &t in refr {
        *ref_avail.entry(t).or_insert(0) += 1;
    }
    // cand_remaining[p] counts token occurrences in cand[p..].
    let mut cand_remaining = vec![HashMap::new(); cand.len() + 1];
    for p in (0..cand.len()).rev() {
        let mut h = cand_remaining[p + 1].clone();
        *h.entry(cand[p]).or_insert(0) += 1;
        cand_remaining[p] = h;
    }
    let mut s = Search {
        cand,
        refr,
        used: vec![false; refr.len()],
        current: Vec::new(),
        best: None,
        m,
        ref_avail,
        cand_remaining,
    };
    s.go(0);
    Alignment {
        pairs: s.best.expect("m matches are always reachable").2,
    }
}

/// Greedy fallback: walk the candidate left to right, preferring the
/// reference position that extends the current chunk, otherwise the
/// leftmost unused occurrence. Always reaches the maximum match count.
fn align_greedy(cand: &[usize], refr: &[usize]) -> Alignment {
    let mut used = vec![false; refr.len()];
    let mut pairs = Vec::new();
    let mut prev_j: Option<usize> = None;
    for (i, &t) in cand.iter().enumerate() {
        let next = prev_j.map(|j| j + 1);
        let chunk_cont = next.filter(|&j| j < refr.len() && !used[j] && refr[j] == t);
        let j = chunk_cont.or_else(|| (0..refr.len()).find(|&j| !used[j] && refr[j] == t));
        if let Some(j) = j {
            used[j] = true;
            pairs.push((i, j));
            prev_j = Some(j);
        }
    }
    Alignment { pairs }
}

/// METEOR over exact unigram matches. Harmonic mean weighted 9:1 toward
/// recall, discounted by a fragmentation penalty cubic in the chunk ratio.
/// Identical sequences of length 5 score 0.996.
pub fn meteor(cand: &[usize], refr: &[usize]) -> Result<f64> {
    if cand.is_empty() || refr.is_empty() {
        return Err(EvalError::BadInput(
            "meteor needs non-empty sequences".into(),
        ));
    }
    let m = max_matches(cand, refr);
    if m == 0 {
        return Ok(0.0);
    }
    let align = if m <= EXHAUSTIVE_MATCH_LIMIT {
        align_exhaustive(cand, refr, m)
    } else {
        align_greedy(cand, refr)
    };
    debug_assert_eq!(align.pairs.len(), m);
    let chunks = align.chunks() as f64;
    let mf = m as f64;
    let p = mf / cand.len() as f64;
    let r = mf / refr.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks / mf).powi(3);
    Ok(f * (1.0 - penalty))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_score_bleu_one() {
        let s = vec![3, 1, 4, 1, 5, 9, 2, 6];
        assert_eq!(bleu(&s, &s, 4).unwrap(), 1.0);
    }

    #[test]
    fn bleu_clipping_counts_each_reference_gram_once() {
        // Candidate repeats one token seven times; reference holds it twice.
        // P1 = 2/7, higher orders have no matches and floor out.
        let cand = vec![7usize; 7];
        let refr = vec![7, 7, 1, 2, 3];
        let (score, flagged) = bleu_flagged(&cand, &refr, 1).unwrap();
        assert!(!flagged);
        assert!((score - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn bleu_brevity_penalizes_short_candidates() {
        // Candidate is the first half of the reference: precisions are all 1,
        // leaving exactly the length ratio.
        let refr = vec![0, 1, 2, 3, 4, 5, 6, 7];
        let cand = vec![0, 1, 2, 3];
        let score = bleu(&cand, &refr, 4).unwrap();
        assert!((score - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bleu_short_candidate_is_flagged_and_order_capped() {
        let cand = vec![1, 2];
        let refr = vec![1, 2, 3];
        let (score, flagged) = bleu_flagged(&cand, &refr, 4).unwrap();
        assert!(flagged);
        // Orders cap at 2: P1 = P2 = 1, leaving only brevity 2/3.
        assert!((score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn short_identical_sequences_still_score_one() {
        let (score, flagged) = bleu_flagged(&[5, 6, 7], &[5, 6, 7], 4).unwrap();
        assert_eq!(score, 1.0);
        assert!(flagged);
    }

    #[test]
    fn bleu_single_substitution_hits_known_precisions() {
        // One interior token replaced: P1 = 4/5, P2 = 2/4, P3 = 1/3, and no
        // 4-gram survives so P4 floors out.
        let cand = vec![1, 2, 3, 4, 5];
        let refr = vec![1, 2, 3, 9, 5];
        let score = bleu(&cand, &refr, 4).unwrap();
        let expected =
            ((0.8f64.ln() + 0.5f64.ln() + (1.0f64 / 3.0).ln() + PRECISION_FLOOR.ln()) / 4.0).exp();
        assert!((score - expected).abs() < 1e-15);
    }

    #[test]
    fn bleu_disjoint_sequences_score_near_zero() {
        let cand = vec![1, 2, 3, 4, 5];
        let refr = vec![6, 7, 8, 9, 10];
        let score = bleu(&cand, &refr, 4).unwrap();
        assert!(score > 0.0 && score < 1e-8);
    }

    #[test]
    fn meteor_identity_on_five_tokens_is_pinned() {
        let s = vec![10, 11, 12, 13, 14];
        let m = meteor(&s, &s).unwrap();
        assert!((m - 0.996).abs() < 1e-12);
    }

    #[test]
    fn meteor_zero_when_nothing_matches() {
        assert_eq!(meteor(&[1, 2, 3], &[4, 5, 6]).unwrap(), 0.0);
    }

    #[test]
    fn meteor_reversal_fragments_into_singleton_chunks() {
        // All three tokens match but order is reversed: three chunks of one.
        let m = meteor(&[3, 2, 1], &[1, 2, 3]).unwrap();
        // P = R = F = 1, penalty = 0.5 * (3/3)^3 = 0.5.
        assert!((m - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_prefers_fewer_chunks_among_max_alignments() {
        // Token 1 appears twice in the reference. Matching candidate's 1 to
        // the second occurrence keeps one contiguous chunk.
        let cand = vec![1, 2];
        let refr = vec![1, 0, 1, 2];
        let m = meteor(&cand, &refr).unwrap();
        let p: f64 = 1.0;
        let r = 2.0 / 4.0;
        let f = 10.0 * p * r / (r + 9.0 * p);
        let expected = f * (1.0 - 0.5 * (1.0f64 / 2.0).powi(3));
        assert!((m - expected).abs() < 1e-12);
    }

    #[test]
    fn long_identical_sequences_use_the_greedy_path() {
        // 12 matches exceeds the exhaustive limit; identity must still give
        // a single chunk.
        let s: Vec<usize> = (0..12).collect();
        let m = meteor(&s, &s).unwrap();
        let expected = 1.0 - 0.5 * (1.0f64 / 12.0).powi(3);
        assert!((m - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(bleu(&[], &[1], 4).is_err());
        assert!(bleu(&[1], &[], 4).is_err());
        assert!(meteor(&[], &[1]).is_err());
        assert!(meteor(&[1], &[]).is_err());
    }
}
