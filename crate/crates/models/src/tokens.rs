//! Token vocabularies the models operate over. A trajectory is a sequence
//! of interior tokens followed by an implicit end-of-trip token; the end
//! token id always equals the interior vocabulary size.

use roadnet::{Action, LinkId, Obs, RoadNetwork};
use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

/// Link-level vocabulary distilled from a road network: per-link successor
/// table indexed by action, plus the entry links a trip may start on.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LinkSpace {
    /// `succ[l][a]` is the token reached from link `l` by action `a`
    /// (`n_links` encodes the end token), `None` where the turn is illegal.
    succ: Vec<[Option<usize>; 4]>,
    entries: Vec<usize>,
    n_links: usize,
}

impl LinkSpace {
    pub fn from_network(net: &RoadNetwork) -> Result<LinkSpace> {
        let n = net.link_count();
        if n == 0 {
            return Err(ModelError::BadInput("network has no links".into()));
        }
        let mut succ = Vec::with_capacity(n);
        for l in 0..n {
            let o = Obs::Link(LinkId(l));
            let mask = net.action_mask(o);
            let mut row = [None; 4];
            for (a, row_a) in row.iter_mut().enumerate() {
                if !mask[a] {
                    continue;
                }
                let act = Action::from_index(a).expect("mask index in range");
                *row_a = Some(match net.next_observation(o, act)? {
                    Obs::Link(LinkId(t)) => t,
                    Obs::End => n,
                    Obs::Start => {
                        return Err(ModelError::BadInput(format!(
                            "link {l} steps back to the start token"
                        )))
                    }
                });
            }
            succ.push(row);
        }
        let entries: Vec<usize> = net.entry_links().iter().map(|id| id.0).collect();
        if entries.is_empty() {
            return Err(ModelError::BadInput("network has no entry links".into()));
        }
        Ok(LinkSpace {
            succ,
            entries,
            n_links: n,
        })
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn end_token(&self) -> usize {
        self.n_links
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// Position of `tok` in the entry list, if it is an entry link.
    pub fn entry_index(&self, tok: usize) -> Option<usize> {
        self.entries.iter().position(|e| *e == tok)
    }

    pub fn succ(&self, tok: usize) -> &[Option<usize>; 4] {
        &self.succ[tok]
    }

    pub fn action_mask(&self, tok: usize) -> [bool; 4] {
        let mut m = [false; 4];
        for (a, s) in self.succ[tok].iter().enumerate() {
            m[a] = s.is_some();
        }
        m
    }

    /// Action index moving `from` to `to` (use the end token for
    /// termination). `None` if no single action does it.
    pub fn action_to(&self, from: usize, to: usize) -> Option<usize> {
        self.succ[from].iter().position(|s| *s == Some(to))
    }

    /// Checks one interior token sequence: entry start, legal consecutive
    /// moves, and a legal Terminate after the last token when `complete`.
    pub fn check_seq(&self, toks: &[usize], complete: bool) -> Result<()> {
        let Some(&first) = toks.first() else {
            return Err(ModelError::BadInput("empty token sequence".into()));
        };
        if self.entry_index(first).is_none() {
            return Err(ModelError::BadInput(format!(
                "sequence starts on non-entry token {first}"
            )));
        }
        for w in toks.windows(2) {
            if self.action_to(w[0], w[1]).is_none() {
                return Err(ModelError::BadInput(format!(
                    "no action moves {} to {}",
                    w[0], w[1]
                )));
            }
        }
        let last = *toks.last().expect("nonempty");
        if complete && self.action_to(last, self.end_token()).is_none() {
            return Err(ModelError::BadInput(format!(
                "complete sequence cannot terminate on token {last}"
            )));
        }
        Ok(())
    }
}

/// Vocabulary a sequence model is trained over. `Link` carries the road
/// topology so illegal successors can be masked; `Symbol` is an
/// unconstrained alphabet (used for cell sequences).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum TokenSpace {
    Link(LinkSpace),
    Symbol { n: usize },
}

impl TokenSpace {
    pub fn end_token(&self) -> usize {
        match self {
            TokenSpace::Link(ls) => ls.end_token(),
            TokenSpace::Symbol { n } => *n,
        }
    }

    /// Interior vocabulary size (excludes the end token).
    pub fn interior(&self) -> usize {
        self.end_token()
    }

    pub fn granularity(&self) -> &'static str {
        match self {
            TokenSpace::Link(_) => "link",
            TokenSpace::Symbol { .. } => "cell",
        }
    }

    pub fn as_link(&self) -> Option<&LinkSpace> {
        match self {
            TokenSpace::Link(ls) => Some(ls),
            TokenSpace::Symbol { .. } => None,
        }
    }

    /// Validates a batch of interior sequences against the vocabulary.
    pub fn check_seqs(&self, seqs: &[eval::TokenSeq]) -> Result<()> {
        if seqs.is_empty() {
            return Err(ModelError::BadInput("no trajectories given".into()));
        }
        let end = self.end_token();
        for (i, s) in seqs.iter().enumerate() {
            if s.toks.is_empty() {
                return Err(ModelError::BadInput(format!("trajectory {i} is empty")));
            }
            if let Some(&bad) = s.toks.iter().find(|t| **t >= end) {
                return Err(ModelError::BadInput(format!(
                    "trajectory {i} holds token {bad} outside vocabulary of {end}"
                )));
            }
            if let TokenSpace::Link(ls) = self {
                ls.check_seq(&s.toks, s.complete).map_err(|e| {
                    ModelError::BadInput(format!("trajectory {i}: {e}"))
                })?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use roadnet::build_grid;

    fn space() -> LinkSpace {
        let net = build_grid(4, 4, 200.0).unwrap();
        LinkSpace::from_network(&net).unwrap()
    }

    #[test]
    fn grid_space_has_expected_shape() {
        let ls = space();
        assert_eq!(ls.n_links(), 72);
        assert_eq!(ls.end_token(), 72);
        assert_eq!(ls.entries().len(), 12);
    }

    #[test]
    fn successor_table_matches_network_masks() {
        let net = build_grid(4, 4, 200.0).unwrap();
        let ls = LinkSpace::from_network(&net).unwrap();
        for l in 0..ls.n_links() {
            let mask = net.action_mask(Obs::Link(LinkId(l)));
            assert_eq!(ls.action_mask(l), mask, "link {l}");
            for (a, allowed) in mask.iter().enumerate() {
                match ls.succ(l)[a] {
                    Some(t) => {
                        assert!(*allowed);
                        let o = net
                            .next_observation(Obs::Link(LinkId(l)), Action::from_index(a).unwrap())
                            .unwrap();
                        let want = match o {
                            Obs::Link(LinkId(x)) => x,
                            Obs::End => ls.end_token(),
                            Obs::Start => panic!("start successor"),
                        };
                        assert_eq!(t, want);
                    }
                    None => assert!(!*allowed),
                }
            }
        }
    }

    #[test]
    fn exit_links_terminate_and_entry_links_do_not() {
        let net = build_grid(4, 4, 200.0).unwrap();
        let ls = LinkSpace::from_network(&net).unwrap();
        let end = ls.end_token();
        for id in net.exit_links() {
            assert_eq!(ls.succ(id.0)[Action::Terminate.index()], Some(end));
        }
        for id in net.entry_links() {
            assert_eq!(ls.succ(id.0)[Action::Terminate.index()], None);
        }
    }

    #[test]
    fn action_lookup_inverts_the_successor_table() {
        let ls = space();
        for l in 0..ls.n_links() {
            for a in 0..4 {
                if let Some(t) = ls.succ(l)[a] {
                    assert_eq!(ls.action_to(l, t), Some(a));
                }
            }
        }
    }

    #[test]
    fn sequence_checks_catch_broken_paths() {
        let ls = space();
        let entry = ls.entries()[0];
        assert!(ls.check_seq(&[entry], false).is_ok());
        let non_entry = (0..ls.n_links())
            .find(|l| ls.entry_index(*l).is_none())
            .unwrap();
        assert!(ls.check_seq(&[non_entry], false).is_err());
        assert!(ls.check_seq(&[], false).is_err());
        // A jump between two non-adjacent links must be rejected.
        let next = ls.succ(entry).iter().flatten().next().copied().unwrap();
        let far = (0..ls.n_links())
            .find(|l| ls.action_to(entry, *l).is_none() && *l != entry)
            .unwrap();
        assert!(ls.check_seq(&[entry, next], false).is_ok());
        assert!(ls.check_seq(&[entry, far], false).is_err());
    }

    #[test]
    fn symbol_space_validates_range_only() {
        let sp = TokenSpace::Symbol { n: 5 };
        assert_eq!(sp.end_token(), 5);
        let good = vec![eval::TokenSeq::complete(vec![0, 4, 2])];
        assert!(sp.check_seqs(&good).is_ok());
        let bad = vec![eval::TokenSeq::complete(vec![0, 5])];
        assert!(sp.check_seqs(&bad).is_err());
        assert!(sp.check_seqs(&[]).is_err());
    }
}
