//! Small fixtures shared by the unit tests.

use std::collections::VecDeque;

use crate::tokens::{LinkSpace, TokenSpace};

/// Smallest grid the builder accepts, as both space flavours.
pub(crate) fn grid2() -> (TokenSpace, LinkSpace) {
    let net = roadnet::build_grid(2, 2, 200.0).unwrap();
    let ls = LinkSpace::from_network(&net).unwrap();
    (TokenSpace::Link(ls.clone()), ls)
}

/// Shortest complete route from the given entry: breadth-first to the
/// nearest link that may terminate.
pub(crate) fn shortest_route(ls: &LinkSpace, entry_pos: usize) -> Vec<usize> {
    let start = ls.entries()[entry_pos];
    let mut prev: Vec<Option<usize>> = vec![None; ls.n_links()];
    let mut seen = vec![false; ls.n_links()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(tok) = queue.pop_front() {
        if ls.succ(tok)[3].is_some() {
            let mut path = vec![tok];
            let mut cur = tok;
            while let Some(p) = prev[cur] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return path;
        }
        for s in ls.succ(tok).iter().take(3).flatten() {
            if !seen[*s] {
                seen[*s] = true;
                prev[*s] = Some(tok);
                queue.push_back(*s);
            }
        }
    }
    panic!("no terminating link reachable from entry {entry_pos}");
}
