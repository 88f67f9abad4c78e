use std::collections::VecDeque;

use crate::network::{LinkId, Obs, RoadNetwork};
use crate::{RoadError, Result};

/// Shortest hop counts from every link to `dest`, following turn actions only.
/// dist[dest] = 0; unreachable links get usize::MAX.
fn hops_to(net: &RoadNetwork, dest: LinkId) -> Vec<usize> {
    let l = net.link_count();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); l];
    for (i, row) in net.next_table().iter().enumerate() {
        for slot in row.iter().take(3) {
            if let Some(Obs::Link(m)) = slot {
                preds[m.0].push(i);
            }
        }
    }
    let mut dist = vec![usize::MAX; l];
    dist[dest.0] = 0;
    let mut queue = VecDeque::from([dest.0]);
    while let Some(v) = queue.pop_front() {
        for &p in &preds[v] {
            if dist[p] == usize::MAX {
                dist[p] = dist[v] + 1;
                queue.push_back(p);
            }
        }
    }
    dist
}

/// All simple routes origin..dest whose link count stays within
/// shortest + slack, sorted by (length, lexicographic link ids), capped.
///
/// An unreachable destination yields an empty list, not an error.
pub fn enumerate_routes(
    net: &RoadNetwork,
    origin: LinkId,
    dest: LinkId,
    slack: usize,
    cap: usize,
) -> Result<Vec<Vec<LinkId>>> {
    if !net.is_entry(origin) {
        return Err(RoadError::InvalidAction(format!(
            "route origin {} is not an entry link",
            origin.0
        )));
    }
    if !net.is_exit(dest) {
        return Err(RoadError::InvalidAction(format!(
            "route destination {} is not an exit link",
            dest.0
        )));
    }
    let remaining = hops_to(net, dest);
    if remaining[origin.0] == usize::MAX {
        return Ok(Vec::new());
    }
    // number of links in a route = hops + 1.
    let bound = remaining[origin.0] + 1 + slack;

    let mut out: Vec<Vec<LinkId>> = Vec::new();
    let mut on_path = vec![false; net.link_count()];
    let mut path = vec![origin];
    on_path[origin.0] = true;
    dfs(net, dest, bound, &remaining, &mut path, &mut on_path, &mut out);

    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out.truncate(cap);
    Ok(out)
}

fn dfs(
    net: &RoadNetwork,
    dest: LinkId,
    bound: usize,
    remaining: &[usize],
    path: &mut Vec<LinkId>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<LinkId>>,
) {
    let cur = *path.last().expect("path never empty");
    if cur == dest {
        out.push(path.clone());
        return;
    }
    for slot in net.next_table()[cur.0].iter().take(3) {
        let Some(Obs::Link(m)) = slot else { continue };
        if on_path[m.0] || remaining[m.0] == usize::MAX {
            continue;
        }
        if path.len() + 1 + remaining[m.0] > bound {
            continue;
        }
        on_path[m.0] = true;
        path.push(*m);
        dfs(net, dest, bound, remaining, path, on_path, out);
        path.pop();
        on_path[m.0] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_grid;

    #[test]
    fn offset_pair_on_four_grid_has_six_shortest_routes() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let origin = net.entry_at(1, 0).expect("west-edge intersection");
        let dest = net.exit_at(3, 2).expect("north-edge intersection");
        let routes = enumerate_routes(&net, origin, dest, 0, 100).expect("valid OD");
        assert_eq!(routes.len(), 6);
        for r in &routes {
            assert_eq!(r.len(), 6, "entry + 4 interiors + exit");
            assert_eq!(r[0], origin);
            assert_eq!(*r.last().expect("nonempty"), dest);
        }
        // all distinct
        for i in 1..routes.len() {
            assert!(routes[i - 1] < routes[i], "sorted strictly");
        }
    }

    #[test]
    fn slack_zero_routes_share_one_length() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        for &(o, d) in net.od_pairs().iter().step_by(7) {
            let routes = enumerate_routes(&net, o, d, 0, 1000).expect("valid OD");
            assert!(!routes.is_empty());
            let len = routes[0].len();
            assert!(routes.iter().all(|r| r.len() == len));
        }
    }

    #[test]
    fn same_intersection_pair_never_takes_the_forbidden_u_turn() {
        // the direct entry->exit hop is masked, so only block loops remain.
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let origin = net.entry_at(1, 0).expect("boundary intersection");
        let dest = net.exit_at(1, 0).expect("same intersection");
        let routes = enumerate_routes(&net, origin, dest, 0, 1000).expect("valid OD");
        for r in &routes {
            assert!(r.len() >= 6, "no two-link U-route, got {:?}", r);
        }
    }

    #[test]
    fn routes_are_simple_and_prefix_closed() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        for &(o, d) in &net.od_pairs() {
            for r in enumerate_routes(&net, o, d, 2, 500).expect("valid OD") {
                let mut seen = std::collections::BTreeSet::new();
                assert!(r.iter().all(|l| seen.insert(*l)), "repeated link in route");
                for w in r.windows(2) {
                    assert!(
                        net.action_between(Obs::Link(w[0]), Obs::Link(w[1])).is_ok(),
                        "unmasked transition required"
                    );
                }
            }
        }
    }

    #[test]
    fn cap_truncates_after_sorting() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let origin = net.entry_at(1, 0).expect("west edge");
        let dest = net.exit_at(3, 2).expect("north edge");
        let all = enumerate_routes(&net, origin, dest, 0, 100).expect("valid OD");
        let capped = enumerate_routes(&net, origin, dest, 0, 3).expect("valid OD");
        assert_eq!(capped, all[..3].to_vec());
    }

    #[test]
    fn non_stub_arguments_are_rejected() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        let interior = net
            .links()
            .iter()
            .find(|l| l.kind == crate::network::LinkKind::Interior)
            .expect("has interior")
            .id;
        let exit = net.exit_links()[0];
        assert!(enumerate_routes(&net, interior, exit, 0, 10).is_err());
        let entry = net.entry_links()[0];
        assert!(enumerate_routes(&net, entry, interior, 0, 10).is_err());
    }
}
