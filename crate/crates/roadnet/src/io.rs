use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::{Action, Heading, Link, LinkId, LinkKind, Obs, RoadNetwork};
use crate::{RoadError, Result};

#[derive(Serialize, Deserialize)]
struct NetFile {
    rows: usize,
    cols: usize,
    links: Vec<LinkFile>,
    next_obs: Vec<NextFile>,
    entry: Vec<usize>,
    exit: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LinkFile {
    id: usize,
    from_xy: [f64; 2],
    to_xy: [f64; 2],
    length_m: f64,
}

/// One transition; o2 = -1 encodes End.
#[derive(Serialize, Deserialize)]
struct NextFile {
    o: usize,
    a: usize,
    o2: i64,
}

pub fn to_json(net: &RoadNetwork) -> String {
    let file = NetFile {
        rows: net.rows(),
        cols: net.cols(),
        links: net
            .links()
            .iter()
            .map(|l| LinkFile {
                id: l.id.0,
                from_xy: [l.from_xy.0, l.from_xy.1],
                to_xy: [l.to_xy.0, l.to_xy.1],
                length_m: l.length_m,
            })
            .collect(),
        next_obs: net
            .next_table()
            .iter()
            .enumerate()
            .flat_map(|(o, row)| {
                row.iter().enumerate().filter_map(move |(a, slot)| {
                    slot.map(|obs| NextFile {
                        o,
                        a,
                        o2: match obs {
                            Obs::Link(m) => m.0 as i64,
                            Obs::End => -1,
                            Obs::Start => unreachable!("Start is never a successor"),
                        },
                    })
                })
            })
            .collect(),
        entry: net.entry_links().iter().map(|l| l.0).collect(),
        exit: net.exit_links().iter().map(|l| l.0).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn save<P: AsRef<Path>>(net: &RoadNetwork, path: P) -> Result<()> {
    fs::write(path, to_json(net))?;
    Ok(())
}

/// Coordinates keyed to 1e-6 m so f64 round trips hash identically.
fn key(xy: (f64, f64)) -> (i64, i64) {
    ((xy.0 * 1.0e6).round() as i64, (xy.1 * 1.0e6).round() as i64)
}

pub fn from_json(text: &str) -> Result<RoadNetwork> {
    let file: NetFile = serde_json::from_str(text)?;
    let bad = |msg: String| RoadError::BadNetwork(msg);
    let l = file.links.len();

    let entry_set: std::collections::BTreeSet<usize> = file.entry.iter().copied().collect();
    let exit_set: std::collections::BTreeSet<usize> = file.exit.iter().copied().collect();
    for &id in entry_set.iter().chain(&exit_set) {
        if id >= l {
            return Err(bad(format!("stub list references unknown link {id}")));
        }
    }

    let mut links = Vec::with_capacity(l);
    for (i, lf) in file.links.iter().enumerate() {
        if lf.id != i {
            return Err(bad(format!("link ids must be dense, found {} at {i}", lf.id)));
        }
        let (dx, dy) = (lf.to_xy[0] - lf.from_xy[0], lf.to_xy[1] - lf.from_xy[1]);
        if dx.abs() > 1.0e-9 && dy.abs() > 1.0e-9 {
            return Err(bad(format!("link {i} is not axis-aligned")));
        }
        let len = (dx * dx + dy * dy).sqrt();
        if !(len > 0.0) {
            return Err(bad(format!("link {i} has zero extent")));
        }
        let heading = match ((dx / len).round() as i64, (dy / len).round() as i64) {
            (0, 1) => Heading::North,
            (1, 0) => Heading::East,
            (0, -1) => Heading::South,
            (-1, 0) => Heading::West,
            _ => return Err(bad(format!("link {i} heading is not a compass direction"))),
        };
        let kind = if entry_set.contains(&i) {
            LinkKind::Entry
        } else if exit_set.contains(&i) {
            LinkKind::Exit
        } else {
            LinkKind::Interior
        };
        links.push(Link {
            id: LinkId(i),
            from_xy: (lf.from_xy[0], lf.from_xy[1]),
            to_xy: (lf.to_xy[0], lf.to_xy[1]),
            length_m: lf.length_m,
            heading,
            kind,
        });
    }

    let mut next = vec![[None; 4]; l];
    for t in &file.next_obs {
        if t.o >= l {
            return Err(bad(format!("transition from unknown link {}", t.o)));
        }
        if t.a >= 4 {
            return Err(bad(format!("transition with unknown action {}", t.a)));
        }
        let obs = match t.o2 {
            -1 => {
                if t.a != Action::Terminate.index() {
                    return Err(bad(format!("only Terminate may lead to End, got a={}", t.a)));
                }
                Obs::End
            }
            o2 if o2 >= 0 && (o2 as usize) < l => {
                if t.a == Action::Terminate.index() {
                    return Err(bad("Terminate must lead to End".into()));
                }
                Obs::Link(LinkId(o2 as usize))
            }
            other => return Err(bad(format!("transition to unknown target {other}"))),
        };
        if next[t.o][t.a].is_some() {
            return Err(bad(format!("duplicate transition ({}, {})", t.o, t.a)));
        }
        next[t.o][t.a] = Some(obs);
    }

    // grid intersections are exactly the on-grid endpoints: heads of non-exit
    // links and tails of non-entry links. Stub points never appear in either.
    let mut grid_points: BTreeMap<(i64, i64), (f64, f64)> = BTreeMap::new();
    for link in &links {
        if link.kind != LinkKind::Exit {
            grid_points.insert(key(link.to_xy), link.to_xy);
        }
        if link.kind != LinkKind::Entry {
            grid_points.insert(key(link.from_xy), link.from_xy);
        }
    }
    if grid_points.len() != file.rows * file.cols {
        return Err(bad(format!(
            "found {} grid intersections, expected {}x{}",
            grid_points.len(),
            file.rows,
            file.cols
        )));
    }
    let mut xs: Vec<i64> = grid_points.keys().map(|k| k.0).collect();
    let mut ys: Vec<i64> = grid_points.keys().map(|k| k.1).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    if xs.len() != file.cols || ys.len() != file.rows {
        return Err(bad("intersections do not form a full grid".into()));
    }
    let col_of: BTreeMap<i64, usize> = xs.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let row_of: BTreeMap<i64, usize> = ys.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let node_at = |xy: (f64, f64)| -> Option<(usize, usize)> {
        let k = key(xy);
        if grid_points.contains_key(&k) {
            Some((row_of[&k.1], col_of[&k.0]))
        } else {
            None
        }
    };
    let head_node: Vec<_> = links.iter().map(|lk| node_at(lk.to_xy)).collect();
    let tail_node: Vec<_> = links.iter().map(|lk| node_at(lk.from_xy)).collect();

    let net = RoadNetwork::from_parts(
        file.rows,
        file.cols,
        links,
        file.entry.into_iter().map(LinkId).collect(),
        file.exit.into_iter().map(LinkId).collect(),
        next,
        head_node,
        tail_node,
    );
    net.validate()?;
    Ok(net)
}

pub fn load<P: AsRef<Path>>(path: P) -> Result<RoadNetwork> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_grid;

    #[test]
    fn round_trip_preserves_structure_and_bytes() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let text = to_json(&net);
        let back = from_json(&text).expect("own output loads");
        assert_eq!(to_json(&back), text);
        assert_eq!(back.entry_links(), net.entry_links());
        assert_eq!(back.exit_links(), net.exit_links());
        assert_eq!(back.next_table(), net.next_table());
        for (a, b) in net.links().iter().zip(back.links()) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.heading, b.heading);
        }
        for l in net.links() {
            assert_eq!(net.head_node(l.id), back.head_node(l.id));
            assert_eq!(net.tail_node(l.id), back.tail_node(l.id));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("net.json");
        let net = build_grid(3, 5, 120.0).expect("valid grid");
        save(&net, &path).expect("writes");
        let back = load(&path).expect("loads");
        assert_eq!(back.od_pairs(), net.od_pairs());
    }

    #[test]
    fn duplicate_transition_is_rejected() {
        let net = build_grid(2, 2, 100.0).expect("valid grid");
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&net)).expect("parses");
        let first = v["next_obs"][0].clone();
        v["next_obs"].as_array_mut().expect("array").push(first);
        assert!(matches!(
            from_json(&v.to_string()),
            Err(RoadError::BadNetwork(_))
        ));
    }

    #[test]
    fn missing_terminate_row_is_rejected() {
        let net = build_grid(2, 2, 100.0).expect("valid grid");
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&net)).expect("parses");
        let arr = v["next_obs"].as_array_mut().expect("array");
        arr.retain(|t| t["a"] != 3 || t["o"] != v2_first_exit(&net));
        assert!(matches!(
            from_json(&v.to_string()),
            Err(RoadError::BadNetwork(_))
        ));
    }

    fn v2_first_exit(net: &RoadNetwork) -> i64 {
        net.exit_links()[0].0 as i64
    }

    #[test]
    fn turn_action_to_end_is_rejected() {
        let net = build_grid(2, 2, 100.0).expect("valid grid");
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&net)).expect("parses");
        v["next_obs"][0]["o2"] = serde_json::json!(-1);
        assert!(matches!(
            from_json(&v.to_string()),
            Err(RoadError::BadNetwork(_))
        ));
    }

    #[test]
    fn garbled_text_is_a_parse_error() {
        assert!(matches!(from_json("{"), Err(RoadError::Parse(_))));
    }
}
