use std::collections::BTreeMap;

use crate::{RoadError, Result};

/// Dense link index, 0..L-1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

/// What a model observes: a link, or one of the two virtual trip tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Obs {
    Start,
    Link(LinkId),
    End,
}

/// The four actions. File encoding is the declaration order: 0..3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Straight,
    Left,
    Right,
    Terminate,
}

pub const ACTIONS: [Action; 4] = [
    Action::Straight,
    Action::Left,
    Action::Right,
    Action::Terminate,
];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Straight => 0,
            Action::Left => 1,
            Action::Right => 2,
            Action::Terminate => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ACTIONS.get(i).copied()
    }
}

/// Compass heading of a directed link. North is +y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn vector(self) -> (i64, i64) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }

    fn from_vector(v: (i64, i64)) -> Option<Heading> {
        match v {
            (0, 1) => Some(Heading::North),
            (1, 0) => Some(Heading::East),
            (0, -1) => Some(Heading::South),
            (-1, 0) => Some(Heading::West),
            _ => None,
        }
    }

    /// Counterclockwise quarter turn: (x, y) -> (-y, x).
    pub fn left(self) -> Heading {
        let (x, y) = self.vector();
        Heading::from_vector((-y, x)).expect("unit vector stays a unit vector")
    }

    /// Clockwise quarter turn: (x, y) -> (y, -x).
    pub fn right(self) -> Heading {
        let (x, y) = self.vector();
        Heading::from_vector((y, -x)).expect("unit vector stays a unit vector")
    }

    pub fn reverse(self) -> Heading {
        let (x, y) = self.vector();
        Heading::from_vector((-x, -y)).expect("unit vector stays a unit vector")
    }

    /// The turn that maps `self` onto `to`, if one exists. U-turns have none.
    pub fn turn_to(self, to: Heading) -> Option<Action> {
        if to == self {
            Some(Action::Straight)
        } else if to == self.left() {
            Some(Action::Left)
        } else if to == self.right() {
            Some(Action::Right)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkKind {
    Entry,
    Interior,
    Exit,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub id: LinkId,
    pub from_xy: (f64, f64),
    pub to_xy: (f64, f64),
    pub length_m: f64,
    pub heading: Heading,
    pub kind: LinkKind,
}

/// What the next step of a trajectory may choose from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepChoices {
    /// At Start: pick one of the entry links (a categorical, not the 4-action
    /// head, because entry counts routinely exceed 4).
    Entry(Vec<LinkId>),
    /// On a link: the boolean mask over the 4 actions.
    Actions([bool; 4]),
    /// After End: nothing.
    Finished,
}

#[derive(Clone, Debug)]
pub struct RoadNetwork {
    rows: usize,
    cols: usize,
    links: Vec<Link>,
    entry: Vec<LinkId>,
    exit: Vec<LinkId>,
    /// next[l][a]: Some(successor observation) or None if masked.
    next: Vec<[Option<Obs>; 4]>,
    /// grid intersection (r, c) of each link's head, if the head is on the grid.
    head_node: Vec<Option<(usize, usize)>>,
    /// grid intersection (r, c) of each link's tail, if the tail is on the grid.
    tail_node: Vec<Option<(usize, usize)>>,
}

/// Which way a boundary intersection's stub pair points. Column rules win at
/// corners, so every boundary intersection gets exactly one pair.
fn stub_heading(r: usize, c: usize, rows: usize, cols: usize) -> Option<Heading> {
    if c == 0 {
        Some(Heading::West)
    } else if c == cols - 1 {
        Some(Heading::East)
    } else if r == 0 {
        Some(Heading::South)
    } else if r == rows - 1 {
        Some(Heading::North)
    } else {
        None
    }
}

/// Build the rows x cols intersection grid: two directed links per adjacent
/// intersection pair, one entry stub and one exit stub per boundary
/// intersection.
pub fn build_grid(rows: usize, cols: usize, block_length_m: f64) -> Result<RoadNetwork> {
    if rows < 2 || cols < 2 || rows * cols > 400 {
        return Err(RoadError::BadNetwork(format!(
            "grid must be between 2x2 and 400 intersections, got {rows}x{cols}"
        )));
    }
    if !(block_length_m > 0.0) || !block_length_m.is_finite() {
        return Err(RoadError::BadNetwork(format!(
            "block length must be positive, got {block_length_m}"
        )));
    }

    let xy = |r: i64, c: i64| (c as f64 * block_length_m, r as f64 * block_length_m);
    let mut links: Vec<Link> = Vec::new();
    let mut head_node: Vec<Option<(usize, usize)>> = Vec::new();
    let mut tail_node: Vec<Option<(usize, usize)>> = Vec::new();
    let push = |from_rc: (i64, i64),
                    to_rc: (i64, i64),
                    kind: LinkKind,
                    links: &mut Vec<Link>,
                    head_node: &mut Vec<Option<(usize, usize)>>,
                    tail_node: &mut Vec<Option<(usize, usize)>>| {
        let heading = Heading::from_vector((to_rc.1 - from_rc.1, to_rc.0 - from_rc.0))
            .expect("adjacent nodes differ by one axis-aligned step");
        let id = LinkId(links.len());
        links.push(Link {
            id,
            from_xy: xy(from_rc.0, from_rc.1),
            to_xy: xy(to_rc.0, to_rc.1),
            length_m: block_length_m,
            heading,
            kind,
        });
        let on_grid = |(r, c): (i64, i64)| {
            (r >= 0 && (r as usize) < rows && c >= 0 && (c as usize) < cols)
                .then_some((r as usize, c as usize))
        };
        tail_node.push(on_grid(from_rc));
        head_node.push(on_grid(to_rc));
        id
    };

    // interior links, row-major by tail intersection, heading order N/E/S/W.
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            for h in [Heading::North, Heading::East, Heading::South, Heading::West] {
                let (dx, dy) = h.vector();
                let (r2, c2) = (r + dy, c + dx);
                if r2 >= 0 && r2 < rows as i64 && c2 >= 0 && c2 < cols as i64 {
                    push((r, c), (r2, c2), LinkKind::Interior, &mut links, &mut head_node, &mut tail_node);
                }
            }
        }
    }
    // boundary stubs, row-major; entry then exit per intersection.
    let mut entry = Vec::new();
    let mut exit = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if let Some(h) = stub_heading(r, c, rows, cols) {
                let (dx, dy) = h.vector();
                let stub = (r as i64 + dy, c as i64 + dx);
                let node = (r as i64, c as i64);
                entry.push(push(stub, node, LinkKind::Entry, &mut links, &mut head_node, &mut tail_node));
                exit.push(push(node, stub, LinkKind::Exit, &mut links, &mut head_node, &mut tail_node));
            }
        }
    }

    let next = build_next_table(&links, &head_node, &tail_node);
    let net = RoadNetwork {
        rows,
        cols,
        links,
        entry,
        exit,
        next,
        head_node,
        tail_node,
    };
    net.validate()?;
    Ok(net)
}

/// Derive the (link, action) -> observation table from geometry: all links
/// leaving a link's head intersection, keyed by turn; exits terminate.
fn build_next_table(
    links: &[Link],
    head_node: &[Option<(usize, usize)>],
    tail_node: &[Option<(usize, usize)>],
) -> Vec<[Option<Obs>; 4]> {
    let mut by_tail: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, node) in tail_node.iter().enumerate() {
        if let Some(rc) = node {
            by_tail.entry(*rc).or_default().push(i);
        }
    }
    let mut next = vec![[None; 4]; links.len()];
    for (i, link) in links.iter().enumerate() {
        if link.kind == LinkKind::Exit {
            next[i][Action::Terminate.index()] = Some(Obs::End);
            continue;
        }
        let head = head_node[i].expect("non-exit links end on the grid");
        for &j in by_tail.get(&head).into_iter().flatten() {
            if let Some(a) = link.heading.turn_to(links[j].heading) {
                next[i][a.index()] = Some(Obs::Link(LinkId(j)));
            }
        }
    }
    next
}

impl RoadNetwork {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn entry_links(&self) -> &[LinkId] {
        &self.entry
    }

    pub fn exit_links(&self) -> &[LinkId] {
        &self.exit
    }

    pub fn is_entry(&self, id: LinkId) -> bool {
        self.links[id.0].kind == LinkKind::Entry
    }

    pub fn is_exit(&self, id: LinkId) -> bool {
        self.links[id.0].kind == LinkKind::Exit
    }

    /// Grid intersection a link enters, if any (exit stubs leave the grid).
    pub fn head_node(&self, id: LinkId) -> Option<(usize, usize)> {
        self.head_node[id.0]
    }

    /// Grid intersection a link leaves, if any (entry stubs come from outside).
    pub fn tail_node(&self, id: LinkId) -> Option<(usize, usize)> {
        self.tail_node[id.0]
    }

    /// The entry link whose head is intersection (r, c), if that intersection
    /// carries stubs.
    pub fn entry_at(&self, r: usize, c: usize) -> Option<LinkId> {
        self.entry
            .iter()
            .copied()
            .find(|&l| self.head_node[l.0] == Some((r, c)))
    }

    /// The exit link leaving intersection (r, c), if any.
    pub fn exit_at(&self, r: usize, c: usize) -> Option<LinkId> {
        self.exit
            .iter()
            .copied()
            .find(|&l| self.tail_node[l.0] == Some((r, c)))
    }

    /// Entry-exit pairs excluding the direct U-turn at a shared intersection.
    pub fn od_pairs(&self) -> Vec<(LinkId, LinkId)> {
        let mut out = Vec::new();
        for &e in &self.entry {
            for &x in &self.exit {
                if self.head_node[e.0] != self.tail_node[x.0] {
                    out.push((e, x));
                }
            }
        }
        out
    }

    pub fn action_mask(&self, o: Obs) -> [bool; 4] {
        match o {
            Obs::Link(l) => {
                let mut m = [false; 4];
                for (a, slot) in self.next[l.0].iter().enumerate() {
                    m[a] = slot.is_some();
                }
                m
            }
            // Start picks an entry link through its own categorical; End is
            // terminal. Neither uses the 4-action head.
            Obs::Start | Obs::End => [false; 4],
        }
    }

    /// T_o(o, a). Masked pairs are an error, never a silent redirect.
    pub fn next_observation(&self, o: Obs, a: Action) -> Result<Obs> {
        match o {
            Obs::Link(l) => self.next[l.0][a.index()].ok_or_else(|| {
                RoadError::InvalidAction(format!("action {a:?} is masked on link {}", l.0))
            }),
            Obs::Start => Err(RoadError::InvalidAction(
                "Start chooses an entry link, not a turn action".into(),
            )),
            Obs::End => Err(RoadError::InvalidAction("End has no successors".into())),
        }
    }

    /// The unique action with T_o(from, a) = to.
    pub fn action_between(&self, from: Obs, to: Obs) -> Result<Action> {
        if let Obs::Link(l) = from {
            for (a, slot) in self.next[l.0].iter().enumerate() {
                if *slot == Some(to) {
                    return Ok(ACTIONS[a]);
                }
            }
        }
        Err(RoadError::InvalidAction(format!(
            "no action connects {from:?} to {to:?}"
        )))
    }

    /// Choices available after `history`, which must begin at Start.
    pub fn valid_actions(&self, history: &[Obs]) -> Result<StepChoices> {
        if history.is_empty() {
            return Err(RoadError::BadHistory("empty history".into()));
        }
        if history[0] != Obs::Start {
            return Err(RoadError::BadHistory("history must begin at Start".into()));
        }
        for (i, pair) in history.windows(2).enumerate() {
            let ok = match (pair[0], pair[1]) {
                (Obs::Start, Obs::Link(l)) => self.is_entry(l),
                (Obs::Link(a), next) => self.next[a.0].contains(&Some(next)),
                _ => false,
            };
            if !ok {
                return Err(RoadError::BadHistory(format!(
                    "illegal transition {:?} -> {:?} at position {i}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(match *history.last().expect("nonempty") {
            Obs::Start => StepChoices::Entry(self.entry.clone()),
            Obs::Link(l) => StepChoices::Actions(self.action_mask(Obs::Link(l))),
            Obs::End => StepChoices::Finished,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        links: Vec<Link>,
        entry: Vec<LinkId>,
        exit: Vec<LinkId>,
        next: Vec<[Option<Obs>; 4]>,
        head_node: Vec<Option<(usize, usize)>>,
        tail_node: Vec<Option<(usize, usize)>>,
    ) -> RoadNetwork {
        RoadNetwork {
            rows,
            cols,
            links,
            entry,
            exit,
            next,
            head_node,
            tail_node,
        }
    }

    pub(crate) fn next_table(&self) -> &[[Option<Obs>; 4]] {
        &self.next
    }

    /// Structural invariants shared by the builder and the file loader.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RoadError::BadNetwork(msg));
        let l = self.links.len();
        if self.next.len() != l || self.head_node.len() != l || self.tail_node.len() != l {
            return bad("table sizes disagree with link count".into());
        }
        for (i, link) in self.links.iter().enumerate() {
            if link.id.0 != i {
                return bad(format!("link ids not dense at position {i}"));
            }
            let (dx, dy) = (
                link.to_xy.0 - link.from_xy.0,
                link.to_xy.1 - link.from_xy.1,
            );
            let len = (dx * dx + dy * dy).sqrt();
            if !(len > 0.0) || (len - link.length_m).abs() > 1.0e-6 * len.max(1.0) {
                return bad(format!("link {i} length {} vs geometry {len}", link.length_m));
            }
            if dx.abs() > 1.0e-9 && dy.abs() > 1.0e-9 {
                return bad(format!("link {i} is not axis-aligned"));
            }
            let unit = ((dx / len).round() as i64, (dy / len).round() as i64);
            match Heading::from_vector(unit) {
                Some(h) if h == link.heading => {}
                _ => return bad(format!("link {i} heading disagrees with geometry")),
            }
        }
        let entry_set: std::collections::BTreeSet<_> = self.entry.iter().collect();
        let exit_set: std::collections::BTreeSet<_> = self.exit.iter().collect();
        if entry_set.len() != self.entry.len() || exit_set.len() != self.exit.len() {
            return bad("duplicate entries in stub lists".into());
        }
        if entry_set.intersection(&exit_set).next().is_some() {
            return bad("a link is both entry and exit".into());
        }
        let expected_stubs = 2 * (self.rows + self.cols) - 4;
        if self.entry.len() != expected_stubs || self.exit.len() != expected_stubs {
            return bad(format!(
                "expected {expected_stubs} stubs per side, got {} entry / {} exit",
                self.entry.len(),
                self.exit.len()
            ));
        }
        for (i, link) in self.links.iter().enumerate() {
            let id = LinkId(i);
            let declared_kind = match link.kind {
                LinkKind::Entry => entry_set.contains(&id),
                LinkKind::Exit => exit_set.contains(&id),
                LinkKind::Interior => !entry_set.contains(&id) && !exit_set.contains(&id),
            };
            if !declared_kind {
                return bad(format!("link {i} kind disagrees with stub lists"));
            }
        }
        // every entry stub pairs with the exit stub through the same point.
        for &e in &self.entry {
            let matches = self
                .exit
                .iter()
                .filter(|&&x| {
                    self.links[x.0].to_xy == self.links[e.0].from_xy
                        && self.links[x.0].from_xy == self.links[e.0].to_xy
                })
                .count();
            if matches != 1 {
                return bad(format!("entry link {} has {matches} paired exits", e.0));
            }
        }
        for (i, row) in self.next.iter().enumerate() {
            let link = &self.links[i];
            let term = row[Action::Terminate.index()];
            match link.kind {
                LinkKind::Exit => {
                    if term != Some(Obs::End) {
                        return bad(format!("exit link {i} must terminate to End"));
                    }
                    if row[..3].iter().any(|s| s.is_some()) {
                        return bad(format!("exit link {i} has turn successors"));
                    }
                }
                _ => {
                    if term.is_some() {
                        return bad(format!("non-exit link {i} may not terminate"));
                    }
                    if row[..3].iter().all(|s| s.is_none()) {
                        return bad(format!("link {i} is a dead end"));
                    }
                }
            }
            for (a, slot) in row.iter().enumerate().take(3) {
                if let Some(obs) = slot {
                    let m = match obs {
                        Obs::Link(m) => *m,
                        _ => return bad(format!("turn action on link {i} leads off the graph")),
                    };
                    let succ = &self.links[m.0];
                    if succ.from_xy != link.to_xy {
                        return bad(format!("links {i} -> {} are not adjacent", m.0));
                    }
                    if link.heading.turn_to(succ.heading) != Action::from_index(a) {
                        return bad(format!("links {i} -> {} disagree with turn geometry", m.0));
                    }
                    if succ.kind == LinkKind::Entry {
                        return bad(format!("entry link {} has a predecessor", m.0));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_counts_match_published_network() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        assert_eq!(net.entry_links().len(), 12);
        assert_eq!(net.exit_links().len(), 12);
        assert_eq!(net.od_pairs().len(), 132);
        assert_eq!(net.link_count(), 72);
        let interior = net
            .links()
            .iter()
            .filter(|l| l.kind == LinkKind::Interior)
            .count();
        assert_eq!(interior, 48);
    }

    #[test]
    fn two_by_two_counts() {
        let net = build_grid(2, 2, 150.0).expect("valid grid");
        assert_eq!(net.entry_links().len(), 4);
        assert_eq!(net.exit_links().len(), 4);
        assert_eq!(net.od_pairs().len(), 12);
        assert_eq!(net.link_count(), 16);
    }

    #[test]
    fn every_three_by_three_link_can_continue_or_terminate() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        for link in net.links() {
            let mask = net.action_mask(Obs::Link(link.id));
            if net.is_exit(link.id) {
                assert_eq!(mask, [false, false, false, true]);
            } else {
                assert!(mask[..3].iter().any(|&b| b), "link {} stuck", link.id.0);
                assert!(!mask[3], "link {} may not terminate", link.id.0);
            }
        }
    }

    #[test]
    fn straight_chain_crosses_a_row_of_interiors() {
        let net = build_grid(2, 4, 100.0).expect("valid grid");
        let entry = net.entry_at(0, 0).expect("corner has stubs");
        let mut o = Obs::Link(entry);
        let mut interior = 0;
        loop {
            o = net.next_observation(o, Action::Straight).expect("straight is open");
            let Obs::Link(l) = o else { panic!("chain left the graph") };
            if net.is_exit(l) {
                break;
            }
            interior += 1;
        }
        assert_eq!(interior, 3); // cols - 1 interior links before the exit stub
        let end = net.next_observation(o, Action::Terminate).expect("exit terminates");
        assert_eq!(end, Obs::End);
    }

    #[test]
    fn masked_action_errors_instead_of_redirecting() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        let interior = net
            .links()
            .iter()
            .find(|l| l.kind == LinkKind::Interior)
            .expect("grid has interior links");
        assert!(matches!(
            net.next_observation(Obs::Link(interior.id), Action::Terminate),
            Err(RoadError::InvalidAction(_))
        ));
    }

    #[test]
    fn no_transition_reverses_heading() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        for link in net.links() {
            for a in ACTIONS {
                if let Ok(Obs::Link(m)) = net.next_observation(Obs::Link(link.id), a) {
                    assert_ne!(
                        net.link(m).heading,
                        link.heading.reverse(),
                        "u-turn via {a:?} on link {}",
                        link.id.0
                    );
                }
            }
        }
    }

    #[test]
    fn action_between_is_unique_and_total_on_successors() {
        let net = build_grid(4, 4, 200.0).expect("valid grid");
        for link in net.links() {
            let o = Obs::Link(link.id);
            for a in ACTIONS {
                if let Ok(succ) = net.next_observation(o, a) {
                    assert_eq!(net.action_between(o, succ).expect("connected").index(), a.index());
                }
            }
        }
    }

    #[test]
    fn history_validation_catches_illegal_jumps() {
        let net = build_grid(3, 3, 100.0).expect("valid grid");
        assert!(matches!(
            net.valid_actions(&[]),
            Err(RoadError::BadHistory(_))
        ));
        let e = net.entry_links()[0];
        assert!(matches!(
            net.valid_actions(&[Obs::Link(e)]),
            Err(RoadError::BadHistory(_))
        ));
        // a self-jump is never a legal transition
        assert!(matches!(
            net.valid_actions(&[Obs::Start, Obs::Link(e), Obs::Link(e)]),
            Err(RoadError::BadHistory(_))
        ));
        match net.valid_actions(&[Obs::Start]).expect("fresh history") {
            StepChoices::Entry(list) => assert_eq!(list.len(), net.entry_links().len()),
            other => panic!("expected entry choices, got {other:?}"),
        }
    }

    #[test]
    fn after_end_nothing_is_available() {
        let net = build_grid(2, 2, 100.0).expect("valid grid");
        let e = net.entry_links()[0];
        let mut hist = vec![Obs::Start, Obs::Link(e)];
        // walk straight until the exit, then terminate.
        loop {
            let last = *hist.last().expect("nonempty");
            let Obs::Link(l) = last else { break };
            if net.is_exit(l) {
                hist.push(Obs::End);
                break;
            }
            let mask = net.action_mask(last);
            let a = ACTIONS[mask.iter().position(|&b| b).expect("not stuck")];
            hist.push(net.next_observation(last, a).expect("unmasked"));
        }
        assert_eq!(net.valid_actions(&hist).expect("legal walk"), StepChoices::Finished);
    }

    #[test]
    fn grid_dimension_bounds_are_enforced() {
        assert!(build_grid(1, 4, 100.0).is_err());
        assert!(build_grid(25, 17, 100.0).is_err()); // 425 > 400
        assert!(build_grid(4, 4, 0.0).is_err());
    }
}
