use std::collections::BTreeSet;

use roadnet::{Heading, LinkId, RoadNetwork};

use crate::{DemandError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternKind {
    SingleOd,
    OneWayMultiOd,
    TwoWayMultiOd,
}

impl PatternKind {
    pub fn label(self) -> &'static str {
        match self {
            PatternKind::SingleOd => "single_od",
            PatternKind::OneWayMultiOd => "one_way_multi_od",
            PatternKind::TwoWayMultiOd => "two_way_multi_od",
        }
    }
}

/// Demand over the network's OD pairs: a set of major pairs at one weight,
/// everything else at the background weight.
#[derive(Clone, Debug)]
pub struct DemandPattern {
    pub kind: PatternKind,
    pub majors: Vec<(LinkId, LinkId)>,
    pub major_weight: f64,
    pub background_weight: f64,
}

fn west_entries(net: &RoadNetwork) -> Vec<LinkId> {
    net.entry_links()
        .iter()
        .copied()
        .filter(|&l| net.link(l).heading == Heading::East)
        .collect()
}

fn east_exits(net: &RoadNetwork) -> Vec<LinkId> {
    net.exit_links()
        .iter()
        .copied()
        .filter(|&l| net.link(l).heading == Heading::East)
        .collect()
}

fn east_entries(net: &RoadNetwork) -> Vec<LinkId> {
    net.entry_links()
        .iter()
        .copied()
        .filter(|&l| net.link(l).heading == Heading::West)
        .collect()
}

fn west_exits(net: &RoadNetwork) -> Vec<LinkId> {
    net.exit_links()
        .iter()
        .copied()
        .filter(|&l| net.link(l).heading == Heading::West)
        .collect()
}

fn cross(from: &[LinkId], to: &[LinkId]) -> Vec<(LinkId, LinkId)> {
    let mut out = Vec::with_capacity(from.len() * to.len());
    for &o in from {
        for &d in to {
            out.push((o, d));
        }
    }
    out
}

impl DemandPattern {
    /// One entry on the west edge to one exit on the north edge, offset so the
    /// shortest-route set is non-trivial (6 routes on the 4x4 default grid).
    pub fn single_od(net: &RoadNetwork) -> Result<DemandPattern> {
        let origin = net.entry_at(1, 0).ok_or_else(|| {
            DemandError::BadInput("grid too small for the single-OD scenario".into())
        })?;
        let dest = net.exit_at(net.rows() - 1, net.cols() - 2).ok_or_else(|| {
            DemandError::BadInput("grid too small for the single-OD scenario".into())
        })?;
        let p = DemandPattern {
            kind: PatternKind::SingleOd,
            majors: vec![(origin, dest)],
            major_weight: 1.0,
            background_weight: 0.0,
        };
        p.validate(net)?;
        Ok(p)
    }

    /// Major westbound boundary flows: every west-edge entry to every
    /// east-edge exit, over a weight-1 background on all other pairs.
    pub fn one_way(net: &RoadNetwork) -> Result<DemandPattern> {
        let majors = cross(&west_entries(net), &east_exits(net));
        let p = DemandPattern {
            kind: PatternKind::OneWayMultiOd,
            majors,
            major_weight: 10.0,
            background_weight: 1.0,
        };
        p.validate(net)?;
        Ok(p)
    }

    /// Major flows in both directions across the grid.
    pub fn two_way(net: &RoadNetwork) -> Result<DemandPattern> {
        let mut majors = cross(&west_entries(net), &east_exits(net));
        majors.extend(cross(&east_entries(net), &west_exits(net)));
        let p = DemandPattern {
            kind: PatternKind::TwoWayMultiOd,
            majors,
            major_weight: 10.0,
            background_weight: 1.0,
        };
        p.validate(net)?;
        Ok(p)
    }

    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        if self.major_weight < 0.0 || self.background_weight < 0.0 {
            return Err(DemandError::BadInput("weights must be >= 0".into()));
        }
        for &(o, d) in &self.majors {
            if !net.is_entry(o) {
                return Err(DemandError::BadInput(format!(
                    "major origin {} is not an entry link",
                    o.0
                )));
            }
            if !net.is_exit(d) {
                return Err(DemandError::BadInput(format!(
                    "major destination {} is not an exit link",
                    d.0
                )));
            }
            if net.head_node(o) == net.tail_node(d) {
                return Err(DemandError::BadInput(format!(
                    "major pair ({}, {}) is a same-intersection U-turn",
                    o.0, d.0
                )));
            }
        }
        if self.weighted_pairs(net).is_empty() {
            return Err(DemandError::BadInput(
                "pattern carries no positive-weight OD pair".into(),
            ));
        }
        Ok(())
    }

    /// Positive-weight OD pairs in the network's canonical pair order.
    pub fn weighted_pairs(&self, net: &RoadNetwork) -> Vec<((LinkId, LinkId), f64)> {
        let major_set: BTreeSet<(LinkId, LinkId)> = self.majors.iter().copied().collect();
        net.od_pairs()
            .into_iter()
            .filter_map(|pair| {
                let w = if major_set.contains(&pair) {
                    self.major_weight
                } else {
                    self.background_weight
                };
                (w > 0.0).then_some((pair, w))
            })
            .collect()
    }
}
