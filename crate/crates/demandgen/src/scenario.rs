use std::collections::BTreeMap;

use rand::Rng;
use roadnet::{build_grid, enumerate_routes, Heading, LinkId, RoadNetwork};

use crate::generate::stream;
use crate::io::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::{DemandError, Result};

/// Context-switch benchmark: a scheduled corridor platoon heats one flag link
/// for a contiguous window, and main-demand vehicles pick their route by
/// whether the flag was occupied in the minute before their departure. The
/// route label is a deterministic function of the observable traffic state,
/// never of hidden coin flips.
#[derive(Clone, Debug)]
pub struct FlipScenario {
    pub net: RoadNetwork,
    /// Corridor platoon; the accumulation source. Kept out of any model split.
    pub background: TrajectoryDataset,
    /// Rule-routed vehicles; the modeling target.
    pub main: TrajectoryDataset,
    pub flag_link: LinkId,
    /// Straight-at-the-branch route, taken when the flag is cold.
    pub route_a: Vec<LinkId>,
    /// Left-at-the-branch route, taken when the flag is hot.
    pub route_b: Vec<LinkId>,
    /// The flag link is continuously occupied over [hot_lo, hot_hi).
    pub hot_lo: f64,
    pub hot_hi: f64,
}

impl FlipScenario {
    /// Fraction of the horizon whose departures map to route B.
    pub fn branch_rate(&self) -> f64 {
        let horizon = self.main.meta.horizon_min;
        ((self.hot_hi + 1.0 - self.hot_lo) / horizon).clamp(0.0, 1.0)
    }
}

pub fn build_flip_scenario(
    n_main: usize,
    n_background: usize,
    seed: u64,
) -> Result<FlipScenario> {
    if n_main == 0 {
        return Err(DemandError::BadInput("need at least one main vehicle".into()));
    }
    if n_background < 40 {
        // headway 40/n must stay within the one-minute link occupancy or the
        // hot window develops gaps and the branch rule stops being an interval
        return Err(DemandError::BadInput(format!(
            "corridor needs >= 40 vehicles for a gap-free window, got {n_background}"
        )));
    }
    let net = build_grid(4, 4, 200.0)?;
    let horizon = 60.0;
    let travel = 1.0;

    // corridor across the bottom row, west to east
    let corridor = {
        let o = net.entry_at(0, 0).expect("west entry at row 0");
        let d = net.exit_at(0, 3).expect("east exit at row 0");
        let routes = enumerate_routes(&net, o, d, 0, 2)?;
        if routes.len() != 1 || routes[0].len() != 5 {
            return Err(DemandError::BadInput(
                "corridor route set changed shape".into(),
            ));
        }
        routes.into_iter().next().expect("checked length")
    };
    let flag_link = corridor[2];

    let mut background_trajs = Vec::with_capacity(n_background);
    for i in 0..n_background {
        let depart = 40.0 * i as f64 / n_background as f64;
        background_trajs.push(Trajectory::new(i as u64, corridor.clone(), depart));
    }
    // flag occupancy: vehicle i covers [depart_i + 2, depart_i + 3)
    let hot_lo = 2.0;
    let hot_hi = 40.0 * (n_background as f64 - 1.0) / n_background as f64 + 3.0;

    // main demand: one OD with exactly two equal-cost routes
    let o = net.entry_at(2, 0).expect("west entry at row 2");
    let d = net.exit_at(3, 1).expect("north exit at column 1");
    let routes = enumerate_routes(&net, o, d, 0, 4)?;
    if routes.len() != 2 || routes.iter().any(|r| r.len() != 4) {
        return Err(DemandError::BadInput("main route set changed shape".into()));
    }
    let mut route_a = None;
    let mut route_b = None;
    for r in routes {
        match net.link(r[1]).heading {
            Heading::East => route_a = Some(r),
            Heading::North => route_b = Some(r),
            h => {
                return Err(DemandError::BadInput(format!(
                    "unexpected branch heading {h:?}"
                )))
            }
        }
    }
    let (route_a, route_b) = match (route_a, route_b) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(DemandError::BadInput("branch routes not found".into())),
    };

    let mut main_trajs = Vec::with_capacity(n_main);
    for i in 0..n_main {
        let mut rng = stream(seed, i as u64);
        let depart = rng.gen::<f64>() * horizon;
        // route B iff the one-minute bin ending at departure overlaps the
        // hot window: depart in (hot_lo, hot_hi + 1)
        let hot = depart > hot_lo && depart - 1.0 < hot_hi;
        let route = if hot { route_b.clone() } else { route_a.clone() };
        main_trajs.push(Trajectory::new(i as u64, route, depart));
    }

    let base_meta = |pattern: &str, model: &str, n: usize| DatasetMeta {
        seed,
        pattern: pattern.to_string(),
        model: model.to_string(),
        params: BTreeMap::new(),
        n,
        horizon_min: horizon,
        link_travel_min: travel,
        slack: 0,
        cap: 4,
    };
    Ok(FlipScenario {
        background: TrajectoryDataset {
            trajectories: background_trajs,
            meta: base_meta("flip_background", "schedule", n_background),
        },
        main: TrajectoryDataset {
            trajectories: main_trajs,
            meta: base_meta("flip_main", "rule", n_main),
        },
        net,
        flag_link,
        route_a,
        route_b,
        hot_lo,
        hot_hi,
    })
}
