use roadnet::RoadNetwork;

use crate::io::TrajectoryDataset;
use crate::{DemandError, Result};

/// Link occupancy history: for each link, `bins` values covering the window
/// ending at the query time, each normalized by that link's busiest bin over
/// the whole horizon. Values land in [0, 1]; links never visited stay 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficState {
    pub accumulation: Vec<Vec<f64>>,
    pub bin_min: f64,
}

impl TrafficState {
    pub fn links(&self) -> usize {
        self.accumulation.len()
    }

    pub fn bins(&self) -> usize {
        self.accumulation.first().map_or(0, |r| r.len())
    }

    /// Row-major flatten, link-major: the model input vector.
    pub fn flattened(&self) -> Vec<f64> {
        self.accumulation.iter().flatten().copied().collect()
    }
}

fn overlap(a: f64, b: f64, lo: f64, hi: f64) -> bool {
    a < hi && lo < b
}

/// Occupancy of `links[j]` spans [depart + j*travel, depart + (j+1)*travel).
/// Bins tile the axis in phase with `at_time`, so the same vehicle-minutes
/// that normalize a bin are the ones that can appear in it.
pub fn compute_accumulation(
    ds: &TrajectoryDataset,
    net: &RoadNetwork,
    at_time: f64,
    bins: usize,
    bin_min: f64,
) -> Result<TrafficState> {
    if !(at_time >= 0.0) {
        return Err(DemandError::BadInput(format!(
            "accumulation query at negative time {at_time}"
        )));
    }
    if bins == 0 || !(bin_min > 0.0) {
        return Err(DemandError::BadInput("need at least one positive-width bin".into()));
    }
    let travel = ds.meta.link_travel_min;
    if !(travel > 0.0) {
        return Err(DemandError::BadData("non-positive link travel time".into()));
    }
    let n_links = net.link_count();

    let data_end = ds
        .trajectories
        .iter()
        .map(|t| t.depart + t.links.len() as f64 * travel)
        .fold(0.0f64, f64::max);
    // Tile index k covers [at_time + k*bin, at_time + (k+1)*bin). Tiles that
    // can intersect [0, data_end) run from k_lo to k_hi inclusive.
    let k_lo = (-at_time / bin_min).floor() as i64;
    let k_hi = ((data_end - at_time) / bin_min).ceil() as i64;
    let n_tiles = (k_hi - k_lo + 1).max(1) as usize;
    let tile_of = |t: f64| -> i64 { ((t - at_time) / bin_min).floor() as i64 };

    // counts[link][tile] = vehicle-minutes spent on the link during the tile
    let mut counts = vec![vec![0.0f64; n_tiles]; n_links];
    for t in &ds.trajectories {
        for (j, l) in t.links.iter().enumerate() {
            if l.0 >= n_links {
                return Err(DemandError::BadData(format!(
                    "trajectory {} visits unknown link {}",
                    t.id, l.0
                )));
            }
            let lo = t.depart + j as f64 * travel;
            let hi = lo + travel;
            let first = tile_of(lo).max(k_lo);
            let last = tile_of(hi - 1e-12).min(k_hi);
            for k in first..=last {
                let t_lo = at_time + k as f64 * bin_min;
                let t_hi = t_lo + bin_min;
                if overlap(lo, hi, t_lo, t_hi) {
                    let sliver = hi.min(t_hi) - lo.max(t_lo);
                    counts[l.0][(k - k_lo) as usize] += sliver;
                }
            }
        }
    }

    let mut accumulation = vec![vec![0.0f64; bins]; n_links];
    for (l, row) in counts.iter().enumerate() {
        let max = row.iter().fold(0.0f64, |a, &b| a.max(b));
        if max <= 0.0 {
            continue;
        }
        for (b, slot) in accumulation[l].iter_mut().enumerate() {
            // output bin b covers [at_time - (bins - b)*bin, ...): tile index
            let k = -(bins as i64) + b as i64;
            if k < k_lo || k > k_hi {
                continue;
            }
            *slot = row[(k - k_lo) as usize] / max;
        }
    }
    Ok(TrafficState {
        accumulation,
        bin_min,
    })
}
