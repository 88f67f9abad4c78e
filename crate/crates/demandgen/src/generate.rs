use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use roadnet::{enumerate_routes, LinkId, RoadNetwork};

use crate::choice::{route_choice_probabilities, RouteChoiceModel};
use crate::io::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::pattern::DemandPattern;
use crate::{DemandError, Result};

/// Route enumeration bounds used when building choice sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenOptions {
    pub slack: usize,
    pub cap: usize,
    pub horizon_min: f64,
    pub link_travel_min: f64,
}

impl Default for GenOptions {
    fn default() -> GenOptions {
        GenOptions {
            slack: 2,
            cap: 12,
            horizon_min: 60.0,
            link_travel_min: 1.0,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent per-vehicle generator: mixing the dataset seed before the
/// XOR keeps streams for indices i and i+1 unrelated.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ index)
}

/// Draw an index proportional to `weights` via one uniform and a cumulative
/// scan. Exact argument order keeps datasets reproducible across platforms.
pub fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    debug_assert!(!weights.is_empty());
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

struct OdChoice {
    routes: Vec<Vec<LinkId>>,
    probs: Vec<f64>,
}

struct ChoiceSets {
    weights: Vec<f64>,
    choices: Vec<OdChoice>,
}

fn build_choice_sets(
    net: &RoadNetwork,
    pattern: &DemandPattern,
    model: &RouteChoiceModel,
    opts: &GenOptions,
) -> Result<ChoiceSets> {
    let mut weights = Vec::new();
    let mut choices = Vec::new();
    for ((o, d), w) in pattern.weighted_pairs(net) {
        let routes = enumerate_routes(net, o, d, opts.slack, opts.cap)?;
        if routes.is_empty() {
            return Err(DemandError::BadInput(format!(
                "no route from link {} to link {} within slack {}",
                o.0, d.0, opts.slack
            )));
        }
        let costs: Vec<f64> = routes.iter().map(|r| r.len() as f64).collect();
        let probs = route_choice_probabilities(&routes, &costs, model)?;
        weights.push(w);
        choices.push(OdChoice { routes, probs });
    }
    Ok(ChoiceSets { weights, choices })
}

/// Sample `n` trips: each vehicle independently draws an OD pair by demand
/// weight, a route from the choice model, and a departure uniform on the
/// horizon. The draw order is fixed so streams never shift between runs.
pub fn generate_dataset_opts(
    net: &RoadNetwork,
    pattern: &DemandPattern,
    model: &RouteChoiceModel,
    n: usize,
    seed: u64,
    opts: GenOptions,
) -> Result<TrajectoryDataset> {
    if n == 0 {
        return Err(DemandError::BadInput("dataset size must be positive".into()));
    }
    if !(opts.horizon_min > 0.0) || !(opts.link_travel_min > 0.0) {
        return Err(DemandError::BadInput(
            "horizon and link travel time must be positive".into(),
        ));
    }
    pattern.validate(net)?;
    model.validate()?;
    let sets = build_choice_sets(net, pattern, model, &opts)?;

    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(seed, i as u64);
        let od = sample_index(&mut rng, &sets.weights);
        let route = sample_index(&mut rng, &sets.choices[od].probs);
        let depart = rng.gen::<f64>() * opts.horizon_min;
        trajectories.push(Trajectory::new(
            i as u64,
            sets.choices[od].routes[route].clone(),
            depart,
        ));
    }

    let mut params = BTreeMap::new();
    for (k, v) in model.params() {
        params.insert(k.to_string(), v);
    }
    let meta = DatasetMeta {
        seed,
        pattern: pattern.kind.label().to_string(),
        model: model.label().to_string(),
        params,
        n,
        horizon_min: opts.horizon_min,
        link_travel_min: opts.link_travel_min,
        slack: opts.slack,
        cap: opts.cap,
    };
    Ok(TrajectoryDataset { trajectories, meta })
}

pub fn generate_dataset(
    net: &RoadNetwork,
    pattern: &DemandPattern,
    model: &RouteChoiceModel,
    n: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    generate_dataset_opts(net, pattern, model, n, seed, GenOptions::default())
}

/// Disjoint random split; the train side gets round(ratio * n) trips and both
/// halves keep ascending id order.
pub fn split_train_test(
    ds: &TrajectoryDataset,
    ratio: f64,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DemandError::BadInput(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    let n = ds.trajectories.len();
    if n < 2 {
        return Err(DemandError::BadInput("need at least two trips to split".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let k = (ratio * n as f64).round() as usize;
    let k = k.clamp(1, n - 1);
    let mut train_idx = idx[..k].to_vec();
    let mut test_idx = idx[k..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let take = |ids: &[usize]| -> Vec<Trajectory> {
        ids.iter().map(|&i| ds.trajectories[i].clone()).collect()
    };
    let mut train_meta = ds.meta.clone();
    train_meta.n = train_idx.len();
    let mut test_meta = ds.meta.clone();
    test_meta.n = test_idx.len();
    Ok((
        TrajectoryDataset {
            trajectories: take(&train_idx),
            meta: train_meta,
        },
        TrajectoryDataset {
            trajectories: take(&test_idx),
            meta: test_meta,
        },
    ))
}
