use std::collections::BTreeSet;

use roadnet::LinkId;

use crate::{DemandError, Result};

/// Route-choice behavior over an enumerated route set. The underlying traffic
/// package never documents its internals, so these are the standard
/// transportation forms with fixed defaults.
#[derive(Clone, Debug, PartialEq)]
pub enum RouteChoiceModel {
    /// Greedy free-flow choice: all mass on the cheapest route.
    Fixed,
    /// softmax(-theta * cost).
    Logit { theta: f64 },
    /// Logit with a commonality penalty for overlapping routes.
    CLogit { theta: f64, beta_cf: f64, gamma_cf: f64 },
    /// cost^(-alpha), normalized.
    Proportional { alpha: f64 },
    /// Binomial(K-1, p) pmf over the cost ranks of the K routes.
    Binomial { p: f64 },
}

impl RouteChoiceModel {
    pub fn logit() -> Self {
        RouteChoiceModel::Logit { theta: 1.0 }
    }

    pub fn clogit() -> Self {
        RouteChoiceModel::CLogit {
            theta: 1.0,
            beta_cf: 1.0,
            gamma_cf: 1.0,
        }
    }

    pub fn proportional() -> Self {
        RouteChoiceModel::Proportional { alpha: 2.0 }
    }

    pub fn binomial() -> Self {
        RouteChoiceModel::Binomial { p: 0.3 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RouteChoiceModel::Fixed => "fixed",
            RouteChoiceModel::Logit { .. } => "logit",
            RouteChoiceModel::CLogit { .. } => "clogit",
            RouteChoiceModel::Proportional { .. } => "proportional",
            RouteChoiceModel::Binomial { .. } => "binomial",
        }
    }

    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            RouteChoiceModel::Fixed => vec![],
            RouteChoiceModel::Logit { theta } => vec![("theta", theta)],
            RouteChoiceModel::CLogit {
                theta,
                beta_cf,
                gamma_cf,
            } => vec![("theta", theta), ("beta_cf", beta_cf), ("gamma_cf", gamma_cf)],
            RouteChoiceModel::Proportional { alpha } => vec![("alpha", alpha)],
            RouteChoiceModel::Binomial { p } => vec![("p", p)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DemandError::BadInput(msg.into()));
        match *self {
            RouteChoiceModel::Fixed => Ok(()),
            RouteChoiceModel::Logit { theta } => {
                if theta > 0.0 { Ok(()) } else { bad("theta must be > 0") }
            }
            RouteChoiceModel::CLogit {
                theta,
                beta_cf: _,
                gamma_cf,
            } => {
                if theta > 0.0 && gamma_cf > 0.0 {
                    Ok(())
                } else {
                    bad("theta and gamma_cf must be > 0")
                }
            }
            RouteChoiceModel::Proportional { alpha } => {
                if alpha > 0.0 { Ok(()) } else { bad("alpha must be > 0") }
            }
            RouteChoiceModel::Binomial { p } => {
                if p > 0.0 && p < 1.0 { Ok(()) } else { bad("p must be in (0,1)") }
            }
        }
    }
}

fn softmax(utils: &[f64]) -> Vec<f64> {
    let m = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utils.iter().map(|u| (u - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn binom_coeff(n: usize, r: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..r {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Indices sorted by (cost, lexicographic route content): the consistent
/// tie-break that makes ranking independent of input order.
fn cost_rank_order(routes: &[Vec<LinkId>], costs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..routes.len()).collect();
    order.sort_by(|&a, &b| {
        costs[a]
            .partial_cmp(&costs[b])
            .expect("finite costs")
            .then_with(|| routes[a].cmp(&routes[b]))
    });
    order
}

/// Choice distribution over routes. Costs are free-flow route lengths in
/// links; every model returns a vector summing to 1.
pub fn route_choice_probabilities(
    routes: &[Vec<LinkId>],
    costs: &[f64],
    model: &RouteChoiceModel,
) -> Result<Vec<f64>> {
    if routes.is_empty() {
        return Err(DemandError::BadInput("empty route set".into()));
    }
    if routes.len() != costs.len() {
        return Err(DemandError::BadInput(format!(
            "{} routes vs {} costs",
            routes.len(),
            costs.len()
        )));
    }
    if costs.iter().any(|c| !(c > &0.0) || !c.is_finite()) {
        return Err(DemandError::BadInput("costs must be positive".into()));
    }
    model.validate()?;

    let k = routes.len();
    let mut probs = match *model {
        RouteChoiceModel::Fixed => {
            let best = *cost_rank_order(routes, costs)
                .first()
                .expect("nonempty route set");
            let mut p = vec![0.0; k];
            p[best] = 1.0;
            p
        }
        RouteChoiceModel::Logit { theta } => {
            softmax(&costs.iter().map(|c| -theta * c).collect::<Vec<_>>())
        }
        RouteChoiceModel::CLogit {
            theta,
            beta_cf,
            gamma_cf,
        } => {
            let sets: Vec<BTreeSet<LinkId>> = routes
                .iter()
                .map(|r| r.iter().copied().collect())
                .collect();
            let lens: Vec<f64> = routes.iter().map(|r| r.len() as f64).collect();
            let utils: Vec<f64> = (0..k)
                .map(|i| {
                    let cf: f64 = (0..k)
                        .map(|j| {
                            let shared = sets[i].intersection(&sets[j]).count() as f64;
                            (shared / (lens[i] * lens[j]).sqrt()).powf(gamma_cf)
                        })
                        .sum::<f64>()
                        .ln();
                    -theta * costs[i] - beta_cf * cf
                })
                .collect();
            softmax(&utils)
        }
        RouteChoiceModel::Proportional { alpha } => {
            let raw: Vec<f64> = costs.iter().map(|c| c.powf(-alpha)).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|r| r / z).collect()
        }
        RouteChoiceModel::Binomial { p } => {
            let order = cost_rank_order(routes, costs);
            let n = k - 1;
            let mut out = vec![0.0; k];
            for (rank, &idx) in order.iter().enumerate() {
                out[idx] = binom_coeff(n, rank) * p.powi(rank as i32) * (1.0 - p).powi((n - rank) as i32);
            }
            out
        }
    };

    let z: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= z;
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1.0e-12;

    fn route(ids: &[usize]) -> Vec<LinkId> {
        ids.iter().map(|&i| LinkId(i)).collect()
    }

    fn assert_dist(p: &[f64]) {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < EPS);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn equal_cost_logit_splits_evenly() {
        let routes = vec![route(&[0, 1]), route(&[0, 2])];
        let p = route_choice_probabilities(&routes, &[5.0, 5.0], &RouteChoiceModel::Logit { theta: 2.7 })
            .expect("valid input");
        assert!((p[0] - 0.5).abs() < EPS && (p[1] - 0.5).abs() < EPS);
    }

    #[test]
    fn fixed_takes_the_cheapest() {
        let routes = vec![route(&[0]), route(&[1]), route(&[2])];
        let p = route_choice_probabilities(&routes, &[4.0, 5.0, 6.0], &RouteChoiceModel::Fixed)
            .expect("valid input");
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn fixed_breaks_cost_ties_by_route_content() {
        let routes = vec![route(&[7, 8]), route(&[3, 4]), route(&[5, 6])];
        let p = route_choice_probabilities(&routes, &[4.0, 4.0, 4.0], &RouteChoiceModel::Fixed)
            .expect("valid input");
        assert_eq!(p, vec![0.0, 1.0, 0.0]); // [3,4] is lexicographically least
    }

    #[test]
    fn binomial_three_routes_matches_pmf() {
        let routes = vec![route(&[0]), route(&[1]), route(&[2])];
        let p = route_choice_probabilities(&routes, &[4.0, 5.0, 6.0], &RouteChoiceModel::Binomial { p: 0.3 })
            .expect("valid input");
        assert!((p[0] - 0.49).abs() < EPS);
        assert!((p[1] - 0.42).abs() < EPS);
        assert!((p[2] - 0.09).abs() < EPS);
        assert_dist(&p);
    }

    #[test]
    fn proportional_follows_inverse_square() {
        let routes = vec![route(&[0]), route(&[1])];
        let p = route_choice_probabilities(&routes, &[1.0, 2.0], &RouteChoiceModel::Proportional { alpha: 2.0 })
            .expect("valid input");
        // 1 vs 1/4 -> 0.8 / 0.2
        assert!((p[0] - 0.8).abs() < EPS && (p[1] - 0.2).abs() < EPS);
    }

    #[test]
    fn clogit_penalizes_the_overlapping_pair() {
        // routes a and b share a link, c is disjoint; equal costs. The shared
        // pair must lose mass to the independent route.
        let routes = vec![route(&[0, 1, 9]), route(&[0, 2, 9]), route(&[3, 4, 5])];
        let costs = [3.0, 3.0, 3.0];
        let p = route_choice_probabilities(&routes, &costs, &RouteChoiceModel::clogit())
            .expect("valid input");
        assert_dist(&p);
        assert!((p[0] - p[1]).abs() < EPS, "symmetric overlap stays symmetric");
        assert!(p[2] > p[0], "disjoint route must be preferred");
    }

    #[test]
    fn every_model_yields_a_distribution() {
        let routes = vec![
            route(&[0, 1, 2]),
            route(&[0, 3, 2]),
            route(&[4, 5, 6, 7]),
            route(&[4, 5, 8, 7]),
        ];
        let costs = [3.0, 3.0, 4.0, 4.0];
        for model in [
            RouteChoiceModel::Fixed,
            RouteChoiceModel::logit(),
            RouteChoiceModel::clogit(),
            RouteChoiceModel::proportional(),
            RouteChoiceModel::binomial(),
        ] {
            let p = route_choice_probabilities(&routes, &costs, &model).expect("valid input");
            assert_dist(&p);
        }
    }

    #[test]
    fn permutation_equivariance_with_ties() {
        let routes = vec![
            route(&[0, 1, 2]),
            route(&[0, 3, 2]),
            route(&[4, 5, 6, 7]),
            route(&[4, 5, 8, 7]),
        ];
        let costs = [3.0, 3.0, 4.0, 4.0];
        let perm = [2usize, 0, 3, 1];
        let routes_p: Vec<_> = perm.iter().map(|&i| routes[i].clone()).collect();
        let costs_p: Vec<_> = perm.iter().map(|&i| costs[i]).collect();
        for model in [
            RouteChoiceModel::Fixed,
            RouteChoiceModel::logit(),
            RouteChoiceModel::clogit(),
            RouteChoiceModel::proportional(),
            RouteChoiceModel::binomial(),
        ] {
            let p = route_choice_probabilities(&routes, &costs, &model).expect("valid input");
            let q = route_choice_probabilities(&routes_p, &costs_p, &model).expect("valid input");
            for (k, &i) in perm.iter().enumerate() {
                assert!(
                    (q[k] - p[i]).abs() < EPS,
                    "{} not equivariant at {k}",
                    model.label()
                );
            }
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(route_choice_probabilities(&[], &[], &RouteChoiceModel::Fixed).is_err());
        let routes = vec![route(&[0])];
        assert!(route_choice_probabilities(&routes, &[0.0], &RouteChoiceModel::Fixed).is_err());
        assert!(
            route_choice_probabilities(&routes, &[1.0], &RouteChoiceModel::Logit { theta: -1.0 })
                .is_err()
        );
        assert!(
            route_choice_probabilities(&routes, &[1.0], &RouteChoiceModel::Binomial { p: 1.0 })
                .is_err()
        );
    }
}
