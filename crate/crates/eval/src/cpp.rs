//! Correct-path probability: the mass a model puts on the true k-step
//! continuation of a test prefix, summarized as a CCDF and its AUC.

use crate::{EvalError, NextTokenModel, Result, TokenSeq};

/// Complementary CDF of a score sample on the grid {0.00, 0.01, ..., 1.00}.
#[derive(Clone, Debug, PartialEq)]
pub struct Ccdf {
    /// `values[i]` = share of cases with score ≥ i/100.
    pub values: Vec<f64>,
}

impl Ccdf {
    pub fn grid() -> impl Iterator<Item = f64> {
        (0..=100).map(|i| i as f64 / 100.0)
    }

    /// Trapezoidal area under the CCDF curve over [0, 1]. Summing the
    /// midpoints first and dividing once keeps the all-ones curve at
    /// exactly 1.0.
    pub fn auc(&self) -> f64 {
        let mut mids = 0.0;
        for i in 0..self.values.len() - 1 {
            mids += (self.values[i] + self.values[i + 1]) / 2.0;
        }
        (mids / 100.0).clamp(0.0, 1.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,ccdf\n");
        for (x, v) in Ccdf::grid().zip(&self.values) {
            s.push_str(&format!("{x},{v}\n"));
        }
        s
    }
}

/// CCDF of `scores`, counting a case at grid point x when score ≥ x.
pub fn ccdf(scores: &[f64]) -> Result<Ccdf> {
    if scores.is_empty() {
        return Err(EvalError::BadInput("ccdf needs at least one score".into()));
    }
    let n = scores.len() as f64;
    let values = Ccdf::grid()
        .map(|x| scores.iter().filter(|&&s| s >= x).count() as f64 / n)
        .collect();
    Ok(Ccdf { values })
}

#[derive(Clone, Debug)]
pub struct CppResult {
    /// Per-case products of true-continuation probabilities.
    pub scores: Vec<f64>,
    pub ccdf: Ccdf,
    pub auc: f64,
    /// Trajectories too short to provide a g-prefix plus k continuation.
    pub skipped: usize,
}

/// For each test trajectory with at least g+k interior tokens: the product
/// over steps g..g+k of the model's probability for the true next token,
/// conditioning on the true prefix at every step.
pub fn cpp_k(model: &dyn NextTokenModel, test: &[TokenSeq], k: usize, g: usize) -> Result<CppResult> {
    if k == 0 {
        return Err(EvalError::BadInput("cpp needs k >= 1".into()));
    }
    let mut scores = Vec::new();
    let mut skipped = 0;
    for tr in test {
        if tr.toks.len() < g + k {
            skipped += 1;
            continue;
        }
        let mut p = 1.0;
        for j in g..g + k {
            let dist = model.prefix_dist(&tr.toks[..j])?;
            let tok = tr.toks[j];
            if tok >= dist.len() {
                return Err(EvalError::BadInput(format!(
                    "token {tok} outside model distribution of size {}",
                    dist.len()
                )));
            }
            p *= dist[tok];
        }
        scores.push(p);
    }
    if scores.is_empty() {
        return Err(EvalError::BadInput(
            "no test trajectory is long enough for the requested prefix and horizon".into(),
        ));
    }
    let ccdf = ccdf(&scores)?;
    let auc = ccdf.auc();
    Ok(CppResult {
        scores,
        ccdf,
        auc,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed chain model: always continues 0 -> 1 -> 2 -> ... with
    /// probability `q`, spreading the rest on the end token.
    struct Chain {
        n: usize,
        q: f64,
    }
    impl NextTokenModel for Chain {
        fn end_token(&self) -> usize {
            self.n
        }
        fn prefix_dist(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let mut d = vec![0.0; self.n + 1];
            let next = prefix.last().map_or(0, |&t| t + 1);
            if next < self.n {
                d[next] = self.q;
                d[self.n] = 1.0 - self.q;
            } else {
                d[self.n] = 1.0;
            }
            Ok(d)
        }
    }

    #[test]
    fn deterministic_model_on_its_own_route_has_unit_auc() {
        let model = Chain { n: 6, q: 1.0 };
        let test = vec![TokenSeq::complete(vec![0, 1, 2, 3, 4, 5]); 4];
        for k in 1..=3 {
            let r = cpp_k(&model, &test, k, 1).unwrap();
            assert!(r.scores.iter().all(|&s| s == 1.0));
            assert_eq!(r.auc, 1.0);
        }
    }

    #[test]
    fn branch_probability_halves_each_step() {
        let model = Chain { n: 6, q: 0.5 };
        let test = vec![TokenSeq::complete(vec![0, 1, 2, 3, 4])];
        let r1 = cpp_k(&model, &test, 1, 1).unwrap();
        assert!((r1.scores[0] - 0.5).abs() < 1e-15);
        let r3 = cpp_k(&model, &test, 3, 1).unwrap();
        assert!((r3.scores[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn ccdf_is_monotone_nonincreasing_and_bounded() {
        let scores = vec![0.05, 0.2, 0.2, 0.33, 0.9, 1.0, 0.0];
        let c = ccdf(&scores).unwrap();
        assert_eq!(c.values.len(), 101);
        assert_eq!(c.values[0], 1.0);
        for w in c.values.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let a = c.auc();
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_of_constant_half_scores_is_half_plus_grid_step() {
        // All mass at 0.5: CCDF is 1 up to x=0.5 then 0, so the trapezoid
        // gives 0.5 plus half a grid cell.
        let c = ccdf(&[0.5; 10]).unwrap();
        assert!((c.auc() - 0.505).abs() < 1e-12);
    }

    #[test]
    fn short_trajectories_are_skipped_not_scored() {
        let model = Chain { n: 6, q: 1.0 };
        let test = vec![
            TokenSeq::complete(vec![0, 1]),
            TokenSeq::complete(vec![0, 1, 2, 3]),
        ];
        let r = cpp_k(&model, &test, 2, 2).unwrap();
        assert_eq!(r.scores.len(), 1);
        assert_eq!(r.skipped, 1);
        assert!(cpp_k(&model, &test, 5, 2).is_err());
    }

    #[test]
    fn csv_lists_all_grid_points() {
        let c = ccdf(&[0.3, 0.7]).unwrap();
        let csv = c.to_csv();
        assert_eq!(csv.lines().count(), 102);
        assert!(csv.starts_with("x,ccdf\n0,1\n"));
    }
}
