//! Report assembly: per-model score tables serialized as JSON, rendered as
//! Markdown, and optionally drawn as standalone SVG line charts.

use std::collections::BTreeMap;
use std::path::Path;

use crate::region::RegionReport;
use crate::Result;

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelScores {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meteor_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meteor_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_js: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unknown: Option<usize>,
    /// AUC per horizon label, e.g. "k=1".
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auc: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionReport>,
    /// Anything scenario-specific: losses, revisit means, slopes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

/// Mean and sample standard deviation (n-1 denominator, 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    /// Transition entropy of the real dataset the models were held against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_entropy: Option<f64>,
    pub models: BTreeMap<String, ModelScores>,
    /// Run metadata: seeds, dataset sizes, config digests.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

impl EvalReport {
    pub fn new(scenario: &str) -> EvalReport {
        EvalReport {
            scenario: scenario.into(),
            ..EvalReport::default()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// One table per field across scenarios: rows are scenarios, columns the
    /// union of model names.
    pub fn markdown_table(reports: &[EvalReport], field: &str) -> String {
        let mut models: Vec<String> = Vec::new();
        for r in reports {
            for name in r.models.keys() {
                if !models.contains(name) {
                    models.push(name.clone());
                }
            }
        }
        let mut s = format!("| scenario ({field}) |");
        for m in &models {
            s.push_str(&format!(" {m} |"));
        }
        s.push('\n');
        s.push_str("|---|");
        for _ in &models {
            s.push_str("---|");
        }
        s.push('\n');
        for r in reports {
            s.push_str(&format!("| {} |", r.scenario));
            for m in &models {
                let v = r.models.get(m).and_then(|sc| match field {
                    "bleu" => sc.bleu_mean,
                    "meteor" => sc.meteor_mean,
                    "d_js" => sc.d_js,
                    "unknown" => sc.unknown.map(|u| u as f64),
                    other => sc
                        .auc
                        .get(other)
                        .copied()
                        .or_else(|| sc.extra.get(other).copied()),
                });
                s.push_str(&format!(" {} |", fmt_cell(v)));
            }
            s.push('\n');
        }
        s
    }
}

/// Minimal standalone SVG polyline chart. Each series is a named list of
/// (x, y) points; axes are scaled to the data bounding box.
pub fn svg_line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 48.0;
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if pts.is_empty() || x0 == x1 {
        x0 = 0.0;
        x1 = 1.0;
    }
    if pts.is_empty() || y0 == y1 {
        y0 = 0.0;
        y1 = 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n",
        W / 2.0
    );
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    s.push_str(&format!(
        "<text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{x0:.3} .. {x1:.3}</text>\n\
         <text x=\"4\" y=\"{PAD}\" font-family=\"sans-serif\" font-size=\"11\">{y1:.3}</text>\n\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{y0:.3}</text>\n",
        H - PAD / 2.0,
        H - PAD
    ));
    for (i, (name, points)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-family=\"sans-serif\" \
             font-size=\"12\">{name}</text>\n",
            W - PAD + 4.0,
            PAD + 16.0 * i as f64
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trips_through_json() {
        let mut r = EvalReport::new("single-od");
        r.real_entropy = Some(0.69);
        let mut sc = ModelScores {
            bleu_mean: Some(0.995),
            bleu_std: Some(0.001),
            d_js: Some(0.12),
            unknown: Some(3),
            ..ModelScores::default()
        };
        sc.auc.insert("k=1".into(), 0.9);
        sc.extra.insert("j_discrim".into(), 1.39);
        r.models.insert("trajgail".into(), sc);
        r.meta.insert("seed".into(), "7".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        r.save(&path).unwrap();
        let back = EvalReport::load(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn markdown_rows_are_scenarios_and_columns_models() {
        let mut a = EvalReport::new("one-way");
        a.models.insert(
            "rnn".into(),
            ModelScores {
                d_js: Some(0.25),
                ..ModelScores::default()
            },
        );
        a.models.insert(
            "trajgail".into(),
            ModelScores {
                d_js: Some(0.125),
                ..ModelScores::default()
            },
        );
        let mut b = EvalReport::new("two-way");
        b.models.insert(
            "rnn".into(),
            ModelScores {
                d_js: Some(0.5),
                ..ModelScores::default()
            },
        );
        let md = EvalReport::markdown_table(&[a, b], "d_js");
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("rnn") && lines[0].contains("trajgail"));
        assert!(lines[2].starts_with("| one-way |"));
        assert!(lines[2].contains("0.2500") && lines[2].contains("0.1250"));
        assert!(lines[3].contains("0.5000") && lines[3].contains("-"));
    }

    #[test]
    fn missing_fields_render_as_dashes() {
        let mut r = EvalReport::new("s");
        r.models.insert("m".into(), ModelScores::default());
        let md = EvalReport::markdown_table(std::slice::from_ref(&r), "bleu");
        assert!(md.lines().nth(2).unwrap().contains(" - "));
    }

    #[test]
    fn mean_std_matches_hand_computation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn svg_chart_contains_scaled_polylines() {
        let svg = svg_line_chart(
            "convergence",
            &[
                ("rnn".into(), vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)]),
                ("gail".into(), vec![(0.0, 1.2), (2.0, 0.1)]),
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("convergence"));
    }
}
