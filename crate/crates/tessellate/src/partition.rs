use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Result, TessError};

/// Voronoi partition implied by a centroid set: a point belongs to its
/// nearest centroid. Every point fed to `cluster_points` lands within 2R of
/// its cell centroid, usually within about R.
#[derive(Clone, Debug, PartialEq)]
pub struct CellPartition {
    centroids: Vec<(f64, f64)>,
    radius: f64,
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

impl CellPartition {
    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Nearest centroid index; ties break toward the lower index.
    pub fn nearest(&self, p: (f64, f64)) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &c) in self.centroids.iter().enumerate() {
            let d = dist2(p, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PartitionFile {
            r: self.radius,
            centroids: self.centroids.iter().map(|&(x, y)| [x, y]).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<CellPartition> {
        let file: PartitionFile = serde_json::from_str(text)?;
        if !(file.r > 0.0) {
            return Err(TessError::BadFile(format!("radius {} not positive", file.r)));
        }
        if file.centroids.is_empty() {
            return Err(TessError::BadFile("no centroids".into()));
        }
        let centroids: Vec<(f64, f64)> =
            file.centroids.iter().map(|c| (c[0], c[1])).collect();
        for (i, &a) in centroids.iter().enumerate() {
            if !a.0.is_finite() || !a.1.is_finite() {
                return Err(TessError::BadFile(format!("centroid {i} not finite")));
            }
            for &b in centroids.iter().skip(i + 1) {
                if a == b {
                    return Err(TessError::BadFile(format!(
                        "duplicate centroid ({}, {})",
                        a.0, a.1
                    )));
                }
            }
        }
        Ok(CellPartition {
            centroids,
            radius: file.r,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<CellPartition> {
        CellPartition::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    #[serde(rename = "R")]
    r: f64,
    centroids: Vec<[f64; 2]>,
}

/// Greedy leader clustering in input order: a point joins the nearest seed
/// within R, otherwise opens a new cluster at itself. Centroids are then
/// finalized as member means; the final nearest-centroid assignment is the
/// one reassignment pass. Seeds stay fixed while assigning, which bounds
/// every member by 2R from its final centroid.
pub fn cluster_points(points: &[(f64, f64)], r: f64) -> Result<CellPartition> {
    if points.is_empty() {
        return Err(TessError::BadInput("no points to cluster".into()));
    }
    if !(r > 0.0) {
        return Err(TessError::BadInput(format!("radius {r} not positive")));
    }
    for (i, p) in points.iter().enumerate() {
        if !p.0.is_finite() || !p.1.is_finite() {
            return Err(TessError::BadInput(format!("point {i} not finite")));
        }
    }
    let r2 = r * r;
    let mut seeds: Vec<(f64, f64)> = Vec::new();
    let mut sums: Vec<(f64, f64, f64)> = Vec::new();
    for &p in points {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, &s) in seeds.iter().enumerate() {
            let d = dist2(p, s);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        match best {
            Some(i) if best_d <= r2 => {
                sums[i].0 += p.0;
                sums[i].1 += p.1;
                sums[i].2 += 1.0;
            }
            _ => {
                seeds.push(p);
                sums.push((p.0, p.1, 1.0));
            }
        }
    }
    let mut centroids: Vec<(f64, f64)> = sums
        .iter()
        .map(|&(x, y, n)| (x / n, y / n))
        .collect();
    // exact coincidences would break the pairwise-distinct invariant
    centroids.dedup_by(|a, b| a == b);
    let mut distinct: Vec<(f64, f64)> = Vec::with_capacity(centroids.len());
    for c in centroids {
        if !distinct.contains(&c) {
            distinct.push(c);
        }
    }
    Ok(CellPartition {
        centroids: distinct,
        radius: r,
    })
}
