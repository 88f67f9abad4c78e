use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use roadnet::{LinkId, Obs, RoadNetwork};
use serde::{Deserialize, Serialize};

use crate::{DemandError, Result};

/// One vehicle trip: a link sequence with Start/End implicit, plus the
/// departure minute. `complete` is false only for truncated model rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub links: Vec<LinkId>,
    pub depart: f64,
    pub complete: bool,
}

impl Trajectory {
    pub fn new(id: u64, links: Vec<LinkId>, depart: f64) -> Trajectory {
        Trajectory {
            id,
            links,
            depart,
            complete: true,
        }
    }

    /// Observation sequence with the virtual tokens attached. Truncated
    /// trajectories carry no End.
    pub fn obs_sequence(&self) -> Vec<Obs> {
        let mut seq = Vec::with_capacity(self.links.len() + 2);
        seq.push(Obs::Start);
        seq.extend(self.links.iter().map(|&l| Obs::Link(l)));
        if self.complete {
            seq.push(Obs::End);
        }
        seq
    }

    /// Check every transition against the network masks; complete
    /// trajectories must finish on an exit link.
    pub fn validate_against(&self, net: &RoadNetwork) -> Result<()> {
        if self.links.is_empty() {
            return Err(DemandError::BadData(format!("trajectory {} is empty", self.id)));
        }
        if !(self.depart >= 0.0) {
            return Err(DemandError::BadData(format!(
                "trajectory {} departs at {}",
                self.id, self.depart
            )));
        }
        let seq = self.obs_sequence();
        net.valid_actions(&seq)
            .map_err(|e| DemandError::BadData(format!("trajectory {}: {e}", self.id)))?;
        Ok(())
    }
}

/// Sidecar metadata: everything needed to regenerate the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub pattern: String,
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub n: usize,
    pub horizon_min: f64,
    pub link_travel_min: f64,
    pub slack: usize,
    pub cap: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Serialize, Deserialize)]
struct TrajLine {
    id: u64,
    links: Vec<usize>,
    depart: f64,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    complete: bool,
}

pub fn write_jsonl<W: Write>(trajs: &[Trajectory], w: &mut W) -> Result<()> {
    for t in trajs {
        let line = TrajLine {
            id: t.id,
            links: t.links.iter().map(|l| l.0).collect(),
            depart: t.depart,
            complete: t.complete,
        };
        serde_json::to_writer(&mut *w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajLine = serde_json::from_str(&line)
            .map_err(|e| DemandError::BadData(format!("line {}: {e}", ln + 1)))?;
        out.push(Trajectory {
            id: parsed.id,
            links: parsed.links.into_iter().map(LinkId).collect(),
            depart: parsed.depart,
            complete: parsed.complete,
        });
    }
    Ok(out)
}

/// Spreadsheet mirror: `id,depart,links` with the link ids space-separated.
pub fn write_csv<W: Write>(trajs: &[Trajectory], w: &mut W) -> Result<()> {
    writeln!(w, "id,depart,links")?;
    for t in trajs {
        let links = t
            .links
            .iter()
            .map(|l| l.0.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "{},{},{}", t.id, t.depart, links)?;
    }
    Ok(())
}

impl TrajectoryDataset {
    pub fn validate_against(&self, net: &RoadNetwork) -> Result<()> {
        for t in &self.trajectories {
            t.validate_against(net)?;
        }
        Ok(())
    }

    pub fn save_files<P: AsRef<Path>, Q: AsRef<Path>>(
        &self,
        jsonl_path: P,
        meta_path: Q,
    ) -> Result<()> {
        let mut buf = Vec::new();
        write_jsonl(&self.trajectories, &mut buf)?;
        fs::write(jsonl_path, buf)?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        fs::write(meta_path, meta)?;
        Ok(())
    }

    pub fn load_files<P: AsRef<Path>, Q: AsRef<Path>>(
        jsonl_path: P,
        meta_path: Q,
    ) -> Result<TrajectoryDataset> {
        let trajectories = read_jsonl(BufReader::new(fs::File::open(jsonl_path)?))?;
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
        Ok(TrajectoryDataset { trajectories, meta })
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut buf = Vec::new();
        write_csv(&self.trajectories, &mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}
