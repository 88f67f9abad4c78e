use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::partition::CellPartition;
use crate::{Result, TessError};

/// One token of a cell sequence. File encoding maps Start to 0, cell c to
/// c + 1, and End to N + 1 for a partition of N cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellTok {
    Start,
    Cell(usize),
    End,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSequence {
    pub toks: Vec<CellTok>,
}

impl CellSequence {
    /// Interior cell ids, Start/End stripped.
    pub fn cells(&self) -> Vec<usize> {
        self.toks
            .iter()
            .filter_map(|t| match t {
                CellTok::Cell(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    pub fn to_codes(&self, n_cells: usize) -> Vec<u64> {
        self.toks
            .iter()
            .map(|t| match t {
                CellTok::Start => 0,
                CellTok::Cell(c) => (*c + 1) as u64,
                CellTok::End => (n_cells + 1) as u64,
            })
            .collect()
    }

    pub fn from_codes(codes: &[u64], n_cells: usize) -> Result<CellSequence> {
        if codes.len() < 2 {
            return Err(TessError::BadFile("sequence shorter than Start,End".into()));
        }
        let end = (n_cells + 1) as u64;
        if codes[0] != 0 || codes[codes.len() - 1] != end {
            return Err(TessError::BadFile(
                "sequence must run from the start code to the end code".into(),
            ));
        }
        let mut toks = vec![CellTok::Start];
        for &c in &codes[1..codes.len() - 1] {
            if c == 0 || c >= end {
                return Err(TessError::BadFile(format!(
                    "interior code {c} outside 1..={n_cells}"
                )));
            }
            toks.push(CellTok::Cell((c - 1) as usize));
        }
        toks.push(CellTok::End);
        let seq = CellSequence { toks };
        for w in seq.toks.windows(2) {
            if w[0] == w[1] {
                return Err(TessError::BadFile("consecutive duplicate cells".into()));
            }
        }
        Ok(seq)
    }
}

/// Nearest-centroid assignment per point, consecutive duplicates collapsed,
/// Start/End affixed. The result can be shorter than the input but never
/// longer.
pub fn to_cell_sequence(points: &[(f64, f64)], part: &CellPartition) -> Result<CellSequence> {
    if points.is_empty() {
        return Err(TessError::BadInput("no points to convert".into()));
    }
    let mut toks = Vec::with_capacity(points.len() + 2);
    toks.push(CellTok::Start);
    let mut last = None;
    for &p in points {
        let c = part.nearest(p);
        if last != Some(c) {
            toks.push(CellTok::Cell(c));
            last = Some(c);
        }
    }
    toks.push(CellTok::End);
    Ok(CellSequence { toks })
}

pub fn write_cells_jsonl<W: Write>(
    seqs: &[CellSequence],
    n_cells: usize,
    w: &mut W,
) -> Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut *w, &s.to_codes(n_cells))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_cells_jsonl<P: AsRef<Path>>(path: P, n_cells: usize) -> Result<Vec<CellSequence>> {
    let mut out = Vec::new();
    for (ln, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let codes: Vec<u64> = serde_json::from_str(&line)
            .map_err(|e| TessError::BadFile(format!("line {}: {e}", ln + 1)))?;
        out.push(
            CellSequence::from_codes(&codes, n_cells)
                .map_err(|e| TessError::BadFile(format!("line {}: {e}", ln + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::cluster_points;

    fn two_cell_partition() -> CellPartition {
        // centroids at x=0 and x=100, boundary at x=50
        cluster_points(&[(0.0, 0.0), (100.0, 0.0)], 10.0).expect("clusters")
    }

    #[test]
    fn one_cell_input_collapses() {
        let part = two_cell_partition();
        let seq =
            to_cell_sequence(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], &part).expect("converts");
        assert_eq!(
            seq.toks,
            vec![CellTok::Start, CellTok::Cell(0), CellTok::End]
        );
    }

    #[test]
    fn revisits_survive_collapse() {
        let part = two_cell_partition();
        let seq = to_cell_sequence(&[(0.0, 0.0), (100.0, 0.0), (0.0, 0.0)], &part)
            .expect("converts");
        assert_eq!(seq.cells(), vec![0, 1, 0]);
    }

    #[test]
    fn never_longer_than_input() {
        let part = two_cell_partition();
        let pts: Vec<(f64, f64)> = (0..50).map(|i| ((i * 7 % 101) as f64, 0.0)).collect();
        let seq = to_cell_sequence(&pts, &part).expect("converts");
        assert!(seq.cells().len() <= pts.len());
    }

    #[test]
    fn codes_round_trip() {
        let part = two_cell_partition();
        let seq = to_cell_sequence(&[(0.0, 0.0), (100.0, 0.0)], &part).expect("converts");
        let codes = seq.to_codes(part.len());
        assert_eq!(codes, vec![0, 1, 2, 3]);
        let back = CellSequence::from_codes(&codes, part.len()).expect("decodes");
        assert_eq!(back, seq);
        // malformed variants
        assert!(CellSequence::from_codes(&[0], 2).is_err());
        assert!(CellSequence::from_codes(&[0, 4, 3], 2).is_err());
        assert!(CellSequence::from_codes(&[0, 1, 1, 3], 2).is_err());
        assert!(CellSequence::from_codes(&[1, 2, 3], 2).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let part = two_cell_partition();
        let seqs = vec![
            to_cell_sequence(&[(0.0, 0.0)], &part).expect("converts"),
            to_cell_sequence(&[(100.0, 0.0), (0.0, 0.0)], &part).expect("converts"),
        ];
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("cells.jsonl");
        let mut buf = Vec::new();
        write_cells_jsonl(&seqs, part.len(), &mut buf).expect("writes");
        std::fs::write(&path, &buf).expect("writes file");
        let back = read_cells_jsonl(&path, part.len()).expect("reads");
        assert_eq!(back, seqs);
    }

    #[test]
    fn empty_input_is_rejected() {
        let part = two_cell_partition();
        assert!(to_cell_sequence(&[], &part).is_err());
    }
}
