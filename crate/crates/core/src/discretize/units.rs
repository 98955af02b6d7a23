//! Run-length deduplicated unit sequences and the unit file format.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlang::{FamilyId, LangId};

/// Deduplicated unit sequence with per-unit frame counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengthUnits {
    pub units: Vec<u32>,
    pub durations: Vec<usize>,
    pub family: FamilyId,
    pub lang: LangId,
}

impl RunLengthUnits {
    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Inverse of `dedup`: frame-level sequence.
    pub fn expand(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.total_frames());
        for (&u, &d) in self.units.iter().zip(&self.durations) {
            for _ in 0..d {
                out.push(u);
            }
        }
        out
    }
}

/// Collapse consecutive equal frame units into (unit, run length) pairs.
pub fn dedup(frame_units: &[u32], family: FamilyId, lang: LangId) -> RunLengthUnits {
    let mut units = Vec::new();
    let mut durations = Vec::new();
    for &u in frame_units {
        if units.last() == Some(&u) {
            *durations.last_mut().unwrap() += 1;
        } else {
            units.push(u);
            durations.push(1);
        }
    }
    RunLengthUnits { units, durations, family, lang }
}

/// Unit file: header line `k=<int> family=<id>`, then one utterance per line
/// of space-separated decimal unit ids. A companion duration file has the
/// same shape.
pub fn write_unit_file(path: &Path, k: usize, family: &str, lines: &[Vec<u32>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "k={k} family={family}").map_err(io_err)?;
    for line in lines {
        let text = line.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        writeln!(w, "{text}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn write_duration_file(
    path: &Path,
    k: usize,
    family: &str,
    lines: &[Vec<usize>],
) -> Result<()> {
    let as_u32: Vec<Vec<u32>> = lines
        .iter()
        .map(|l| l.iter().map(|&d| d as u32).collect())
        .collect();
    write_unit_file(path, k, family, &as_u32)
}

pub struct UnitFile {
    pub k: usize,
    pub family: String,
    pub lines: Vec<Vec<u32>>,
}

pub fn read_unit_file(path: &Path) -> Result<UnitFile> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file).lines();
    let header = reader
        .next()
        .transpose()
        .map_err(|e| Error::io(path.display().to_string(), e))?
        .ok_or_else(|| Error::InvalidArgument(format!("{}: empty unit file", path.display())))?;
    let mut k = None;
    let mut family = None;
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("k=") {
            k = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("family=") {
            family = Some(v.to_string());
        }
    }
    let (Some(k), Some(family)) = (k, family) else {
        return Err(Error::InvalidArgument(format!(
            "{}: malformed unit file header {header:?}",
            path.display()
        )));
    };
    let mut lines = Vec::new();
    for line in reader {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let ids = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|_| {
                    Error::InvalidArgument(format!("{}: bad unit id {t:?}", path.display()))
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        lines.push(ids);
    }
    Ok(UnitFile { k, family, lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_empty() {
        let r = dedup(&[], FamilyId(0), LangId(1));
        assert!(r.units.is_empty() && r.durations.is_empty());
    }

    #[test]
    fn dedup_collapses_runs() {
        let r = dedup(&[1, 1, 2, 2, 2, 3], FamilyId(0), LangId(1));
        assert_eq!(r.units, vec![1, 2, 3]);
        assert_eq!(r.durations, vec![2, 3, 1]);
    }

    #[test]
    fn expand_inverts_dedup() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(0..40);
            let seq: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let r = dedup(&seq, FamilyId(0), LangId(1));
            assert_eq!(r.expand(), seq);
            assert_eq!(r.total_frames(), seq.len());
            // no two consecutive units equal
            for w in r.units.windows(2) {
                assert_ne!(w[0], w[1]);
            }
        }
    }

    #[test]
    fn unit_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("units.txt");
        let lines = vec![vec![1u32, 2, 3], vec![], vec![7, 7]];
        write_unit_file(&path, 40, "fam1", &lines).unwrap();
        let loaded = read_unit_file(&path).unwrap();
        assert_eq!(loaded.k, 40);
        assert_eq!(loaded.family, "fam1");
        assert_eq!(loaded.lines, lines);
    }
}
