//! Persisted run directories: `pairs.csv`, `points.csv`, `run.json`.
//!
//! Rows are appended one completed (model, task, method) combination at a
//! time, so a directory never holds a half-written combination and a
//! resumed run can skip exactly what is already there. All output is UTF-8
//! CSV with a header row and '.' decimals.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::SweepResult;

pub const PAIRS_FILE: &str = "pairs.csv";
pub const POINTS_FILE: &str = "points.csv";
pub const RUN_FILE: &str = "run.json";

/// One row of `pairs.csv`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairRow {
    pub model: String,
    pub task_id: String,
    pub method: String,
    pub rate: String,
    pub i: usize,
    pub j: usize,
    pub tsed: f64,
}

/// One row of `points.csv`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointRow {
    pub model: String,
    pub task_id: String,
    pub method: String,
    pub rate: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

/// Config echo plus input fingerprints, written once per run. Deliberately
/// holds no wall-clock data: a replayed run must be byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub fingerprints: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("run directory i/o at {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing {0} (is this a completed run directory?)")]
    MissingFile(String),
    #[error("malformed csv at {path}: {message}")]
    MalformedCsv { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunDirError {
    RunDirError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// A run directory opened for incremental writing.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create or reopen a run directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RunDirError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.root.join(PAIRS_FILE)
    }

    pub fn points_path(&self) -> PathBuf {
        self.root.join(POINTS_FILE)
    }

    pub fn run_json_path(&self) -> PathBuf {
        self.root.join(RUN_FILE)
    }

    /// Combinations already persisted, as (model, task_id, method) triples.
    /// Rows land only after a combination completes, so presence means done.
    pub fn completed(&self) -> Result<BTreeSet<(String, String, String)>, RunDirError> {
        let path = self.points_path();
        if !path.exists() {
            return Ok(BTreeSet::new());
        }
        let rows = read_points(&path)?;
        Ok(rows
            .into_iter()
            .map(|r| (r.model, r.task_id, r.method))
            .collect())
    }

    /// Append one completed sweep result to both CSV files.
    pub fn append(&self, result: &SweepResult) -> Result<(), RunDirError> {
        let pair_rows: Vec<PairRow> = result
            .pairs
            .iter()
            .map(|p| PairRow {
                model: result.model.clone(),
                task_id: result.task_id.clone(),
                method: result.method.name().to_string(),
                rate: p.rate.canonical(),
                i: p.reference_index,
                j: p.augmented_index,
                tsed: p.score,
            })
            .collect();
        let point_rows: Vec<PointRow> = result
            .points
            .iter()
            .map(|p| PointRow {
                model: result.model.clone(),
                task_id: result.task_id.clone(),
                method: result.method.name().to_string(),
                rate: p.rate.canonical(),
                mean: p.mean_similarity,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                count: p.count,
            })
            .collect();
        append_csv(&self.pairs_path(), &pair_rows)?;
        append_csv(&self.points_path(), &point_rows)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), RunDirError> {
        let path = self.run_json_path();
        let body = serde_json::to_string_pretty(manifest).map_err(|e| io_err(&path, e))?;
        fs::write(&path, body + "\n").map_err(|e| io_err(&path, e))
    }
}

// Serialize the whole chunk in memory first so one combination lands in a
// single write.
fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunDirError> {
    let new_file = !path.exists();
    let mut writer = csv::WriterBuilder::new()
        .has_headers(new_file)
        .from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| io_err(path, e))?;
    }
    let chunk = writer.into_inner().map_err(|e| io_err(path, e))?;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    file.write_all(&chunk).map_err(|e| io_err(path, e))?;
    file.flush().map_err(|e| io_err(path, e))
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRow>, RunDirError> {
    read_csv(path.as_ref())
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<PointRow>, RunDirError> {
    read_csv(path.as_ref())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunDirError> {
    if !path.exists() {
        return Err(RunDirError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| RunDirError::MalformedCsv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Sort key for rate strings: numeric rates first in numeric order, then
/// paraphrase buckets in diversity order.
pub fn rate_sort_key(rate: &str) -> (u8, f64) {
    if let Ok(value) = rate.parse::<f64>() {
        return (0, value);
    }
    let bucket = match rate {
        "original" => 0.0,
        "low" => 1.0,
        "medium" => 2.0,
        "high" => 3.0,
        _ => 4.0,
    };
    (1, bucket)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::Method;
    use crate::pipeline::{PairRecord, RateKey, RatePoint};

    fn result(task_id: &str) -> SweepResult {
        SweepResult {
            task_id: task_id.to_string(),
            model: "m1".to_string(),
            method: Method::Typos,
            points: vec![RatePoint {
                rate: RateKey::Rate(0.5),
                mean_similarity: 0.75,
                ci_low: 0.7,
                ci_high: 0.8,
                count: 4,
            }],
            pairs: vec![PairRecord {
                rate: RateKey::Rate(0.5),
                reference_index: 0,
                augmented_index: 1,
                score: 0.75,
            }],
        }
    }

    #[test]
    fn append_and_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::open(dir.path().join("run")).unwrap();
        run.append(&result("t1")).unwrap();
        run.append(&result("t2")).unwrap();

        let points = read_points(run.points_path()).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].task_id, "t1");
        assert_eq!(points[0].rate, "0.5");
        assert_eq!(points[0].mean, 0.75);

        let pairs = read_pairs(run.pairs_path()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].task_id, "t2");

        let completed = run.completed().unwrap();
        assert!(completed.contains(&("m1".into(), "t1".into(), "typos".into())));
        assert_eq!(completed.len(), 2);
    }

    #[test]
    fn header_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::open(dir.path().join("run")).unwrap();
        run.append(&result("t1")).unwrap();
        run.append(&result("t2")).unwrap();
        let text = fs::read_to_string(run.points_path()).unwrap();
        let headers = text
            .lines()
            .filter(|l| l.starts_with("model,task_id"))
            .count();
        assert_eq!(headers, 1);
        assert!(text.starts_with("model,task_id,method,rate,mean,ci_low,ci_high,count\n"));
    }

    #[test]
    fn missing_points_is_a_named_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_points(dir.path().join("points.csv")).unwrap_err();
        assert!(matches!(err, RunDirError::MissingFile(_)));
    }

    #[test]
    fn manifest_round_trips_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::open(dir.path().join("run")).unwrap();
        let manifest = RunManifest {
            config: serde_json::json!({"n_samples": 5}),
            fingerprints: [("dataset".to_string(), "abcd".to_string())].into(),
        };
        run.write_manifest(&manifest).unwrap();
        let first = fs::read(run.run_json_path()).unwrap();
        run.write_manifest(&manifest).unwrap();
        assert_eq!(first, fs::read(run.run_json_path()).unwrap());
    }

    #[test]
    fn rate_keys_sort_numerics_before_buckets() {
        let mut keys = vec!["low", "1", "original", "0.5", "high", "0", "medium"];
        keys.sort_by(|a, b| rate_sort_key(a).partial_cmp(&rate_sort_key(b)).unwrap());
        assert_eq!(
            keys,
            vec!["0", "0.5", "1", "original", "low", "medium", "high"]
        );
    }
}
