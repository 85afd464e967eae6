//! Append-only run logs.
//!
//! Layout: `<root>/<run-id>/manifest.json`, `steps.log` (one JSON step row
//! per line, flushed on every write) and `export.csv` produced on demand.
//! Other per-run artifacts (tick logs, metrics, reports) live alongside.
//! The CSV export is the adapter point for external dashboards.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{format_utc, StepRow};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STEPS_FILE: &str = "steps.log";
pub const METRICS_FILE: &str = "metrics.log";
pub const EXPORT_FILE: &str = "export.csv";
pub const EXPORT_HEADER: &str =
    "step,timestamp,soc,price_eur_mwh,action,setpoint_kw,delivered_kw,temp_c,reward_eur";

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record in {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 of the JSON serialization of a config value.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Sortable, unique run identifier.
pub fn new_run_id() -> String {
    ulid::Ulid::new().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// What produced the run: train, evaluate, serve-hw, ...
    pub kind: String,
    pub backend: String,
    pub seed: u64,
    pub code_version: String,
    pub config_hash: String,
    /// Full config snapshot, enough to re-run the experiment.
    pub config: serde_json::Value,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: String,
}

impl RunManifest {
    pub fn new<T: Serialize>(kind: &str, backend: &str, seed: u64, config: &T) -> Self {
        Self {
            run_id: new_run_id(),
            kind: kind.to_string(),
            backend: backend.to_string(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("config serializes"),
            started_at: Utc::now(),
            finished_at: None,
            status: "running".into(),
        }
    }
}

/// Destination for executed control steps.
pub trait StepSink: Send {
    fn log_step(&mut self, row: &StepRow) -> Result<(), TelemetryError>;
}

/// Directory holding one sub-directory per run.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Creates the run directory and writes the initial manifest.
    pub fn create_run(&self, manifest: RunManifest) -> Result<RunWriter, TelemetryError> {
        let dir = self.run_dir(&manifest.run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_manifest(&dir, &manifest)?;
        let steps_path = dir.join(STEPS_FILE);
        let steps = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&steps_path)
            .map_err(io_err(&steps_path))?;
        Ok(RunWriter {
            dir,
            manifest,
            steps,
            rows: 0,
        })
    }

    fn existing_dir(&self, run_id: &str) -> Result<PathBuf, TelemetryError> {
        let dir = self.run_dir(run_id);
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(TelemetryError::NotFound(run_id.to_string()));
        }
        Ok(dir)
    }

    pub fn read_manifest(&self, run_id: &str) -> Result<RunManifest, TelemetryError> {
        let path = self.existing_dir(run_id)?.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| TelemetryError::Corrupt {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Step rows logged so far. A torn final line (crash mid-write) is
    /// ignored; corruption anywhere else is an error.
    pub fn read_steps(&self, run_id: &str) -> Result<Vec<StepRow>, TelemetryError> {
        let path = self.existing_dir(run_id)?.join(STEPS_FILE);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err(&path))?;
        let mut rows = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<StepRow>(line) {
                Ok(r) => rows.push(r),
                Err(_) if i + 1 == lines.len() => break,
                Err(e) => {
                    return Err(TelemetryError::Corrupt {
                        path,
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(rows)
    }

    /// Writes `export.csv` for the run and returns its path.
    pub fn export_csv(&self, run_id: &str) -> Result<PathBuf, TelemetryError> {
        let rows = self.read_steps(run_id)?;
        let path = self.run_dir(run_id).join(EXPORT_FILE);
        fs::write(&path, steps_to_csv(&rows)).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Run ids in creation order.
    pub fn list_runs(&self) -> Result<Vec<String>, TelemetryError> {
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(io_err(&self.root)(e)),
        };
        for entry in entries {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join(MANIFEST_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// CSV rendering of step rows. Floats use the shortest representation that
/// parses back to the identical value.
pub fn steps_to_csv(rows: &[StepRow]) -> String {
    let mut out = String::with_capacity(96 * (rows.len() + 1));
    out.push_str(EXPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            format_utc(r.timestamp),
            r.soc,
            r.price_eur_mwh,
            r.action,
            r.setpoint_kw,
            r.delivered_kw,
            r.temp_c,
            r.reward_eur
        );
    }
    out
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), TelemetryError> {
    let tmp = dir.join(".manifest.json.tmp");
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&tmp, body).map_err(io_err(&tmp))?;
    let dst = dir.join(MANIFEST_FILE);
    fs::rename(&tmp, &dst).map_err(io_err(&dst))
}

/// Single writer of one run.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    manifest: RunManifest,
    steps: File,
    rows: usize,
}

impl RunWriter {
    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Appends one line to `metrics.log`.
    pub fn log_metric<T: Serialize>(&mut self, record: &T) -> Result<(), TelemetryError> {
        let path = self.dir.join(METRICS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut line = serde_json::to_string(record).expect("metric serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(io_err(&path))
    }

    /// Writes an auxiliary artifact into the run directory.
    pub fn write_artifact(&self, name: &str, contents: &str) -> Result<PathBuf, TelemetryError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Stamps the end time and status into the manifest.
    pub fn finalize(mut self, status: &str) -> Result<RunManifest, TelemetryError> {
        self.manifest.finished_at = Some(Utc::now());
        self.manifest.status = status.to_string();
        write_manifest(&self.dir, &self.manifest)?;
        Ok(self.manifest)
    }
}

impl StepSink for RunWriter {
    fn log_step(&mut self, row: &StepRow) -> Result<(), TelemetryError> {
        let mut line = serde_json::to_string(row).expect("step row serializes");
        line.push('\n');
        let path = self.dir.join(STEPS_FILE);
        self.steps
            .write_all(line.as_bytes())
            .map_err(io_err(&path))?;
        self.steps.flush().map_err(io_err(&path))?;
        self.rows += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::utc_midnight;

    fn row(step: usize, reward: f64) -> StepRow {
        StepRow {
            step,
            timestamp: utc_midnight(2023, 1, 1) + chrono::Duration::minutes(15 * step as i64),
            observation: vec![0.5, 0.5, 0.0, 1.0],
            action: 2,
            setpoint_kw: 1.0,
            delivered_kw: 0.987654321,
            soc: 0.5 + step as f64 * 1e-3,
            price_eur_mwh: 101.37,
            temp_c: 19.9,
            reward_eur: reward,
        }
    }

    fn store() -> (tempfile::TempDir, RunStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path().join("runs"));
        (dir, store)
    }

    #[test]
    fn counts_and_order_preserved() {
        let (_d, store) = store();
        let mut w = store
            .create_run(RunManifest::new(
                "test",
                "simulation",
                1,
                &serde_json::json!({"a": 1}),
            ))
            .unwrap();
        for i in 0..96 {
            w.log_step(&row(i, -0.01 * i as f64)).unwrap();
            let back = store.read_steps(w.run_id()).unwrap();
            assert_eq!(back.len(), i + 1);
            assert_eq!(back[i], row(i, -0.01 * i as f64));
        }
        let id = w.run_id().to_string();
        w.finalize("ok").unwrap();
        let csv = std::fs::read_to_string(store.export_csv(&id).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 97);
        assert_eq!(csv.lines().next().unwrap(), EXPORT_HEADER);
        assert!(store.read_manifest(&id).unwrap().finished_at.is_some());
    }

    #[test]
    fn partial_run_survives_close() {
        let (_d, store) = store();
        let mut w = store
            .create_run(RunManifest::new("test", "simulation", 1, &0))
            .unwrap();
        for i in 0..50 {
            w.log_step(&row(i, 0.1)).unwrap();
        }
        let id = w.run_id().to_string();
        drop(w);
        // A torn trailing write is ignored.
        let path = store.run_dir(&id).join(STEPS_FILE);
        let mut f = OpenOptions::new().append(true).open(path).unwrap();
        f.write_all(b"{\"step\":50,\"timest").unwrap();
        assert_eq!(store.read_steps(&id).unwrap().len(), 50);
    }

    #[test]
    fn export_is_exact_and_repeatable() {
        let (_d, store) = store();
        let mut w = store
            .create_run(RunManifest::new("test", "simulation", 1, &0))
            .unwrap();
        let rewards = [0.1, -0.2, 1.0 / 3.0, -0.025, 0.0125];
        for (i, r) in rewards.iter().enumerate() {
            w.log_step(&row(i, *r)).unwrap();
        }
        let id = w.run_id().to_string();
        let a = std::fs::read(store.export_csv(&id).unwrap()).unwrap();
        let b = std::fs::read(store.export_csv(&id).unwrap()).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let total: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - rewards.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn empty_run_and_unknown_run() {
        let (_d, store) = store();
        let w = store
            .create_run(RunManifest::new("test", "simulation", 1, &0))
            .unwrap();
        let csv = std::fs::read_to_string(store.export_csv(w.run_id()).unwrap()).unwrap();
        assert_eq!(csv, format!("{EXPORT_HEADER}\n"));
        assert!(matches!(
            store.export_csv("nope"),
            Err(TelemetryError::NotFound(_))
        ));
    }

    #[test]
    fn concurrent_runs_are_isolated() {
        let (_d, store) = store();
        let handles: Vec<_> = (0..2)
            .map(|k| {
                let store = store.clone();
                std::thread::spawn(move || {
                    let mut w = store
                        .create_run(RunManifest::new("test", "simulation", k, &k))
                        .unwrap();
                    for i in 0..200 {
                        w.log_step(&row(i, k as f64)).unwrap();
                    }
                    w.run_id().to_string()
                })
            })
            .collect();
        let ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_ne!(ids[0], ids[1]);
        for (k, id) in ids.iter().enumerate() {
            let rows = store.read_steps(id).unwrap();
            assert_eq!(rows.len(), 200);
            assert!(rows.iter().all(|r| r.reward_eur == k as f64));
        }
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&serde_json::json!({"x": 1, "y": [1, 2]}));
        assert_eq!(a, config_hash(&serde_json::json!({"x": 1, "y": [1, 2]})));
        assert_ne!(a, config_hash(&serde_json::json!({"x": 2})));
        assert_eq!(a.len(), 64);
    }
}
