//! On-disk run directories.
//!
//! ```text
//! <run>/config.toml               full config snapshot
//! <run>/metrics.csv               one row per evaluation, appended as training goes
//! <run>/summary.csv               key,value
//! <run>/checkpoints/step-NNNNNN.pxrl
//! <run>/dumps/<layer>-<label>.pxrl
//! <run>/manifest.toml             status and artifact index
//! ```

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::ActivationDump;
use crate::autodiff::{checkpoint, ParamSet};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::objectives::LossReport;
use crate::protocols::{self, MetricRow, RunRecord, Sink, METRICS_HEADER};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `running`, `complete` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub dumps: Vec<String>,
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("step-{step:06}.pxrl"))
}

pub fn dump_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("dumps").join(format!("{name}.pxrl"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Sink that persists every artifact as soon as it is produced.
pub struct DirSink {
    dir: PathBuf,
    metrics: File,
    manifest: Manifest,
    summary: Vec<(String, f64)>,
}

impl DirSink {
    /// Creates the layout and writes the config snapshot.
    pub fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        for sub in ["checkpoints", "dumps"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write(&dir.join("config.toml"), &cfg.to_toml())?;
        let path = dir.join("metrics.csv");
        let mut metrics = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        let sink = DirSink {
            dir: dir.to_path_buf(),
            metrics,
            manifest: Manifest {
                status: "running".into(),
                ..Manifest::default()
            },
            summary: Vec::new(),
        };
        sink.write_manifest()?;
        Ok(sink)
    }

    fn write_manifest(&self) -> Result<()> {
        let text = toml::to_string(&self.manifest).expect("manifest serializes");
        write(&self.dir.join("manifest.toml"), &text)
    }

    fn write_summary(&self) -> Result<()> {
        let mut text = String::from("key,value\n");
        for (k, v) in &self.summary {
            text.push_str(&format!("{k},{v}\n"));
        }
        write(&self.dir.join("summary.csv"), &text)
    }

    /// Records the outcome of the run in the manifest.
    pub fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        match outcome {
            Ok(()) => self.manifest.status = "complete".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(e.to_string());
            }
        }
        self.write_manifest()
    }
}

impl Sink for DirSink {
    fn metric(&mut self, row: &MetricRow) -> Result<()> {
        let path = self.dir.join("metrics.csv");
        writeln!(self.metrics, "{}", row.csv()).map_err(|e| Error::io(&path, e))?;
        self.metrics.flush().map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&mut self, step: usize, params: &ParamSet<f32>) -> Result<()> {
        checkpoint::save(&checkpoint_path(&self.dir, step), params.iter())?;
        if !self.manifest.checkpoints.contains(&step) {
            self.manifest.checkpoints.push(step);
        }
        self.write_manifest()
    }

    fn dump(&mut self, name: &str, dump: &ActivationDump) -> Result<()> {
        dump.save(&dump_path(&self.dir, name))?;
        if !self.manifest.dumps.iter().any(|d| d == name) {
            self.manifest.dumps.push(name.to_string());
        }
        self.write_manifest()
    }

    fn summary(&mut self, key: &str, value: f64) -> Result<()> {
        self.summary.push((key.to_string(), value));
        self.write_summary()
    }
}

/// Runs `cfg` and persists it into `dir`; the manifest records failures.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut sink = DirSink::create(dir, cfg)?;
    let outcome = protocols::run_with(cfg, &mut sink);
    sink.finish(&outcome)?;
    outcome
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mp = dir.join("manifest.toml");
    toml::from_str(&read(&mp)?).map_err(|e| Error::Format {
        path: mp,
        detail: e.to_string(),
    })
}

/// Adds a dump to an existing run directory and indexes it in the manifest.
pub fn add_dump(dir: &Path, name: &str, dump: &ActivationDump) -> Result<PathBuf> {
    let mut manifest = read_manifest(dir)?;
    let path = dump_path(dir, name);
    dump.save(&path)?;
    if !manifest.dumps.iter().any(|d| d == name) {
        manifest.dumps.push(name.to_string());
    }
    write(
        &dir.join("manifest.toml"),
        &toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    Ok(path)
}

/// A run read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub manifest: Manifest,
    pub record: RunRecord,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join("config.toml"))?;
        let manifest = read_manifest(dir)?;
        let mut record = RunRecord {
            metrics: parse_metrics(dir)?,
            summary: parse_summary(dir)?,
            ..RunRecord::default()
        };
        for &step in &manifest.checkpoints {
            record
                .checkpoints
                .push((step, load_params(&checkpoint_path(dir, step))?));
        }
        for name in &manifest.dumps {
            record
                .dumps
                .push((name.clone(), ActivationDump::load(&dump_path(dir, name))?));
        }
        Ok(LoadedRun {
            dir: dir.to_path_buf(),
            config,
            manifest,
            record,
        })
    }
}

pub fn load_params(path: &Path) -> Result<ParamSet<f32>> {
    let mut p = ParamSet::new();
    for (name, t) in checkpoint::load(path)? {
        p.add(name, t);
    }
    Ok(p)
}

fn bad(path: &Path, detail: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail,
    }
}

fn parse_metrics(dir: &Path) -> Result<Vec<MetricRow>> {
    let path = dir.join("metrics.csv");
    let text = read(&path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(&path, format!("line {} has {} fields", i + 1, f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(&path, format!("line {}: {e}", i + 1)))
        };
        let phase = match f[1] {
            "A" => "A",
            "B" => "B",
            "pre" => "pre",
            "post" => "post",
            "exposure" => "exposure",
            other => {
                return Err(bad(
                    &path,
                    format!("line {}: unknown phase '{other}'", i + 1),
                ))
            }
        };
        rows.push(MetricRow {
            step: f[0]
                .parse()
                .map_err(|e| bad(&path, format!("line {}: {e}", i + 1)))?,
            phase,
            score: num(f[2])?,
            loss: LossReport {
                q: num(f[3])?,
                pos: num(f[4])?,
                neg: num(f[5])?,
                total: num(f[6])?,
            },
        });
    }
    Ok(rows)
}

fn parse_summary(dir: &Path) -> Result<Vec<(String, f64)>> {
    let path = dir.join("summary.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = read(&path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| bad(&path, format!("malformed row '{line}'")))?;
            Ok((
                k.to_string(),
                v.parse().map_err(|e| bad(&path, format!("{k}: {e}")))?,
            ))
        })
        .collect()
}
