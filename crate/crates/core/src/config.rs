//! Run configuration files and the on-disk layout of run outputs.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ClusterSpec;
use crate::sim::{
    gen_trace, read_trace, summarize, trace_to_string, write_records, GenError, GenParams, Policy, SimConfig,
    SimOutput, Summary, TraceError, TrajectorySpec, DEFAULT_TIMEOUT,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("loading trace {path}")]
    Trace { path: PathBuf, source: TraceError },
    #[error("generating a trace from {path}")]
    Gen { path: PathBuf, source: GenError },
    #[error("invalid cluster {path}: {issues}")]
    Cluster { path: PathBuf, issues: String },
    /// Bad or conflicting arguments.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Output(String),
    #[error("writing {path}")]
    Write { path: PathBuf, source: std::io::Error },
}

/// Keys accepted in a run configuration file, in documentation order.
pub const RUN_CONFIG_KEYS: &[(&str, &str)] = &[
    ("cluster", "cluster description (TOML)"),
    ("trace", "trace file(s) to replay; one, or a list for compare"),
    ("gen", "generator parameter file(s) (TOML); exclusive with trace"),
    ("policy", "elastic | trajectory-static | fixed-dop:N | dedicated:N"),
    ("policies", "list of policies for compare; the first is the ratio baseline"),
    ("depth", "estimation depth of the scheduler (default 2)"),
    ("timeout", "seconds an action may wait before failing (default 600)"),
    ("seed", "seed for generated traces (default 0)"),
    ("out", "output directory"),
    ("window", "width of the ACT time series windows in seconds (default 60)"),
];

/// A single path or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Paths {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl Paths {
    pub fn to_vec(&self) -> Vec<PathBuf> {
        match self {
            Paths::One(p) => vec![p.clone()],
            Paths::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Paths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen: Option<Paths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = read(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Toml { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_all = |ps: &mut Paths| match ps {
            Paths::One(p) => fix(p),
            Paths::Many(v) => v.iter_mut().for_each(fix),
        };
        cfg.cluster.as_mut().map(fix);
        cfg.out.as_mut().map(fix);
        cfg.trace.as_mut().map(fix_all);
        cfg.gen.as_mut().map(fix_all);
        Ok(cfg)
    }

    /// Fields set in `over` win.
    pub fn merge(self, over: RunConfig) -> RunConfig {
        RunConfig {
            cluster: over.cluster.or(self.cluster),
            trace: over.trace.or(self.trace),
            gen: over.gen.or(self.gen),
            policy: over.policy.or(self.policy),
            policies: over.policies.or(self.policies),
            depth: over.depth.or(self.depth),
            timeout: over.timeout.or(self.timeout),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            window: over.window.or(self.window),
        }
    }

    pub fn sim_config(&self, policy: Policy) -> Result<SimConfig, ConfigError> {
        let depth = self.depth.unwrap_or(crate::scheduler::DEFAULT_DEPTH);
        if depth == 0 {
            return Err(ConfigError::Invalid("depth must be at least 1".into()));
        }
        let timeout = self.timeout.unwrap_or(DEFAULT_TIMEOUT);
        if !(timeout > 0.0 && timeout.is_finite()) {
            return Err(ConfigError::Invalid("timeout must be positive".into()));
        }
        Ok(SimConfig { policy, depth, timeout })
    }

    pub fn window(&self) -> f64 {
        self.window.unwrap_or(60.0)
    }

    /// Workloads named by `trace` or `gen`; exactly one of them must be set.
    pub fn workloads(&self) -> Result<Vec<Workload>, ConfigError> {
        let seed = self.seed.unwrap_or(0);
        match (&self.trace, &self.gen) {
            (Some(t), None) => t.to_vec().iter().map(|p| Workload::from_trace(p)).collect(),
            (None, Some(g)) => g.to_vec().iter().map(|p| Workload::from_gen(p, seed)).collect(),
            (Some(_), Some(_)) => Err(ConfigError::Invalid("give either a trace or generator parameters, not both".into())),
            (None, None) => Err(ConfigError::Invalid("need a trace (--trace) or generator parameters (--gen)".into())),
        }
    }

    pub fn cluster_spec(&self) -> Result<ClusterSpec, ConfigError> {
        let path = self.cluster.as_ref().ok_or_else(|| ConfigError::Invalid("need a cluster (--cluster)".into()))?;
        load_cluster(path)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })
}

pub fn load_cluster(path: &Path) -> Result<ClusterSpec, ConfigError> {
    let spec: ClusterSpec =
        toml::from_str(&read(path)?).map_err(|source| ConfigError::Toml { path: path.to_path_buf(), source })?;
    let issues = spec.validate();
    if !issues.is_empty() {
        return Err(ConfigError::Cluster { path: path.to_path_buf(), issues: issues.join("; ") });
    }
    Ok(spec)
}

pub fn load_gen_params(path: &Path) -> Result<GenParams, ConfigError> {
    toml::from_str(&read(path)?).map_err(|source| ConfigError::Toml { path: path.to_path_buf(), source })
}

pub fn load_trace(path: &Path) -> Result<Vec<TrajectorySpec>, ConfigError> {
    let f = fs::File::open(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    read_trace(BufReader::new(f)).map_err(|source| ConfigError::Trace { path: path.to_path_buf(), source })
}

/// A trace plus where it came from.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub source: String,
    pub trajectories: Vec<TrajectorySpec>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "workload".to_string(), |s| s.to_string_lossy().into_owned())
}

impl Workload {
    pub fn from_trace(path: &Path) -> Result<Workload, ConfigError> {
        Ok(Workload { name: stem(path), source: path.display().to_string(), trajectories: load_trace(path)? })
    }

    pub fn from_gen(path: &Path, seed: u64) -> Result<Workload, ConfigError> {
        let params = load_gen_params(path)?;
        let trajectories =
            gen_trace(&params, seed).map_err(|source| ConfigError::Gen { path: path.to_path_buf(), source })?;
        Ok(Workload { name: stem(path), source: format!("{} (seed {seed})", path.display()), trajectories })
    }

    pub fn text(&self) -> String {
        trace_to_string(&self.trajectories)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Writes `data` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<(), ConfigError> {
    let err = |source| ConfigError::Write { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(data).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Where a trace came from, recorded next to the results.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRef {
    pub source: String,
    pub sha256: String,
    pub trajectories: usize,
    pub actions: usize,
}

/// Writes one run's outputs into `dir`: config snapshot, trace reference,
/// records table, summary and event log.
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    cluster: &ClusterSpec,
    workload: &Workload,
    output: &SimOutput,
) -> Result<Summary, ConfigError> {
    let summary = summarize(&output.records, &output.trajectory_starts, cfg.window())
        .map_err(|e| ConfigError::Output(format!("{}: {e}", workload.name)))?;
    let trace_text = workload.text();
    let trace_ref = TraceRef {
        source: workload.source.clone(),
        sha256: sha256_hex(trace_text.as_bytes()),
        trajectories: workload.trajectories.len(),
        actions: workload.trajectories.iter().map(|t| t.actions().count()).sum(),
    };
    write_atomic(&dir.join("config.toml"), toml_text(cfg).as_bytes())?;
    write_atomic(&dir.join("cluster.toml"), toml_text(cluster).as_bytes())?;
    write_atomic(&dir.join("trace.ndjson"), trace_text.as_bytes())?;
    write_atomic(&dir.join("trace_ref.json"), pretty(&trace_ref).as_bytes())?;
    let mut csv = Vec::new();
    write_records(&mut csv, &output.records).map_err(|e| ConfigError::Output(format!("records: {e}")))?;
    write_atomic(&dir.join("records.csv"), &csv)?;
    write_atomic(&dir.join("summary.json"), pretty(&summary).as_bytes())?;
    write_atomic(&dir.join("events.jsonl"), output.log_jsonl().as_bytes())?;
    Ok(summary)
}

pub fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn toml_text<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("plain data serializes to TOML")
}
