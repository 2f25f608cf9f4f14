//! Trajectory traces: the on-disk format, loading into scheduler actions,
//! and a seeded synthetic generator.
//!
//! A trace file is newline-delimited JSON. The first line is a header
//! (`{"format":"actsched-trace","version":1}`), every following line is one
//! trajectory:
//!
//! ```text
//! {"id":0,"start":0.0,"memory_mb":512,"segments":[
//!   {"kind":"think","dur":5.0},
//!   {"kind":"act","cost":{"cpu":{"units":[1,2,4]}},"key":"cpu",
//!    "elasticity":{"1":1.0,"2":0.9,"4":0.8},"base_dur":12.0}]}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_action, Action, ActionId, ClusterSpec, ElasticityProfile, ModelError, SimTime, TrajectoryId, UnitSpec,
};

pub const TRACE_FORMAT: &str = "actsched-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("missing or unsupported header (want {TRACE_FORMAT} v{TRACE_VERSION})")]
    Header,
    #[error("trajectory {trajectory}: unknown resource type {name:?}")]
    UnknownResource { trajectory: TrajectoryId, name: String },
    #[error("trajectory {trajectory}: {source}")]
    Model { trajectory: TrajectoryId, source: ModelError },
    #[error("trajectory {trajectory}, action {action}: {issues}")]
    Invalid { trajectory: TrajectoryId, action: ActionId, issues: String },
    #[error("trajectory {trajectory}: segment durations must be positive")]
    Duration { trajectory: TrajectoryId },
    #[error("duplicate trajectory id {0}")]
    DuplicateId(TrajectoryId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
}

impl Default for TraceHeader {
    fn default() -> TraceHeader {
        TraceHeader { format: TRACE_FORMAT.to_string(), version: TRACE_VERSION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitsField {
    pub units: Vec<u32>,
}

/// One action as written in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActSpec {
    pub cost: BTreeMap<String, UnitsField>,
    pub key: String,
    /// True efficiency table. Empty means the action does not scale and
    /// `base_dur` is its duration at minimum units.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "unit_keys")]
    pub elasticity: BTreeMap<u32, f64>,
    /// Single-unit duration when `elasticity` is given.
    pub base_dur: f64,
    /// Whether the scheduler gets to see the profile and duration.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub profiled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_dur: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
}

/// JSON object keys are strings; segments are internally tagged, which
/// keeps serde from coercing them to integers on its own.
mod unit_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<String, f64>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse::<u32>().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad unit key {k:?}"))))
            .collect()
    }
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl ActSpec {
    /// Actual execution time at `units`.
    pub fn exec_secs(&self, units: u32) -> f64 {
        match self.elasticity.get(&units) {
            Some(_) if units == 1 => self.base_dur,
            Some(&e) => self.base_dur / (e * units as f64),
            None => self.base_dur,
        }
    }

    fn min_units(&self) -> u32 {
        self.cost.get(&self.key).and_then(|u| u.units.iter().min().copied()).unwrap_or(1)
    }

    /// Execution time at minimum key units.
    pub fn min_secs(&self) -> f64 {
        self.exec_secs(self.min_units())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Think { dur: f64 },
    Act(ActSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub id: TrajectoryId,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub memory_mb: u64,
    pub segments: Vec<Segment>,
}

impl TrajectorySpec {
    pub fn actions(&self) -> impl Iterator<Item = &ActSpec> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Act(a) => Some(a),
            Segment::Think { .. } => None,
        })
    }

    /// Share of the trajectory's idle-cluster lifetime spent inside actions.
    pub fn active_ratio(&self) -> f64 {
        let (mut act, mut think) = (0.0, 0.0);
        for s in &self.segments {
            match s {
                Segment::Think { dur } => think += dur,
                Segment::Act(a) => act += a.min_secs(),
            }
        }
        if act + think > 0.0 {
            act / (act + think)
        } else {
            0.0
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, trajectories: &[TrajectorySpec]) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &TraceHeader::default())?;
    w.write_all(b"\n")?;
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(trajectories: &[TrajectorySpec]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trajectories).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TrajectorySpec>, TraceError> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (_, first) = lines.next().ok_or(TraceError::Header)?;
    let header: TraceHeader = serde_json::from_str(&first?).map_err(|_| TraceError::Header)?;
    if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
        return Err(TraceError::Header);
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let t: TrajectorySpec =
            serde_json::from_str(&line?).map_err(|source| TraceError::Json { line: i + 1, source })?;
        out.push(t);
    }
    Ok(out)
}

/// One action ready for the simulator: the scheduler's view plus the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedAction {
    pub action: Action,
    pub spec: ActSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlannedSegment {
    Think(SimTime),
    Act(Box<PlannedAction>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrajectory {
    pub id: TrajectoryId,
    pub start: SimTime,
    pub segments: Vec<PlannedSegment>,
}

/// Resolves resource names, assigns action ids in file order and validates
/// every action against the cluster.
pub fn plan(trajectories: &[TrajectorySpec], cluster: &ClusterSpec) -> Result<Vec<PlannedTrajectory>, TraceError> {
    let mut next_id: ActionId = 0;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        if !seen.insert(t.id) {
            return Err(TraceError::DuplicateId(t.id));
        }
        if !(t.start >= 0.0 && t.start.is_finite()) {
            return Err(TraceError::Duration { trajectory: t.id });
        }
        let mut segments = Vec::with_capacity(t.segments.len());
        for s in &t.segments {
            match s {
                Segment::Think { dur } => {
                    if !(*dur > 0.0 && dur.is_finite()) {
                        return Err(TraceError::Duration { trajectory: t.id });
                    }
                    segments.push(PlannedSegment::Think(SimTime::from_secs(*dur)));
                }
                Segment::Act(spec) => {
                    let action = build_action(next_id, t, spec, cluster)?;
                    next_id += 1;
                    segments.push(PlannedSegment::Act(Box::new(PlannedAction { action, spec: spec.clone() })));
                }
            }
        }
        out.push(PlannedTrajectory { id: t.id, start: SimTime::from_secs(t.start), segments });
    }
    Ok(out)
}

fn build_action(
    id: ActionId,
    t: &TrajectorySpec,
    spec: &ActSpec,
    cluster: &ClusterSpec,
) -> Result<Action, TraceError> {
    let resolve = |name: &str| {
        cluster.id_of(name).ok_or_else(|| TraceError::UnknownResource { trajectory: t.id, name: name.to_string() })
    };
    let key = resolve(&spec.key)?;
    let model = |source| TraceError::Model { trajectory: t.id, source };
    if !(spec.base_dur > 0.0 && spec.base_dur.is_finite()) {
        return Err(TraceError::Duration { trajectory: t.id });
    }

    let key_units = spec.cost.get(&spec.key).map(|u| u.units.clone()).unwrap_or_default();
    let mut action = Action::new(id, t.id, key, UnitSpec::new(key_units).map_err(model)?);
    for (name, units) in &spec.cost {
        action.cost.insert(resolve(name)?, UnitSpec::new(units.units.clone()).map_err(model)?);
    }
    if !spec.elasticity.is_empty() {
        ElasticityProfile::new(key, spec.elasticity.clone()).map_err(model)?;
    }
    if spec.profiled && !spec.elasticity.is_empty() {
        action.elasticity = ElasticityProfile::new(key, spec.elasticity.clone()).map_err(model)?;
        action.base_duration = Some(spec.base_dur);
    }
    action.est_duration = spec.est_dur.or(spec.profiled.then(|| spec.min_secs()));
    action.service_id = spec.service.clone();
    action.node_pin = spec.node;
    action.memory_mb = t.memory_mb;

    let issues = validate_action(&action, cluster);
    if !issues.is_empty() {
        let issues = issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(TraceError::Invalid { trajectory: t.id, action: id, issues });
    }
    Ok(action)
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("active_ratio must lie strictly between 0 and 1, got {0}")]
    ActiveRatio(f64),
    #[error("{0}")]
    Param(String),
}

/// How an action kind's efficiency behaves with more units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    None,
    Linear,
    Amdahl {
        parallel: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationDist {
    Fixed { secs: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Log-normal with the given median; `cap` truncates the tail.
    LogNormal { median: f64, sigma: f64, cap: Option<f64> },
}

impl DurationDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<f64, GenError> {
        let v = match *self {
            DurationDist::Fixed { secs } => secs,
            DurationDist::Uniform { lo, hi } => {
                if !(lo > 0.0 && hi >= lo) {
                    return Err(GenError::Param(format!("uniform duration needs 0 < lo <= hi, got {lo}..{hi}")));
                }
                if hi == lo {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
            DurationDist::LogNormal { median, sigma, cap } => {
                let d = LogNormal::new(median.ln(), sigma)
                    .map_err(|e| GenError::Param(format!("log-normal duration: {e}")))?;
                let v = d.sample(rng);
                cap.map_or(v, |c| v.min(c))
            }
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(GenError::Param(format!("duration distribution produced {v}")));
        }
        Ok(round_us(v))
    }
}

/// One kind of action in the generated mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionKind {
    pub weight: f64,
    pub resource: String,
    pub units: Vec<u32>,
    #[serde(default)]
    pub scaling: Scaling,
    pub duration: DurationDist,
    #[serde(default = "yes")]
    pub profiled: bool,
    /// One is picked uniformly per action.
    #[serde(default)]
    pub services: Vec<String>,
    /// Fixed extra costs on other resource types.
    #[serde(default)]
    pub extra: BTreeMap<String, Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n_trajectories: usize,
    pub turns_min: usize,
    pub turns_max: usize,
    /// Target mean of per-trajectory active ratios.
    pub active_ratio: f64,
    /// Beta concentration of per-trajectory ratios around the target.
    #[serde(default = "default_concentration")]
    pub ratio_concentration: f64,
    /// Trajectory starts are spread uniformly over `[0, start_spread]`.
    #[serde(default)]
    pub start_spread: f64,
    #[serde(default)]
    pub memory_mb: u64,
    pub actions: Vec<ActionKind>,
}

fn default_concentration() -> f64 {
    10.0
}

fn round_us(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn profile_table(scaling: &Scaling, units: &[u32]) -> BTreeMap<u32, f64> {
    match scaling {
        Scaling::None => BTreeMap::new(),
        Scaling::Linear => units.iter().map(|&m| (m, 1.0)).collect(),
        Scaling::Amdahl { parallel } => {
            // any key resource id works here, only the table is kept
            ElasticityProfile::amdahl(crate::model::ResourceTypeId(0), units, *parallel).table
        }
    }
}

impl GenParams {
    pub fn check(&self) -> Result<(), GenError> {
        if !(self.active_ratio > 0.0 && self.active_ratio < 1.0) {
            return Err(GenError::ActiveRatio(self.active_ratio));
        }
        if self.n_trajectories == 0 || self.turns_min == 0 || self.turns_max < self.turns_min {
            return Err(GenError::Param("need n_trajectories > 0 and 0 < turns_min <= turns_max".into()));
        }
        if self.ratio_concentration.is_nan() || self.ratio_concentration <= 0.0 || self.start_spread.is_nan() || self.start_spread < 0.0 {
            return Err(GenError::Param("ratio_concentration must be positive, start_spread non-negative".into()));
        }
        if self.actions.is_empty() || self.actions.iter().any(|k| k.weight.is_nan() || k.weight < 0.0 || k.units.is_empty()) {
            return Err(GenError::Param("need at least one action kind with units and a non-negative weight".into()));
        }
        if self.actions.iter().all(|k| k.weight == 0.0) {
            return Err(GenError::Param("action weights sum to zero".into()));
        }
        for k in &self.actions {
            if let Scaling::Amdahl { parallel } = k.scaling {
                if !(0.0..=1.0).contains(&parallel) {
                    return Err(GenError::Param(format!("amdahl parallel share must be in [0,1], got {parallel}")));
                }
            }
            if !matches!(k.scaling, Scaling::None) && !k.units.contains(&1) {
                return Err(GenError::Param("scaling action kinds must allow one unit".into()));
            }
        }
        Ok(())
    }
}

/// Seeded synthetic trace. Each trajectory draws its own active ratio from
/// a Beta distribution around the target and sizes its think time so that
/// it hits that ratio exactly.
pub fn gen_trace(params: &GenParams, seed: u64) -> Result<Vec<TrajectorySpec>, GenError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = params.active_ratio;
    let k = params.ratio_concentration;
    let ratio = Beta::new(r * k, (1.0 - r) * k).map_err(|e| GenError::Param(format!("active ratio spread: {e}")))?;
    let kinds = WeightedIndex::new(params.actions.iter().map(|a| a.weight))
        .map_err(|e| GenError::Param(format!("action weights: {e}")))?;
    let split = Gamma::new(2.0, 1.0).expect("constant parameters");

    let mut out = Vec::with_capacity(params.n_trajectories);
    for id in 0..params.n_trajectories as TrajectoryId {
        let turns = rng.random_range(params.turns_min..=params.turns_max);
        let mut acts = Vec::with_capacity(turns);
        for _ in 0..turns {
            let kind = &params.actions[kinds.sample(&mut rng)];
            let base = kind.duration.sample(&mut rng)?;
            let mut units = kind.units.clone();
            units.sort_unstable();
            units.dedup();
            let mut cost: BTreeMap<String, UnitsField> =
                kind.extra.iter().map(|(n, u)| (n.clone(), UnitsField { units: u.clone() })).collect();
            cost.insert(kind.resource.clone(), UnitsField { units: units.clone() });
            let service = (!kind.services.is_empty()).then(|| kind.services[rng.random_range(0..kind.services.len())].clone());
            acts.push(ActSpec {
                cost,
                key: kind.resource.clone(),
                elasticity: profile_table(&kind.scaling, &units),
                base_dur: base,
                profiled: kind.profiled,
                est_dur: None,
                service,
                node: None,
            });
        }

        let act_total: f64 = acts.iter().map(ActSpec::min_secs).sum();
        // keep ratios away from 0 and 1 so both kinds of time stay positive
        let ri: f64 = ratio.sample(&mut rng).clamp(0.02, 0.98);
        let think_total = act_total * (1.0 - ri) / ri;
        let weights: Vec<f64> = (0..turns).map(|_| split.sample(&mut rng)).collect();
        let wsum: f64 = weights.iter().sum();

        let mut segments = Vec::with_capacity(2 * turns);
        for (a, w) in acts.into_iter().zip(weights) {
            segments.push(Segment::Think { dur: round_us((think_total * w / wsum).max(1e-3)) });
            segments.push(Segment::Act(a));
        }
        let start = if params.start_spread > 0.0 { round_us(rng.random_range(0.0..params.start_spread)) } else { 0.0 };
        out.push(TrajectorySpec { id, start, memory_mb: params.memory_mb, segments });
    }
    Ok(out)
}

/// Mean of per-trajectory active ratios.
pub fn measured_active_ratio(trajectories: &[TrajectorySpec]) -> f64 {
    if trajectories.is_empty() {
        return 0.0;
    }
    trajectories.iter().map(TrajectorySpec::active_ratio).sum::<f64>() / trajectories.len() as f64
}
