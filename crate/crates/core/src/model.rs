//! Domain types for actions, costs, elasticity and cluster capacity.
//!
//! An [`Action`] is one atomic external invocation made by a trajectory. Its
//! cost is a vector over the cluster's resource types; exactly one of those
//! types is the key elasticity resource, and the action's execution time at
//! `m` units of it is `base / (E(m) * m)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into the cluster's resource types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceTypeId(pub usize);

impl fmt::Display for ResourceTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

pub type ActionId = u64;
pub type TrajectoryId = u64;

/// Simulated time with microsecond resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MICROS_PER_SEC: u64 = 1_000_000;

    /// Rounds a non-negative duration in seconds to the nearest microsecond.
    pub fn from_secs(secs: f64) -> SimTime {
        debug_assert!(secs >= 0.0 && secs.is_finite(), "bad duration {secs}");
        SimTime((secs.max(0.0) * Self::MICROS_PER_SEC as f64).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / Self::MICROS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / Self::MICROS_PER_SEC, self.0 % Self::MICROS_PER_SEC)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unit set must be non-empty and strictly positive")]
    EmptyUnits,
    #[error("{units} is not an allowed unit count")]
    UnitNotAllowed { units: u32 },
    #[error("base duration is unknown")]
    DurationUnknown,
    #[error("base duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("efficiency E({units}) = {value} is outside (0, 1]")]
    EfficiencyOutOfRange { units: u32, value: f64 },
    #[error("E(m)*m decreases between m={lo} and m={hi}")]
    NonMonotoneSpeedup { lo: u32, hi: u32 },
}

/// Discrete set of unit counts an action may be allocated on one resource type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct UnitSpec {
    allowed: Vec<u32>,
}

impl UnitSpec {
    /// Builds a unit set; input order does not matter, duplicates collapse.
    pub fn new(mut units: Vec<u32>) -> Result<UnitSpec, ModelError> {
        units.sort_unstable();
        units.dedup();
        if units.is_empty() || units[0] == 0 {
            return Err(ModelError::EmptyUnits);
        }
        Ok(UnitSpec { allowed: units })
    }

    pub fn fixed(units: u32) -> UnitSpec {
        UnitSpec::new(vec![units]).expect("fixed unit count must be positive")
    }

    /// Every integer in `min..=max`.
    pub fn range(min: u32, max: u32) -> Result<UnitSpec, ModelError> {
        UnitSpec::new((min..=max).collect())
    }

    pub fn allowed(&self) -> &[u32] {
        &self.allowed
    }

    pub fn min_units(&self) -> u32 {
        self.allowed[0]
    }

    pub fn max_units(&self) -> u32 {
        *self.allowed.last().unwrap()
    }

    pub fn contains(&self, units: u32) -> bool {
        self.allowed.binary_search(&units).is_ok()
    }

    pub fn is_elastic(&self) -> bool {
        self.allowed.len() > 1
    }

    /// Largest allowed unit not above `target`, or the minimum when none is.
    pub fn snap_down(&self, target: u32) -> u32 {
        self.allowed.iter().rev().copied().find(|&u| u <= target).unwrap_or(self.min_units())
    }
}

impl TryFrom<Vec<u32>> for UnitSpec {
    type Error = ModelError;
    fn try_from(v: Vec<u32>) -> Result<Self, Self::Error> {
        UnitSpec::new(v)
    }
}

impl From<UnitSpec> for Vec<u32> {
    fn from(u: UnitSpec) -> Vec<u32> {
        u.allowed
    }
}

/// Per-resource-type consumption. Absent entries mean zero consumption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    entries: BTreeMap<ResourceTypeId, UnitSpec>,
}

impl CostVector {
    pub fn new() -> CostVector {
        CostVector::default()
    }

    pub fn with(mut self, resource: ResourceTypeId, units: UnitSpec) -> CostVector {
        self.entries.insert(resource, units);
        self
    }

    pub fn insert(&mut self, resource: ResourceTypeId, units: UnitSpec) {
        self.entries.insert(resource, units);
    }

    pub fn get(&self, resource: ResourceTypeId) -> Option<&UnitSpec> {
        self.entries.get(&resource)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ResourceTypeId, &UnitSpec)> {
        self.entries.iter().map(|(r, u)| (*r, u))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Units consumed on `resource` at minimum allocation (0 when absent).
    pub fn min_units(&self, resource: ResourceTypeId) -> u32 {
        self.entries.get(&resource).map_or(0, UnitSpec::min_units)
    }
}

/// Efficiency table `E(m)` over the key resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityProfile {
    pub table: BTreeMap<u32, f64>,
    pub key_resource: ResourceTypeId,
    pub known: bool,
}

impl ElasticityProfile {
    pub fn unknown(key_resource: ResourceTypeId) -> ElasticityProfile {
        ElasticityProfile { table: BTreeMap::new(), key_resource, known: false }
    }

    /// Validated profile. Enforces `0 < E(m) <= 1`, `E(1) = 1` and that
    /// `E(m) * m` never decreases in `m`.
    pub fn new(
        key_resource: ResourceTypeId,
        table: BTreeMap<u32, f64>,
    ) -> Result<ElasticityProfile, ModelError> {
        let profile = ElasticityProfile { table, key_resource, known: true };
        profile.check()?;
        Ok(profile)
    }

    /// `E(m) = 1` for every listed unit count.
    pub fn linear(key_resource: ResourceTypeId, units: &[u32]) -> ElasticityProfile {
        let table = units.iter().map(|&m| (m, 1.0)).collect();
        ElasticityProfile { table, key_resource, known: true }
    }

    /// Amdahl-style efficiency for a workload whose parallel share is `parallel`.
    pub fn amdahl(key_resource: ResourceTypeId, units: &[u32], parallel: f64) -> ElasticityProfile {
        let table = units
            .iter()
            .map(|&m| {
                if m == 1 {
                    return (m, 1.0);
                }
                let speedup = 1.0 / ((1.0 - parallel) + parallel / m as f64);
                (m, (speedup / m as f64).min(1.0))
            })
            .collect();
        ElasticityProfile { table, key_resource, known: true }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if !self.known {
            return Ok(());
        }
        for (&m, &e) in &self.table {
            if m == 0 {
                return Err(ModelError::EmptyUnits);
            }
            if !(e > 0.0 && e <= 1.0) || (m == 1 && e != 1.0) {
                return Err(ModelError::EfficiencyOutOfRange { units: m, value: e });
            }
        }
        let speedups: Vec<(u32, f64)> = self.table.iter().map(|(&m, &e)| (m, e * m as f64)).collect();
        for w in speedups.windows(2) {
            // relative slack absorbs rounding in E(m) * m for flat profiles
            if w[1].1 < w[0].1 * (1.0 - 1e-12) {
                return Err(ModelError::NonMonotoneSpeedup { lo: w[0].0, hi: w[1].0 });
            }
        }
        Ok(())
    }

    pub fn efficiency(&self, units: u32) -> Option<f64> {
        self.table.get(&units).copied()
    }

    /// Known, and at least one listed unit count speeds execution up.
    pub fn is_scaling(&self) -> bool {
        if !self.known || self.table.len() < 2 {
            return false;
        }
        let first = self.table.iter().next().map(|(&m, &e)| e * m as f64).unwrap();
        self.table.iter().any(|(&m, &e)| e * m as f64 > first)
    }
}

/// Execution duration at `units`: `base / (E(units) * units)`.
pub fn eval_duration(
    profile: &ElasticityProfile,
    base_duration: Option<f64>,
    units: u32,
) -> Result<f64, ModelError> {
    let base = base_duration.ok_or(ModelError::DurationUnknown)?;
    if base.is_nan() || base <= 0.0 {
        return Err(ModelError::NonPositiveDuration(base));
    }
    let e = profile.efficiency(units).ok_or(ModelError::UnitNotAllowed { units })?;
    if units == 1 {
        return Ok(base);
    }
    Ok(base / (e * units as f64))
}

/// One atomic external invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: ActionId,
    pub trajectory_id: TrajectoryId,
    pub submit_time: SimTime,
    pub cost: CostVector,
    pub elasticity: ElasticityProfile,
    /// Profiled single-unit duration; `None` when the action was not profiled.
    pub base_duration: Option<f64>,
    /// Rough duration hint used only when no history exists yet.
    pub est_duration: Option<f64>,
    pub service_id: Option<String>,
    pub node_pin: Option<usize>,
    /// Memory the owning trajectory keeps reserved on its CPU node.
    pub memory_mb: u64,
}

impl Action {
    pub fn new(id: ActionId, trajectory_id: TrajectoryId, key: ResourceTypeId, units: UnitSpec) -> Action {
        Action {
            id,
            trajectory_id,
            submit_time: SimTime::ZERO,
            cost: CostVector::new().with(key, units),
            elasticity: ElasticityProfile::unknown(key),
            base_duration: None,
            est_duration: None,
            service_id: None,
            node_pin: None,
            memory_mb: 0,
        }
    }

    pub fn key_resource(&self) -> ResourceTypeId {
        self.elasticity.key_resource
    }

    pub fn key_units(&self) -> &UnitSpec {
        self.cost
            .get(self.key_resource())
            .expect("validated actions carry a cost entry for their key resource")
    }

    /// Elastic with a known profile and known duration: eligible for the DP.
    pub fn is_scalable(&self) -> bool {
        self.elasticity.is_scaling()
            && self.base_duration.is_some()
            && self.cost.get(self.key_resource()).is_some_and(UnitSpec::is_elastic)
    }

    /// Allowed key units the scheduler may choose from.
    pub fn schedulable_units(&self) -> Vec<u32> {
        if self.is_scalable() {
            self.key_units()
                .allowed()
                .iter()
                .copied()
                .filter(|m| self.elasticity.efficiency(*m).is_some())
                .collect()
        } else {
            vec![self.key_units().min_units()]
        }
    }

    /// Modeled duration at `units`, if the profile covers it.
    pub fn duration_at(&self, units: u32) -> Option<f64> {
        eval_duration(&self.elasticity, self.base_duration, units).ok()
    }

    /// FCFS ordering key.
    pub fn fcfs_key(&self) -> (SimTime, ActionId) {
        (self.submit_time, self.id)
    }
}

/// Topology of one resource type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Flat pool with a concurrency cap (also the basic concurrency manager).
    Pool { capacity: u32 },
    /// At most `limit` concurrent units.
    Concurrency { limit: u32 },
    /// At most `limit` units granted per tumbling window of `window` seconds.
    Quota { limit: u32, window: f64 },
    /// CPU nodes, each with NUMA domains and memory.
    Cpu {
        nodes: Vec<CpuNodeSpec>,
        /// Fixed per-action allocation overhead, seconds.
        #[serde(default)]
        overhead: f64,
    },
    /// GPU nodes with 8 devices each.
    Gpu {
        nodes: u32,
        #[serde(default)]
        services: Vec<ServiceSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuNodeSpec {
    /// Core count per NUMA domain.
    pub numa: Vec<u32>,
    pub memory_mb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub dops: Vec<u32>,
    /// Explicit restore cost per DoP, seconds. Missing entries use the default model.
    #[serde(default)]
    pub restore_cost: BTreeMap<u32, f64>,
    /// Mean single-GPU action duration for this service, seconds.
    #[serde(default = "ServiceSpec::default_mean")]
    pub mean_duration: f64,
    #[serde(default)]
    pub state_size_gb: f64,
}

impl ServiceSpec {
    fn default_mean() -> f64 {
        10.0
    }
}

pub const GPUS_PER_NODE: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSpec {
    pub name: String,
    #[serde(flatten)]
    pub topology: Topology,
}

/// Per-resource-type capacities and topologies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub resources: Vec<ResourceSpec>,
}

impl ClusterSpec {
    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn resource(&self, id: ResourceTypeId) -> Option<&ResourceSpec> {
        self.resources.get(id.0)
    }

    pub fn id_of(&self, name: &str) -> Option<ResourceTypeId> {
        self.resources.iter().position(|r| r.name == name).map(ResourceTypeId)
    }

    /// Largest unit count a single action can hold on `id`.
    pub fn per_action_capacity(&self, id: ResourceTypeId) -> Option<u32> {
        self.resource(id).map(|r| match &r.topology {
            Topology::Pool { capacity } => *capacity,
            Topology::Concurrency { limit } | Topology::Quota { limit, .. } => *limit,
            Topology::Cpu { nodes, .. } => nodes.iter().map(|n| n.numa.iter().sum::<u32>()).max().unwrap_or(0),
            Topology::Gpu { nodes, .. } => {
                if *nodes > 0 {
                    GPUS_PER_NODE
                } else {
                    0
                }
            }
        })
    }

    /// Total units of `id` in the cluster.
    pub fn total_capacity(&self, id: ResourceTypeId) -> Option<u64> {
        self.resource(id).map(|r| match &r.topology {
            Topology::Pool { capacity } => *capacity as u64,
            Topology::Concurrency { limit } | Topology::Quota { limit, .. } => *limit as u64,
            Topology::Cpu { nodes, .. } => nodes.iter().map(|n| n.numa.iter().map(|&c| c as u64).sum::<u64>()).sum(),
            Topology::Gpu { nodes, .. } => *nodes as u64 * GPUS_PER_NODE as u64,
        })
    }

    pub fn is_gpu(&self, id: ResourceTypeId) -> bool {
        matches!(self.resource(id).map(|r| &r.topology), Some(Topology::Gpu { .. }))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for r in &self.resources {
            match &r.topology {
                Topology::Pool { capacity: 0 } | Topology::Concurrency { limit: 0 } => {
                    issues.push(format!("{}: capacity must be positive", r.name))
                }
                Topology::Quota { limit, window } if *limit == 0 || window.is_nan() || *window <= 0.0 => {
                    issues.push(format!("{}: quota limit and window must be positive", r.name))
                }
                Topology::Cpu { nodes, overhead } => {
                    if nodes.is_empty() || nodes.iter().any(|n| n.numa.is_empty() || n.numa.iter().all(|&c| c == 0)) {
                        issues.push(format!("{}: every CPU node needs cores", r.name));
                    }
                    if *overhead < 0.0 {
                        issues.push(format!("{}: overhead must be non-negative", r.name));
                    }
                }
                Topology::Gpu { nodes: 0, .. } => issues.push(format!("{}: need at least one GPU node", r.name)),
                Topology::Gpu { services, .. } => {
                    for s in services {
                        if s.dops.iter().any(|d| !is_gpu_unit(*d)) {
                            issues.push(format!("{}: service {} has a DoP outside {{1,2,4,8}}", r.name, s.name));
                        }
                    }
                }
                _ => {}
            }
        }
        issues
    }
}

pub fn is_gpu_unit(units: u32) -> bool {
    matches!(units, 1 | 2 | 4 | 8)
}

/// One violated invariant found by [`validate_action`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    UnknownResource(ResourceTypeId),
    KeyResourceMissing(ResourceTypeId),
    MinExceedsCapacity { resource: ResourceTypeId, min: u32, capacity: u32 },
    GpuUnitsNotPowerOfTwo { resource: ResourceTypeId, units: u32 },
    Elasticity(ModelError),
    ElasticityMissingUnit(u32),
    NonPositiveDuration(f64),
    UnknownService(String),
    DopNotOffered { service: String, units: u32 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::UnknownResource(r) => write!(f, "unknown resource type {r}"),
            ValidationIssue::KeyResourceMissing(r) => write!(f, "key resource {r} has no cost entry"),
            ValidationIssue::MinExceedsCapacity { resource, min, capacity } => {
                write!(f, "min exceeds capacity on {resource} ({min} > {capacity})")
            }
            ValidationIssue::GpuUnitsNotPowerOfTwo { resource, units } => {
                write!(f, "GPU units must be in {{1,2,4,8}} (got {units} on {resource})")
            }
            ValidationIssue::Elasticity(e) => write!(f, "bad elasticity: {e}"),
            ValidationIssue::ElasticityMissingUnit(m) => write!(f, "elasticity has no entry for allowed unit {m}"),
            ValidationIssue::NonPositiveDuration(d) => write!(f, "base duration must be positive, got {d}"),
            ValidationIssue::UnknownService(s) => write!(f, "unknown GPU service {s:?}"),
            ValidationIssue::DopNotOffered { service, units } => {
                write!(f, "service {service:?} is not deployed at DoP {units}")
            }
        }
    }
}

/// Every invariant `action` violates against `spec`. Never aborts early.
pub fn validate_action(action: &Action, spec: &ClusterSpec) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for (r, units) in action.cost.iter() {
        let Some(capacity) = spec.per_action_capacity(r) else {
            issues.push(ValidationIssue::UnknownResource(r));
            continue;
        };
        if units.min_units() > capacity {
            issues.push(ValidationIssue::MinExceedsCapacity { resource: r, min: units.min_units(), capacity });
        }
        if spec.is_gpu(r) {
            for &u in units.allowed() {
                if !is_gpu_unit(u) {
                    issues.push(ValidationIssue::GpuUnitsNotPowerOfTwo { resource: r, units: u });
                }
            }
        }
    }
    let key = action.key_resource();
    if action.cost.get(key).is_none() {
        issues.push(ValidationIssue::KeyResourceMissing(key));
    }
    if action.elasticity.known {
        if let Err(e) = action.elasticity.check() {
            issues.push(ValidationIssue::Elasticity(e));
        }
        if let Some(units) = action.cost.get(key) {
            for &m in units.allowed() {
                if !action.elasticity.table.contains_key(&m) {
                    issues.push(ValidationIssue::ElasticityMissingUnit(m));
                }
            }
        }
    }
    if let Some(d) = action.base_duration {
        if d.is_nan() || d <= 0.0 {
            issues.push(ValidationIssue::NonPositiveDuration(d));
        }
    }
    if let (Some(name), Some(Topology::Gpu { services, .. }), Some(units)) =
        (&action.service_id, spec.resource(key).map(|r| &r.topology), action.cost.get(key))
    {
        match services.iter().find(|s| &s.name == name) {
            None => issues.push(ValidationIssue::UnknownService(name.clone())),
            Some(s) => {
                for &u in units.allowed() {
                    if !s.dops.contains(&u) {
                        issues.push(ValidationIssue::DopNotOffered { service: name.clone(), units: u });
                    }
                }
            }
        }
    }
    issues
}

/// Numeric feasibility: for every resource type, the summed minimum demand
/// fits in what remains. Topology checks belong to the managers.
pub fn cost_feasible(mins: &[CostVector], remaining: &BTreeMap<ResourceTypeId, u64>) -> bool {
    let mut demand: BTreeMap<ResourceTypeId, u64> = BTreeMap::new();
    for cost in mins {
        for (r, units) in cost.iter() {
            *demand.entry(r).or_default() += units.min_units() as u64;
        }
    }
    demand.iter().all(|(r, &need)| need <= remaining.get(r).copied().unwrap_or(0))
}
