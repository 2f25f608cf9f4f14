//! Simulated resource managers behind one interface.
//!
//! The scheduler only sees [`ResourceManager`]: it probes placements at
//! minimum units, asks for a DP operator describing what is left, and the
//! simulator then acquires and releases concrete placements.

mod basic;
mod cpu;
mod gpu;

pub use basic::{basic_acquire, BasicManager, BasicOutcome, QuotaMode, QuotaState};
pub use cpu::{cpu_allocate_cores, cpu_place_trajectory, CpuManager, CpuNodeState};
pub use gpu::{GpuManager, DEFAULT_RESTORE_FRACTION};

use serde::Serialize;
use thiserror::Error;

use crate::dp::DpOperator;
use crate::gpu::{Chunk, GpuError};
use crate::model::{Action, ActionId, ClusterSpec, SimTime, Topology, TrajectoryId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManagerError {
    #[error("not enough free {resource} for {units} units")]
    Unavailable { resource: String, units: u32 },
    #[error("trajectory {0} cannot be placed on any node")]
    TrajectoryUnplaceable(TrajectoryId),
    #[error("trajectory {trajectory} lives on node {home}, not {requested}")]
    WrongNode { trajectory: TrajectoryId, home: usize, requested: usize },
    #[error("placement released twice or never acquired")]
    DoubleRelease,
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("placement does not belong to this manager")]
    ForeignPlacement,
    #[error(transparent)]
    Gpu(#[from] GpuError),
}

/// Concrete resources held by one running action.
#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    Units { units: u32 },
    Cpu { node: usize, cores: Vec<u32> },
    Gpu { chunk: Chunk, owner: ActionId },
}

impl Placement {
    pub fn units(&self) -> u32 {
        match self {
            Placement::Units { units } => *units,
            Placement::Cpu { cores, .. } => cores.len() as u32,
            Placement::Gpu { chunk, .. } => chunk.size() as u32,
        }
    }
}

/// Side effects worth logging.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManagerEvent {
    Evict { node: usize, start: u8, end: u8, service: String },
    Restore { node: usize, start: u8, end: u8, service: String, cost: f64 },
    PlaceTrajectory { trajectory: TrajectoryId, node: usize, memory_mb: u64 },
    ReleaseTrajectory { trajectory: TrajectoryId, node: usize, memory_mb: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    pub placement: Placement,
    /// Setup cost paid before execution starts, seconds.
    pub overhead: f64,
    pub events: Vec<ManagerEvent>,
}

/// Tentative placement of a growing list of demands.
pub trait PlacementProbe {
    /// Adds one demand; returns the partition it lands in, or `None` (and
    /// leaves the probe unchanged) when it does not fit.
    fn try_add(&mut self, action: &Action, units: u32) -> Option<usize>;
}

pub trait ResourceManager: Send {
    fn name(&self) -> &str;

    fn probe(&self, now: SimTime) -> Box<dyn PlacementProbe + '_>;

    /// Topology-aware check that every demand fits at once.
    fn accommodate(&self, demands: &[(&Action, u32)], now: SimTime) -> bool {
        let mut probe = self.probe(now);
        demands.iter().all(|(a, u)| probe.try_add(a, *u).is_some())
    }

    /// Independent sub-pools the scheduler allocates separately.
    fn partitions(&self) -> usize {
        1
    }

    /// Partition an action would most likely land in.
    fn home_partition(&self, _action: &Action) -> usize {
        0
    }

    /// DP operator over what is left in `partition` after holding back
    /// `reserved` unit requests.
    fn operator(&self, partition: usize, reserved: &[u32], max_tasks: usize, now: SimTime) -> Box<dyn DpOperator>;

    fn acquire(&mut self, action: &Action, units: u32, partition: usize, now: SimTime) -> Result<Grant, ManagerError>;

    fn release(&mut self, placement: &Placement, now: SimTime) -> Result<(), ManagerError>;

    /// Free units across all partitions.
    fn remaining(&self, now: SimTime) -> u64;

    /// Drops per-trajectory state such as memory reservations.
    fn trajectory_finished(&mut self, _trajectory: TrajectoryId) -> Vec<ManagerEvent> {
        vec![]
    }

    /// Time at which capacity frees up without any release (quota windows).
    fn next_wake(&self, _now: SimTime) -> Option<SimTime> {
        None
    }
}

/// One manager per resource type, in cluster order.
pub fn build_managers(spec: &ClusterSpec) -> Vec<Box<dyn ResourceManager>> {
    spec.resources
        .iter()
        .map(|r| -> Box<dyn ResourceManager> {
            match &r.topology {
                Topology::Pool { capacity } => Box::new(BasicManager::concurrency(&r.name, *capacity)),
                Topology::Concurrency { limit } => Box::new(BasicManager::concurrency(&r.name, *limit)),
                Topology::Quota { limit, window } => {
                    Box::new(BasicManager::quota(&r.name, *limit, SimTime::from_secs(*window)))
                }
                Topology::Cpu { nodes, overhead } => Box::new(CpuManager::new(&r.name, nodes, *overhead)),
                Topology::Gpu { nodes, services } => Box::new(GpuManager::new(&r.name, *nodes as usize, services)),
            }
        })
        .collect()
}
