//! The discrete-event loop.
//!
//! Events sit in one priority queue keyed by `(time, sequence)`. All events
//! sharing a timestamp are applied first, then the policy dispatches once.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::managers::{build_managers, ManagerEvent, Placement, ResourceManager};
use crate::model::{
    Action, ActionId, ClusterSpec, ElasticityProfile, ResourceTypeId, SimTime, Topology, TrajectoryId, UnitSpec,
};
use crate::scheduler::{DurationHistory, InFlight, Scheduler, SchedulerView, WaitingQueue, DEFAULT_DEPTH};

use super::metrics::SimRecord;
use super::trace::{plan, ActSpec, PlannedSegment, PlannedTrajectory, TraceError, TrajectorySpec};

pub const DEFAULT_TIMEOUT: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Per-action elastic allocation with greedy eviction.
    Elastic,
    /// Each trajectory holds its minimum CPU/pool resources from start to end.
    TrajectoryStatic,
    /// Every scalable action runs at this many units (snapped to its allowed set).
    FixedDop(u32),
    /// Each GPU service owns this many always-warm GPUs.
    Dedicated(u32),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Elastic => write!(f, "elastic"),
            Policy::TrajectoryStatic => write!(f, "trajectory-static"),
            Policy::FixedDop(n) => write!(f, "fixed-dop:{n}"),
            Policy::Dedicated(n) => write!(f, "dedicated:{n}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown policy {0:?} (want elastic, trajectory-static, fixed-dop:N or dedicated:N)")]
pub struct PolicyParseError(String);

impl FromStr for Policy {
    type Err = PolicyParseError;
    fn from_str(s: &str) -> Result<Policy, PolicyParseError> {
        let err = || PolicyParseError(s.to_string());
        let num = |v: &str| v.parse::<u32>().ok().filter(|n| *n > 0).ok_or_else(err);
        match s.split_once(':') {
            None if s == "elastic" => Ok(Policy::Elastic),
            None if s == "trajectory-static" => Ok(Policy::TrajectoryStatic),
            Some(("fixed-dop", n)) => Ok(Policy::FixedDop(num(n)?)),
            Some(("dedicated", n)) => Ok(Policy::Dedicated(num(n)?)),
            _ => Err(err()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub policy: Policy,
    pub depth: usize,
    /// Seconds an action may wait before it is recorded as failed.
    pub timeout: f64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig { policy: Policy::Elastic, depth: DEFAULT_DEPTH, timeout: DEFAULT_TIMEOUT }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid cluster: {0}")]
    Cluster(String),
    #[error("depth must be at least 1")]
    Depth,
    #[error("timeout must be positive")]
    Timeout,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Decision {
        t: SimTime,
        candidates: usize,
        selected: Vec<(ActionId, u32)>,
        evictions: usize,
        queued: usize,
    },
    Acquire {
        t: SimTime,
        action: ActionId,
        resource: String,
        units: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cores: Option<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gpus: Option<(u8, u8)>,
        overhead: f64,
    },
    Release {
        t: SimTime,
        action: ActionId,
        resource: String,
        units: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cores: Option<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gpus: Option<(u8, u8)>,
    },
    Reserve {
        t: SimTime,
        trajectory: TrajectoryId,
        resource: String,
        units: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cores: Option<Vec<u32>>,
    },
    Unreserve {
        t: SimTime,
        trajectory: TrajectoryId,
        resource: String,
        units: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cores: Option<Vec<u32>>,
    },
    Place {
        t: SimTime,
        trajectory: TrajectoryId,
        resource: String,
        node: usize,
        memory_mb: u64,
    },
    Unplace {
        t: SimTime,
        trajectory: TrajectoryId,
        resource: String,
        node: usize,
        memory_mb: u64,
    },
    Evict {
        t: SimTime,
        resource: String,
        node: usize,
        start: u8,
        end: u8,
        service: String,
    },
    Restore {
        t: SimTime,
        resource: String,
        node: usize,
        start: u8,
        end: u8,
        service: String,
        cost: f64,
    },
    Timeout {
        t: SimTime,
        action: ActionId,
    },
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Sorted by action id.
    pub records: Vec<SimRecord>,
    pub log: Vec<LogEntry>,
    pub trajectory_starts: BTreeMap<TrajectoryId, SimTime>,
}

impl SimOutput {
    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.log {
            s.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Advance(usize),
    Complete(ActionId),
    Timeout(ActionId),
    Wake,
}

struct Waiting {
    traj: usize,
    spec: ActSpec,
}

struct Running {
    traj: usize,
    action: Action,
    held: Vec<(ResourceTypeId, Placement)>,
    record: SimRecord,
    dedicated: Option<(String, u32)>,
}

struct TrajState {
    cursor: usize,
    /// Resources held for the trajectory's lifetime (static policy).
    pod: Vec<(ResourceTypeId, Placement)>,
    pod_units: BTreeMap<ResourceTypeId, u32>,
    pod_granted: bool,
}

struct Engine<'a> {
    cluster: &'a ClusterSpec,
    cfg: &'a SimConfig,
    names: Vec<String>,
    managers: Vec<Box<dyn ResourceManager>>,
    trajs: Vec<PlannedTrajectory>,
    tstate: Vec<TrajState>,
    events: BinaryHeap<Reverse<(SimTime, u64, Ev)>>,
    seq: u64,
    wakes: BTreeSet<SimTime>,
    queue: WaitingQueue,
    waiting: BTreeMap<ActionId, Waiting>,
    running: BTreeMap<ActionId, Running>,
    in_flight: InFlight,
    history: DurationHistory,
    scheduler: Scheduler,
    /// Static policy: trajectories waiting for their reservation, FCFS.
    pod_queue: Vec<usize>,
    /// Dedicated policy: free replicas per (service, dop).
    replicas: BTreeMap<(String, u32), u32>,
    records: Vec<SimRecord>,
    log: Vec<LogEntry>,
    dirty: bool,
}

/// Replays `trace` on `cluster` under `cfg.policy`.
pub fn run(trace: &[TrajectorySpec], cluster: &ClusterSpec, cfg: &SimConfig) -> Result<SimOutput, SimError> {
    let issues = cluster.validate();
    if !issues.is_empty() {
        return Err(SimError::Cluster(issues.join("; ")));
    }
    if cfg.depth == 0 {
        return Err(SimError::Depth);
    }
    if !(cfg.timeout > 0.0 && cfg.timeout.is_finite()) {
        return Err(SimError::Timeout);
    }
    let trajs = plan(trace, cluster)?;
    let mut engine = Engine::new(cluster, cfg, trajs);
    engine.run();
    let trajectory_starts = engine.trajs.iter().map(|t| (t.id, t.start)).collect();
    let mut records = engine.records;
    records.sort_by_key(|r| r.action_id);
    Ok(SimOutput { records, log: engine.log, trajectory_starts })
}

/// Node, pinned cores and GPU device range of a placement, where present.
type Detail = (Option<usize>, Option<Vec<u32>>, Option<(u8, u8)>);

fn placement_detail(p: &Placement) -> Detail {
    match p {
        Placement::Units { .. } => (None, None, None),
        Placement::Cpu { node, cores } => (Some(*node), Some(cores.clone()), None),
        Placement::Gpu { chunk, .. } => (Some(chunk.node), None, Some((chunk.start, chunk.end()))),
    }
}

impl<'a> Engine<'a> {
    fn new(cluster: &'a ClusterSpec, cfg: &'a SimConfig, trajs: Vec<PlannedTrajectory>) -> Engine<'a> {
        let mut replicas = BTreeMap::new();
        if let Policy::Dedicated(per_service) = cfg.policy {
            for r in &cluster.resources {
                if let Topology::Gpu { services, .. } = &r.topology {
                    for s in services {
                        for &d in &s.dops {
                            replicas.insert((s.name.clone(), d), (per_service / d).max(1));
                        }
                    }
                }
            }
        }
        let tstate = trajs
            .iter()
            .map(|_| TrajState {
                cursor: 0,
                pod: vec![],
                pod_units: BTreeMap::new(),
                pod_granted: cfg.policy != Policy::TrajectoryStatic,
            })
            .collect();
        Engine {
            cluster,
            cfg,
            names: cluster.resources.iter().map(|r| r.name.clone()).collect(),
            managers: build_managers(cluster),
            trajs,
            tstate,
            events: BinaryHeap::new(),
            seq: 0,
            wakes: BTreeSet::new(),
            queue: WaitingQueue::new(),
            waiting: BTreeMap::new(),
            running: BTreeMap::new(),
            in_flight: InFlight::new(),
            history: DurationHistory::new(),
            scheduler: Scheduler::new(cfg.depth),
            pod_queue: vec![],
            replicas,
            records: vec![],
            log: vec![],
            dirty: false,
        }
    }

    fn push(&mut self, t: SimTime, ev: Ev) {
        self.seq += 1;
        self.events.push(Reverse((t, self.seq, ev)));
    }

    fn run(&mut self) {
        for i in 0..self.trajs.len() {
            let start = self.trajs[i].start;
            self.push(start, Ev::Advance(i));
        }
        while let Some(&Reverse((now, _, _))) = self.events.peek() {
            while let Some(&Reverse((t, _, ev))) = self.events.peek() {
                if t != now {
                    break;
                }
                self.events.pop();
                match ev {
                    Ev::Advance(i) => self.step(i, now),
                    Ev::Complete(a) => self.complete(a, now),
                    Ev::Timeout(a) => self.timeout(a, now),
                    Ev::Wake => {
                        self.wakes.remove(&now);
                        self.dirty = true;
                    }
                }
            }
            if self.dirty {
                self.dirty = false;
                self.dispatch(now);
            }
            if !self.queue.is_empty() {
                let next = self.managers.iter().filter_map(|m| m.next_wake(now)).filter(|t| *t > now).min();
                if let Some(t) = next {
                    if self.wakes.insert(t) {
                        self.push(t, Ev::Wake);
                    }
                }
            }
        }
        debug_assert!(self.queue.is_empty() && self.running.is_empty());
    }

    fn is_pod_resource(&self, r: ResourceTypeId) -> bool {
        matches!(
            self.cluster.resource(r).map(|s| &s.topology),
            Some(Topology::Cpu { .. } | Topology::Pool { .. })
        )
    }

    /// Runs the trajectory forward from its cursor until it blocks.
    fn step(&mut self, i: usize, now: SimTime) {
        if self.tstate[i].cursor == 0 && self.cfg.policy == Policy::TrajectoryStatic {
            self.request_pod(i);
        }
        let cursor = self.tstate[i].cursor;
        match self.trajs[i].segments.get(cursor) {
            Some(PlannedSegment::Think(d)) => {
                let d = *d;
                self.tstate[i].cursor += 1;
                self.push(now + d, Ev::Advance(i));
            }
            Some(PlannedSegment::Act(p)) => {
                let (mut action, spec) = (p.action.clone(), p.spec.clone());
                self.tstate[i].cursor += 1;
                action.submit_time = now;
                self.submit(i, action, spec, now);
            }
            None => self.finish_trajectory(i, now),
        }
    }

    fn request_pod(&mut self, i: usize) {
        let mut units: BTreeMap<ResourceTypeId, u32> = BTreeMap::new();
        for s in &self.trajs[i].segments {
            if let PlannedSegment::Act(p) = s {
                for (r, spec) in p.action.cost.iter() {
                    if self.is_pod_resource(r) {
                        let e = units.entry(r).or_default();
                        *e = (*e).max(spec.min_units());
                    }
                }
            }
        }
        let needs = !units.is_empty();
        self.tstate[i].pod_units = units;
        if needs {
            self.pod_queue.push(i);
            self.dirty = true;
        } else {
            self.tstate[i].pod_granted = true;
        }
    }

    fn scheduler_view(&self, mut action: Action, spec: &ActSpec) -> Action {
        let fixed = match self.cfg.policy {
            Policy::FixedDop(n) if action.is_scalable() => Some(action.key_units().snap_down(n)),
            Policy::Elastic | Policy::FixedDop(_) => None,
            // baselines without elastic allocation run everything at minimum
            Policy::TrajectoryStatic | Policy::Dedicated(_) => Some(action.key_units().min_units()),
        };
        if let Some(u) = fixed {
            let key = action.key_resource();
            action.cost.insert(key, UnitSpec::fixed(u));
            action.elasticity = ElasticityProfile::unknown(key);
            action.base_duration = None;
            if spec.profiled {
                action.est_duration = Some(spec.exec_secs(u));
            }
        }
        action
    }

    fn submit(&mut self, i: usize, action: Action, spec: ActSpec, now: SimTime) {
        let action = self.scheduler_view(action, &spec);
        let id = action.id;
        self.push(now + SimTime::from_secs(self.cfg.timeout), Ev::Timeout(id));
        self.queue.push(action);
        self.waiting.insert(id, Waiting { traj: i, spec });
        self.dirty = true;
    }

    fn dedicated_slot(&self, action: &Action) -> Option<(String, u32)> {
        match self.cfg.policy {
            Policy::Dedicated(_) if self.cluster.is_gpu(action.key_resource()) => {
                action.service_id.clone().map(|s| (s, action.key_units().min_units()))
            }
            _ => None,
        }
    }

    fn dispatch(&mut self, now: SimTime) {
        match self.cfg.policy {
            Policy::Elastic | Policy::FixedDop(_) => self.dispatch_scheduled(now),
            Policy::TrajectoryStatic | Policy::Dedicated(_) => {
                if self.cfg.policy == Policy::TrajectoryStatic {
                    self.grant_pods(now);
                }
                self.dispatch_fcfs(now);
            }
        }
    }

    fn dispatch_scheduled(&mut self, now: SimTime) {
        if self.queue.is_empty() {
            return;
        }
        let view = SchedulerView { now, managers: &self.managers, in_flight: &self.in_flight, history: &self.history };
        let decision = self.scheduler.schedule(self.queue.as_slice(), &view);
        self.log.push(LogEntry::Decision {
            t: now,
            candidates: decision.candidates,
            selected: decision.selected.iter().map(|s| (s.action, s.key_units())).collect(),
            evictions: decision.groups.iter().map(|g| g.evictions()).sum(),
            queued: self.queue.len(),
        });
        let mut selected = decision.selected;
        // larger GPU chunks first so fragments never block a bigger request
        selected.sort_by_key(|s| Reverse(if self.cluster.is_gpu(s.grants[0].resource) { s.key_units() } else { 0 }));
        for sel in selected {
            let action = self.queue.as_slice().iter().find(|a| a.id == sel.action).cloned().expect("selected from queue");
            let grants: Vec<(ResourceTypeId, u32, usize)> =
                sel.grants.iter().map(|g| (g.resource, g.units, g.partition)).collect();
            if let Some(held) = self.acquire_all(&action, &grants, now) {
                self.start(action, held, sel.predicted, None, now);
            }
        }
    }

    /// Acquires every grant or nothing.
    fn acquire_all(
        &mut self,
        action: &Action,
        grants: &[(ResourceTypeId, u32, usize)],
        now: SimTime,
    ) -> Option<Vec<(ResourceTypeId, Placement, f64)>> {
        let mut held = Vec::new();
        for &(r, units, partition) in grants {
            match self.managers[r.0].acquire(action, units, partition, now) {
                Ok(g) => {
                    for ev in &g.events {
                        self.log_manager_event(r, ev, now);
                    }
                    held.push((r, g.placement, g.overhead));
                }
                Err(_) => {
                    for (r, p, _) in held {
                        self.managers[r.0].release(&p, now).expect("undo of a fresh acquire");
                    }
                    return None;
                }
            }
        }
        Some(held)
    }

    fn log_manager_event(&mut self, r: ResourceTypeId, ev: &ManagerEvent, t: SimTime) {
        let resource = self.names[r.0].clone();
        self.log.push(match ev.clone() {
            ManagerEvent::Evict { node, start, end, service } => LogEntry::Evict { t, resource, node, start, end, service },
            ManagerEvent::Restore { node, start, end, service, cost } => {
                LogEntry::Restore { t, resource, node, start, end, service, cost }
            }
            ManagerEvent::PlaceTrajectory { trajectory, node, memory_mb } => {
                LogEntry::Place { t, trajectory, resource, node, memory_mb }
            }
            ManagerEvent::ReleaseTrajectory { trajectory, node, memory_mb } => {
                LogEntry::Unplace { t, trajectory, resource, node, memory_mb }
            }
        });
    }

    /// Static policy: grant reservations strictly in request order.
    fn grant_pods(&mut self, now: SimTime) {
        while let Some(&i) = self.pod_queue.first() {
            let template = self.trajs[i].segments.iter().find_map(|s| match s {
                PlannedSegment::Act(p) => Some(p.action.clone()),
                PlannedSegment::Think(_) => None,
            });
            let Some(template) = template else {
                self.pod_queue.remove(0);
                continue;
            };
            let units: Vec<(ResourceTypeId, u32)> = self.tstate[i].pod_units.iter().map(|(r, u)| (*r, *u)).collect();
            let mut grants = Vec::new();
            for &(r, u) in &units {
                let mut probe = self.managers[r.0].probe(now);
                match probe.try_add(&template, u) {
                    Some(p) => grants.push((r, u, p)),
                    None => return,
                }
            }
            let Some(held) = self.acquire_all(&template, &grants, now) else { return };
            for (r, p, _) in &held {
                let (node, cores, _) = placement_detail(p);
                self.log.push(LogEntry::Reserve {
                    t: now,
                    trajectory: self.trajs[i].id,
                    resource: self.names[r.0].clone(),
                    units: p.units(),
                    node,
                    cores,
                });
            }
            self.tstate[i].pod = held.into_iter().map(|(r, p, _)| (r, p)).collect();
            self.tstate[i].pod_granted = true;
            self.pod_queue.remove(0);
        }
    }

    /// Baselines: strict FCFS per resource at fixed units.
    fn dispatch_fcfs(&mut self, now: SimTime) {
        let mut blocked: BTreeSet<ResourceTypeId> = BTreeSet::new();
        let mut blocked_services: BTreeSet<(String, u32)> = BTreeSet::new();
        let queued: Vec<Action> = self.queue.as_slice().to_vec();
        for action in queued {
            let traj = self.waiting[&action.id].traj;
            if !self.tstate[traj].pod_granted {
                continue;
            }
            let slot = self.dedicated_slot(&action);
            if let Some(s) = &slot {
                if blocked_services.contains(s) || self.replicas.get(s).copied().unwrap_or(0) == 0 {
                    blocked_services.insert(s.clone());
                    continue;
                }
            }
            let mut grants = Vec::new();
            let mut from_pod = Vec::new();
            let mut ok = true;
            for (r, spec) in action.cost.iter() {
                if slot.is_some() && r == action.key_resource() {
                    continue;
                }
                if let Some(&u) = self.tstate[traj].pod_units.get(&r) {
                    from_pod.push((r, u));
                    continue;
                }
                if blocked.contains(&r) {
                    ok = false;
                    break;
                }
                let mut probe = self.managers[r.0].probe(now);
                match probe.try_add(&action, spec.min_units()) {
                    Some(p) => grants.push((r, spec.min_units(), p)),
                    None => {
                        blocked.insert(r);
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let Some(held) = self.acquire_all(&action, &grants, now) else {
                blocked.extend(grants.iter().map(|g| g.0));
                continue;
            };
            if let Some(s) = &slot {
                *self.replicas.get_mut(s).expect("slot exists") -= 1;
            }
            // key units on a reservation are the reservation size, snapped
            let key = action.key_resource();
            let mut action = action;
            if let Some(&(_, u)) = from_pod.iter().find(|(r, _)| *r == key) {
                let snapped = self.waiting_units(&action, u);
                action.cost.insert(key, UnitSpec::fixed(snapped));
            }
            let predicted = self.history.expected(&action);
            self.start(action, held, predicted, slot, now);
        }
    }

    fn waiting_units(&self, action: &Action, reserved: u32) -> u32 {
        let spec = &self.waiting[&action.id].spec;
        let allowed: Vec<u32> = spec.cost.get(&spec.key).map(|u| u.units.clone()).unwrap_or_default();
        UnitSpec::new(allowed).map_or(reserved, |u| u.snap_down(reserved))
    }

    fn start(
        &mut self,
        action: Action,
        held: Vec<(ResourceTypeId, Placement, f64)>,
        predicted: f64,
        dedicated: Option<(String, u32)>,
        now: SimTime,
    ) {
        let w = self.waiting.remove(&action.id).expect("started action was waiting");
        self.queue.remove(action.id);
        let key = action.key_resource();
        let key_units = held
            .iter()
            .find(|(r, _, _)| *r == key)
            .map(|(_, p, _)| p.units())
            .or(dedicated.as_ref().map(|d| d.1))
            .unwrap_or_else(|| action.key_units().min_units());
        let overhead_secs: f64 = held.iter().map(|(_, _, o)| *o).sum();
        let overhead = SimTime::from_secs(overhead_secs);
        let exec = SimTime::from_secs(w.spec.exec_secs(key_units));
        let end = now + overhead + exec;
        for (r, p, o) in &held {
            let (node, cores, gpus) = placement_detail(p);
            self.log.push(LogEntry::Acquire {
                t: now,
                action: action.id,
                resource: self.names[r.0].clone(),
                units: p.units(),
                node,
                cores,
                gpus,
                overhead: *o,
            });
        }
        let partition = match held.iter().find(|(r, _, _)| *r == key).map(|(_, p, _)| p) {
            Some(Placement::Cpu { node, .. }) => *node,
            _ => 0,
        };
        self.in_flight.insert(action.id, key, partition, now + overhead + SimTime::from_secs(predicted.max(0.0)));
        let record = SimRecord {
            action_id: action.id,
            trajectory_id: action.trajectory_id,
            policy: self.cfg.policy.to_string(),
            submit: action.submit_time,
            start: now,
            end,
            queue: now - action.submit_time,
            exec,
            overhead,
            units: key_units,
            timed_out: false,
        };
        self.push(end, Ev::Complete(action.id));
        let held = held.into_iter().map(|(r, p, _)| (r, p)).collect();
        self.running.insert(action.id, Running { traj: w.traj, action, held, record, dedicated });
    }

    fn complete(&mut self, id: ActionId, now: SimTime) {
        let run = self.running.remove(&id).expect("completion of a running action");
        for (r, p) in &run.held {
            self.managers[r.0].release(p, now).expect("release of a held placement");
            let (node, cores, gpus) = placement_detail(p);
            self.log.push(LogEntry::Release {
                t: now,
                action: id,
                resource: self.names[r.0].clone(),
                units: p.units(),
                node,
                cores,
                gpus,
            });
        }
        if let Some(slot) = &run.dedicated {
            *self.replicas.get_mut(slot).expect("slot exists") += 1;
        }
        self.in_flight.remove(id);
        if !run.action.is_scalable() {
            self.history.record(&run.action, run.record.exec.as_secs());
        }
        self.records.push(run.record);
        self.dirty = true;
        self.step(run.traj, now);
    }

    fn timeout(&mut self, id: ActionId, now: SimTime) {
        let Some(w) = self.waiting.remove(&id) else { return };
        let action = self.queue.remove(id).expect("waiting actions are queued");
        self.log.push(LogEntry::Timeout { t: now, action: id });
        self.records.push(SimRecord {
            action_id: id,
            trajectory_id: action.trajectory_id,
            policy: self.cfg.policy.to_string(),
            submit: action.submit_time,
            start: now,
            end: now,
            queue: now - action.submit_time,
            exec: SimTime::ZERO,
            overhead: SimTime::ZERO,
            units: 0,
            timed_out: true,
        });
        self.dirty = true;
        self.step(w.traj, now);
    }

    fn finish_trajectory(&mut self, i: usize, now: SimTime) {
        let tid = self.trajs[i].id;
        self.pod_queue.retain(|&j| j != i);
        let pod = std::mem::take(&mut self.tstate[i].pod);
        for (r, p) in pod {
            self.managers[r.0].release(&p, now).expect("release of a reservation");
            let (node, cores, _) = placement_detail(&p);
            self.log.push(LogEntry::Unreserve {
                t: now,
                trajectory: tid,
                resource: self.names[r.0].clone(),
                units: p.units(),
                node,
                cores,
            });
        }
        for r in 0..self.managers.len() {
            for ev in self.managers[r].trajectory_finished(tid) {
                self.log_manager_event(ResourceTypeId(r), &ev, now);
            }
        }
        self.dirty = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CpuNodeSpec, ResourceSpec};
    use crate::sim::trace::{Segment, UnitsField};

    fn cpu_cluster(cores: u32) -> ClusterSpec {
        ClusterSpec {
            resources: vec![ResourceSpec {
                name: "cpu".into(),
                topology: Topology::Cpu { nodes: vec![CpuNodeSpec { numa: vec![cores], memory_mb: 1024 }], overhead: 0.0 },
            }],
        }
    }

    fn act(dur: f64) -> Segment {
        Segment::Act(ActSpec {
            cost: [("cpu".to_string(), UnitsField { units: vec![1] })].into_iter().collect(),
            key: "cpu".into(),
            elasticity: BTreeMap::new(),
            base_dur: dur,
            profiled: true,
            est_dur: None,
            service: None,
            node: None,
        })
    }

    fn one_trajectory() -> Vec<TrajectorySpec> {
        vec![TrajectorySpec {
            id: 0,
            start: 0.0,
            memory_mb: 0,
            segments: vec![Segment::Think { dur: 5.0 }, act(3.0), Segment::Think { dur: 2.0 }, act(1.0)],
        }]
    }

    #[test]
    fn idle_cluster_timeline() {
        for policy in [Policy::Elastic, Policy::TrajectoryStatic] {
            let cfg = SimConfig { policy, ..Default::default() };
            let out = run(&one_trajectory(), &cpu_cluster(1), &cfg).unwrap();
            let acts: Vec<f64> = out.records.iter().map(|r| r.act().as_secs()).collect();
            assert_eq!(acts, vec![3.0, 1.0], "{policy}");
            assert!(out.records.iter().all(|r| r.queue == SimTime::ZERO && r.overhead == SimTime::ZERO));
            assert_eq!(out.records.last().unwrap().end, SimTime::from_secs(11.0));
        }
    }

    #[test]
    fn deterministic_log() {
        let cfg = SimConfig::default();
        let a = run(&one_trajectory(), &cpu_cluster(2), &cfg).unwrap();
        let b = run(&one_trajectory(), &cpu_cluster(2), &cfg).unwrap();
        assert_eq!(a.log_jsonl(), b.log_jsonl());
    }

    #[test]
    fn policy_names_roundtrip() {
        for p in [Policy::Elastic, Policy::TrajectoryStatic, Policy::FixedDop(4), Policy::Dedicated(8)] {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
        assert!("fixed-dop:0".parse::<Policy>().is_err());
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn unplaceable_action_times_out() {
        let mut t = one_trajectory();
        t[0].memory_mb = 4096;
        let cfg = SimConfig { timeout: 30.0, ..Default::default() };
        let out = run(&t, &cpu_cluster(1), &cfg).unwrap();
        assert!(out.records.iter().all(|r| r.timed_out));
        assert_eq!(out.records[0].queue, SimTime::from_secs(30.0));
    }
}
