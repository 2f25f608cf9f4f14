//! FCFS elastic scheduling with greedy eviction.
//!
//! Each invocation takes the longest FCFS prefix of the waiting queue that
//! every manager can host at minimum units, groups it by key resource (and
//! partition), and for each group evicts actions from the tail while the
//! approximated total completion time keeps improving. Survivors get their
//! units from [`dp_arrange`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::Serialize;

use crate::dp::{dp_arrange, DpError, DpOperator, DpTask};
use crate::managers::{PlacementProbe, ResourceManager};
use crate::model::{Action, ActionId, ResourceTypeId, SimTime};

pub const DEFAULT_DEPTH: usize = 2;

/// Waiting actions ordered by `(submit_time, id)`.
#[derive(Debug, Clone, Default)]
pub struct WaitingQueue {
    actions: Vec<Action>,
    ids: HashSet<ActionId>,
}

impl WaitingQueue {
    pub fn new() -> WaitingQueue {
        WaitingQueue::default()
    }

    /// Inserts in FCFS position. Returns `false` for a duplicate id.
    pub fn push(&mut self, action: Action) -> bool {
        if !self.ids.insert(action.id) {
            return false;
        }
        let pos = self.actions.partition_point(|a| a.fcfs_key() < action.fcfs_key());
        self.actions.insert(pos, action);
        true
    }

    pub fn remove(&mut self, id: ActionId) -> Option<Action> {
        if !self.ids.remove(&id) {
            return None;
        }
        let pos = self.actions.iter().position(|a| a.id == id)?;
        Some(self.actions.remove(pos))
    }

    pub fn as_slice(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn front(&self) -> Option<&Action> {
        self.actions.first()
    }
}

impl FromIterator<Action> for WaitingQueue {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> WaitingQueue {
        let mut q = WaitingQueue::new();
        for a in iter {
            q.push(a);
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Finish(f64);

impl Eq for Finish {}

impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Finish {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Min-heap of predicted finish times, in seconds from now.
#[derive(Debug, Clone, Default)]
pub struct CompletionHeap {
    heap: BinaryHeap<Reverse<Finish>>,
}

impl CompletionHeap {
    pub fn new() -> CompletionHeap {
        CompletionHeap::default()
    }

    pub fn push(&mut self, t: f64) {
        self.heap.push(Reverse(Finish(t)));
    }

    /// Earliest finish; an empty heap means capacity is free right now.
    pub fn pop(&mut self) -> f64 {
        self.heap.pop().map_or(0.0, |Reverse(Finish(t))| t)
    }

    pub fn peek(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(Finish(t))| *t)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

impl FromIterator<f64> for CompletionHeap {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> CompletionHeap {
        CompletionHeap { heap: iter.into_iter().map(|t| Reverse(Finish(t))).collect() }
    }
}

/// Running mean of observed durations, keyed by service or resource type.
#[derive(Debug, Clone, Default)]
pub struct DurationHistory {
    sums: HashMap<String, (f64, u64)>,
}

impl DurationHistory {
    pub fn new() -> DurationHistory {
        DurationHistory::default()
    }

    fn key(action: &Action) -> String {
        match &action.service_id {
            Some(s) => format!("svc:{s}"),
            None => format!("res:{}", action.key_resource().0),
        }
    }

    pub fn record(&mut self, action: &Action, seconds: f64) {
        let e = self.sums.entry(Self::key(action)).or_insert((0.0, 0));
        e.0 += seconds;
        e.1 += 1;
    }

    pub fn mean(&self, action: &Action) -> Option<f64> {
        self.sums.get(&Self::key(action)).map(|(s, n)| s / *n as f64)
    }

    /// Best guess at an action's duration at its minimum units: the profile
    /// when one exists, then history, then the trace hint, then one second.
    pub fn expected(&self, action: &Action) -> f64 {
        action
            .duration_at(action.key_units().min_units())
            .or_else(|| self.mean(action))
            .or(action.est_duration)
            .unwrap_or(1.0)
    }
}

/// Predicted finish times of running actions, per key resource partition.
#[derive(Debug, Clone, Default)]
pub struct InFlight {
    entries: BTreeMap<ActionId, (ResourceTypeId, usize, SimTime)>,
}

impl InFlight {
    pub fn new() -> InFlight {
        InFlight::default()
    }

    pub fn insert(&mut self, action: ActionId, resource: ResourceTypeId, partition: usize, finish: SimTime) {
        self.entries.insert(action, (resource, partition, finish));
    }

    pub fn remove(&mut self, action: ActionId) {
        self.entries.remove(&action);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Seconds until each running action on `(resource, partition)` ends.
    pub fn remaining(&self, resource: ResourceTypeId, partition: usize, now: SimTime) -> Vec<f64> {
        self.entries
            .values()
            .filter(|(r, p, _)| *r == resource && *p == partition)
            .map(|(_, _, t)| t.saturating_sub(now).as_secs())
            .collect()
    }
}

/// Everything the scheduler reads about the cluster, as of one instant.
pub struct SchedulerView<'a> {
    pub now: SimTime,
    /// One manager per resource type, indexed by `ResourceTypeId`.
    pub managers: &'a [Box<dyn ResourceManager>],
    pub in_flight: &'a InFlight,
    pub history: &'a DurationHistory,
}

/// Units and partition granted on one resource type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnitGrant {
    pub resource: ResourceTypeId,
    pub units: u32,
    pub partition: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub action: ActionId,
    /// Key resource first, then the rest in resource order.
    pub grants: Vec<UnitGrant>,
    /// Predicted execution time at the granted units, seconds.
    pub predicted: f64,
}

impl Selection {
    pub fn key_units(&self) -> u32 {
        self.grants[0].units
    }
}

/// What happened inside one key-resource group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTrace {
    pub resource: ResourceTypeId,
    pub partition: usize,
    pub members: Vec<ActionId>,
    /// Objective of each prefix tried, longest first. `None` when the DP
    /// found the prefix infeasible.
    pub objectives: Vec<Option<f64>>,
    pub selected: usize,
    pub scalable: bool,
}

impl GroupTrace {
    pub fn evictions(&self) -> usize {
        self.members.len() - self.selected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScheduleDecision {
    pub selected: Vec<Selection>,
    pub deferred: Vec<ActionId>,
    pub candidates: usize,
    pub groups: Vec<GroupTrace>,
}

impl ScheduleDecision {
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Minimum-unit duration used for actions that are only estimated.
fn min_duration(action: &Action, history: &DurationHistory) -> f64 {
    if action.is_scalable() {
        let units = action.schedulable_units();
        action.duration_at(units[0]).unwrap_or_else(|| history.expected(action))
    } else {
        history.expected(action)
    }
}

/// Duration at the `d`-th smallest allowed unit (1-based), clamped to the
/// largest one.
fn duration_at_rank(action: &Action, d: usize, history: &DurationHistory) -> f64 {
    if !action.is_scalable() {
        return history.expected(action);
    }
    let units = action.schedulable_units();
    let m = units[(d.max(1) - 1).min(units.len() - 1)];
    action.duration_at(m).unwrap_or_else(|| history.expected(action))
}

/// Approximate summed completion time of `actions` once they queue behind
/// `heap`. The first action tries each of its `depth` smallest allocations;
/// the others run at minimum units on whichever slot frees first.
pub fn estimate(heap: &CompletionHeap, actions: &[&Action], depth: usize, history: &DurationHistory) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for d in 1..=depth.max(1) {
        let mut work = heap.clone();
        let mut total = 0.0;
        for (i, a) in actions.iter().enumerate() {
            let ts = work.pop();
            let dur = if i == 0 { duration_at_rank(a, d, history) } else { min_duration(a, history) };
            total += ts + dur;
            work.push(ts + dur);
        }
        best = best.min(total);
    }
    best
}

fn dp_task(action: &Action, history: &DurationHistory) -> DpTask {
    if action.is_scalable() {
        let units = action.schedulable_units();
        DpTask::from_fn(&units, |m| action.duration_at(m).expect("schedulable units have a profile entry"))
    } else {
        DpTask::new(vec![action.key_units().min_units()], vec![history.expected(action)])
    }
}

/// Exact DP cost of `candidates` plus the estimated cost of `rest` queued
/// behind them and behind what is already running (`running`, seconds left).
pub fn approx_objective(
    candidates: &[&Action],
    op: &dyn DpOperator,
    running: &[f64],
    rest: &[&Action],
    depth: usize,
    history: &DurationHistory,
) -> Result<(f64, Vec<u32>, Vec<f64>), DpError> {
    if candidates.is_empty() {
        return Ok((0.0, vec![], vec![]));
    }
    let tasks: Vec<DpTask> = candidates.iter().map(|a| dp_task(a, history)).collect();
    let result = dp_arrange(&tasks, op)?;
    let mut heap: CompletionHeap = running.iter().copied().collect();
    for &d in &result.per_task_durations {
        heap.push(d);
    }
    let approx = estimate(&heap, rest, depth, history);
    Ok((result.total_duration + approx, result.allocations, result.per_task_durations))
}

struct Candidate<'q> {
    action: &'q Action,
    /// Partition per resource in the action's cost vector.
    partitions: BTreeMap<ResourceTypeId, usize>,
}

impl Candidate<'_> {
    fn group(&self) -> (ResourceTypeId, usize) {
        let r = self.action.key_resource();
        (r, self.partitions[&r])
    }
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    pub depth: usize,
}

impl Default for Scheduler {
    fn default() -> Scheduler {
        Scheduler { depth: DEFAULT_DEPTH }
    }
}

impl Scheduler {
    pub fn new(depth: usize) -> Scheduler {
        assert!(depth >= 1, "depth must be at least 1");
        Scheduler { depth }
    }

    /// Longest FCFS prefix that every manager can host at minimum units.
    fn candidates<'q>(&self, queue: &'q [Action], view: &SchedulerView) -> Vec<Candidate<'q>> {
        let mut probes: Vec<Box<dyn PlacementProbe + '_>> = view.managers.iter().map(|m| m.probe(view.now)).collect();
        let mut out = Vec::new();
        for action in queue {
            let mut partitions = BTreeMap::new();
            for (r, spec) in action.cost.iter() {
                let Some(probe) = probes.get_mut(r.0) else { return out };
                match probe.try_add(action, spec.min_units()) {
                    Some(p) => {
                        partitions.insert(r, p);
                    }
                    None => return out,
                }
            }
            out.push(Candidate { action, partitions });
        }
        out
    }

    pub fn schedule(&self, queue: &[Action], view: &SchedulerView) -> ScheduleDecision {
        let cands = self.candidates(queue, view);
        let mut decision = ScheduleDecision { candidates: cands.len(), ..Default::default() };
        if cands.is_empty() {
            decision.deferred = queue.iter().map(|a| a.id).collect();
            return decision;
        }

        // groups in order of first appearance
        let mut order: Vec<(ResourceTypeId, usize)> = Vec::new();
        let mut members: BTreeMap<(ResourceTypeId, usize), Vec<usize>> = BTreeMap::new();
        for (i, c) in cands.iter().enumerate() {
            let g = c.group();
            if !members.contains_key(&g) {
                order.push(g);
            }
            members.entry(g).or_default().push(i);
        }

        // where each non-candidate would most likely run
        let home: Vec<(ResourceTypeId, usize)> = queue[cands.len()..]
            .iter()
            .map(|a| {
                let r = a.key_resource();
                let p = view.managers.get(r.0).map_or(0, |m| m.home_partition(a));
                (r, p)
            })
            .collect();

        let mut chosen: BTreeMap<usize, (u32, f64)> = BTreeMap::new();
        for g in order {
            let idx = &members[&g];
            let group: Vec<&Action> = idx.iter().map(|&i| cands[i].action).collect();
            let ids: Vec<ActionId> = group.iter().map(|a| a.id).collect();

            if !group.iter().any(|a| a.is_scalable()) {
                for (&i, a) in idx.iter().zip(&group) {
                    chosen.insert(i, (a.key_units().min_units(), view.history.expected(a)));
                }
                decision.groups.push(GroupTrace {
                    resource: g.0,
                    partition: g.1,
                    members: ids,
                    objectives: vec![],
                    selected: idx.len(),
                    scalable: false,
                });
                continue;
            }

            let (r, p) = g;
            let reserved: Vec<u32> = cands
                .iter()
                .filter(|c| c.group() != g && c.partitions.get(&r) == Some(&p))
                .map(|c| c.action.cost.min_units(r))
                .collect();
            let running = view.in_flight.remaining(r, p, view.now);
            let manager = &view.managers[r.0];
            let op = manager.operator(p, &reserved, group.len(), view.now);

            let objective = |len: usize| {
                let mut rest: Vec<&Action> = idx[len..].iter().map(|&i| cands[i].action).collect();
                rest.extend(queue[cands.len()..].iter().zip(&home).filter(|(_, h)| **h == g).map(|(a, _)| a));
                approx_objective(&group[..len], op.as_ref(), &running, &rest, self.depth, view.history).ok()
            };

            let mut objectives = Vec::new();
            // start from the longest prefix the DP can actually host
            let mut len = group.len();
            let mut best = loop {
                let o = objective(len);
                objectives.push(o.as_ref().map(|x| x.0));
                match o {
                    Some(o) => break Some(o),
                    None if len > 1 => len -= 1,
                    None => break None,
                }
            };
            if let Some(cur) = &best {
                let mut best_obj = cur.0;
                while len > 1 {
                    let next = objective(len - 1);
                    objectives.push(next.as_ref().map(|x| x.0));
                    match next {
                        Some(o) if o.0 < best_obj => {
                            best_obj = o.0;
                            best = Some(o);
                            len -= 1;
                        }
                        _ => break,
                    }
                }
            }
            let selected = if let Some((_, allocs, durs)) = best {
                for (k, &i) in idx[..len].iter().enumerate() {
                    chosen.insert(i, (allocs[k], durs[k]));
                }
                len
            } else {
                0
            };
            decision.groups.push(GroupTrace {
                resource: r,
                partition: p,
                members: ids,
                objectives,
                selected,
                scalable: true,
            });
        }

        for (i, c) in cands.iter().enumerate() {
            let Some(&(units, predicted)) = chosen.get(&i) else {
                decision.deferred.push(c.action.id);
                continue;
            };
            let key = c.action.key_resource();
            let mut grants = vec![UnitGrant { resource: key, units, partition: c.partitions[&key] }];
            for (r, spec) in c.action.cost.iter() {
                if r != key {
                    grants.push(UnitGrant { resource: r, units: spec.min_units(), partition: c.partitions[&r] });
                }
            }
            decision.selected.push(Selection { action: c.action.id, grants, predicted });
        }
        decision.deferred.extend(queue[cands.len()..].iter().map(|a| a.id));
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::managers::BasicManager;
    use crate::model::{ElasticityProfile, UnitSpec};

    const CPU: ResourceTypeId = ResourceTypeId(0);

    fn elastic(id: ActionId, base: f64, units: &[u32]) -> Action {
        let mut a = Action::new(id, id, CPU, UnitSpec::new(units.to_vec()).unwrap());
        a.elasticity = ElasticityProfile::linear(CPU, units);
        a.base_duration = Some(base);
        a
    }

    fn pool(cap: u32) -> Vec<Box<dyn ResourceManager>> {
        vec![Box::new(BasicManager::concurrency("cpu", cap))]
    }

    #[test]
    fn estimate_examples() {
        let h = DurationHistory::new();
        let heap: CompletionHeap = [0.0].into_iter().collect();
        let mut a = Action::new(1, 1, CPU, UnitSpec::fixed(1));
        a.est_duration = Some(4.0);
        assert_eq!(estimate(&heap, &[&a], 1, &h), 4.0);

        let heap: CompletionHeap = [2.0].into_iter().collect();
        let a2 = elastic(2, 8.0, &[1, 2]);
        let a3 = elastic(3, 8.0, &[1]);
        assert_eq!(estimate(&heap, &[&a2, &a3], 2, &h), 20.0);

        let heap: CompletionHeap = [1.0, 3.0].into_iter().collect();
        assert_eq!(estimate(&heap, &[], 2, &h), 0.0);
    }

    #[test]
    fn approx_objective_examples() {
        let h = DurationHistory::new();
        let op = crate::dp::BasicOperator::new(4);
        let a1 = elastic(1, 8.0, &[1, 2, 3, 4]);
        let a2 = elastic(2, 8.0, &[1, 2, 3, 4]);
        assert_eq!(approx_objective(&[&a1], &op, &[], &[&a2], 2, &h).unwrap().0, 8.0);
        assert_eq!(approx_objective(&[&a1], &op, &[], &[], 2, &h).unwrap().0, 2.0);
        assert_eq!(approx_objective(&[], &op, &[], &[&a2], 2, &h).unwrap().0, 0.0);
    }

    #[test]
    fn evicts_third_action() {
        let queue: Vec<Action> = (1..=3).map(|i| elastic(i, 8.0, &[1, 2, 3, 4])).collect();
        let managers = pool(4);
        let (inf, hist) = (InFlight::new(), DurationHistory::new());
        let view = SchedulerView { now: SimTime::ZERO, managers: &managers, in_flight: &inf, history: &hist };
        let d = Scheduler::new(2).schedule(&queue, &view);
        let picked: Vec<(ActionId, u32)> = d.selected.iter().map(|s| (s.action, s.key_units())).collect();
        assert_eq!(picked, vec![(1, 2), (2, 2)]);
        assert_eq!(d.deferred, vec![3]);
        assert_eq!(d.groups[0].objectives, vec![Some(20.0), Some(16.0), Some(22.0)]);
    }

    #[test]
    fn non_scalable_and_empty() {
        let managers = pool(1);
        let (inf, hist) = (InFlight::new(), DurationHistory::new());
        let view = SchedulerView { now: SimTime::ZERO, managers: &managers, in_flight: &inf, history: &hist };
        let s = Scheduler::default();
        assert!(s.schedule(&[], &view).is_empty());
        let a = Action::new(1, 1, CPU, UnitSpec::fixed(1));
        let d = s.schedule(&[a], &view);
        assert_eq!(d.selected.len(), 1);
        assert_eq!(d.selected[0].key_units(), 1);
    }

    #[test]
    fn waiting_queue_orders_fcfs() {
        let mut q = WaitingQueue::new();
        for (id, t) in [(3, 1.0), (1, 2.0), (2, 1.0)] {
            let mut a = Action::new(id, id, CPU, UnitSpec::fixed(1));
            a.submit_time = SimTime::from_secs(t);
            assert!(q.push(a));
        }
        let ids: Vec<ActionId> = q.as_slice().iter().map(|a| a.id).collect();
        assert_eq!(ids, vec![2, 3, 1]);
        assert!(!q.push(Action::new(2, 2, CPU, UnitSpec::fixed(1))));
    }
}
