//! Topology-agnostic optimal discrete allocation among scalable tasks.
//!
//! `dp[i][j]` is the smallest summed duration of the first `i` tasks when
//! they exactly consume resource state `j`. A [`DpOperator`] defines what a
//! state index means for one topology: a plain unit count for flat pools
//! ([`BasicOperator`]), or an encoded multiset of GPU chunks
//! ([`crate::gpu::GpuOperator`]).

use std::cell::RefCell;
use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("no tasks to arrange")]
    NoTasks,
    #[error("task {task} has no allowed units")]
    EmptyTask { task: usize },
    #[error("capacity cannot host every task at its minimum units")]
    Infeasible,
}

/// Resource-topology primitives used by [`dp_arrange`].
pub trait DpOperator {
    /// Smallest state index the given tasks can occupy together.
    fn start(&self, specs: &[&[u32]]) -> usize;
    /// Largest state index worth scanning for the given tasks.
    fn end(&self, specs: &[&[u32]]) -> usize;
    /// State left for the earlier tasks after one task takes `units` out of
    /// `state`, or `None` when it cannot.
    fn prev(&self, state: usize, units: u32) -> Option<usize>;
    /// Whether `state` can be exactly consumed by one unit choice per spec.
    fn is_valid(&self, state: usize, specs: &[&[u32]]) -> bool;
    /// Whether `state` can be carved out of the currently available capacity.
    fn admits(&self, state: usize) -> bool;
    /// `true` when larger indices always mean more consumed units, so the
    /// scan for task `i` may start at `start(S_1..S_i)`.
    fn ordered(&self) -> bool {
        true
    }
}

/// One task as the DP sees it: allowed units and the duration at each.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTask {
    pub units: Vec<u32>,
    pub durations: Vec<f64>,
}

impl DpTask {
    pub fn new(units: Vec<u32>, durations: Vec<f64>) -> DpTask {
        assert_eq!(units.len(), durations.len(), "one duration per allowed unit");
        DpTask { units, durations }
    }

    /// Builds the table from a duration function over ascending `units`.
    pub fn from_fn(units: &[u32], f: impl Fn(u32) -> f64) -> DpTask {
        DpTask { units: units.to_vec(), durations: units.iter().map(|&u| f(u)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub total_duration: f64,
    pub allocations: Vec<u32>,
    pub per_task_durations: Vec<f64>,
    /// Final consumed state index.
    pub state: usize,
}

/// Minimum summed duration over all feasible unit choices, one per task.
///
/// The final row is scanned from the largest admitted state down and keeps
/// the first strict minimum, so among equal totals the allocation that
/// consumes the most resources wins. Within a cell, unit choices are tried in
/// ascending order and only strict improvements replace the incumbent.
pub fn dp_arrange(tasks: &[DpTask], op: &dyn DpOperator) -> Result<AllocationResult, DpError> {
    if tasks.is_empty() {
        return Err(DpError::NoTasks);
    }
    if let Some(task) = tasks.iter().position(|t| t.units.is_empty()) {
        return Err(DpError::EmptyTask { task });
    }
    let specs: Vec<&[u32]> = tasks.iter().map(|t| t.units.as_slice()).collect();
    let n = op.end(&specs);
    let m = tasks.len();
    if op.ordered() && op.start(&specs) > n {
        return Err(DpError::Infeasible);
    }

    let width = n + 1;
    // `None` marks an unreachable state.
    let mut dp: Vec<Option<f64>> = vec![None; (m + 1) * width];
    let mut choice: Vec<u32> = vec![0; (m + 1) * width];
    dp[0] = Some(0.0);

    let mut start_prev = 0usize;
    for i in 1..=m {
        let start_cur = if op.ordered() { op.start(&specs[..i]) } else { 0 };
        let task = &tasks[i - 1];
        let (prev_row, cur_row) = dp.split_at_mut(i * width);
        let prev_row = &prev_row[(i - 1) * width..];
        let cur_row = &mut cur_row[..width];
        let choice_row = &mut choice[i * width..(i + 1) * width];
        for j in start_cur..=n {
            for (&k, &dur) in task.units.iter().zip(&task.durations) {
                let Some(jp) = op.prev(j, k) else { continue };
                if jp > n || (op.ordered() && jp < start_prev) {
                    continue;
                }
                // reachability of the predecessor row subsumes the IsValid check
                let Some(before) = prev_row[jp] else { continue };
                let cand = before + dur;
                if cur_row[j].is_none_or(|best| cand < best) {
                    cur_row[j] = Some(cand);
                    choice_row[j] = k;
                }
            }
        }
        start_prev = start_cur;
    }

    let last = &dp[m * width..];
    let mut best: Option<(usize, f64)> = None;
    for j in (0..=n).rev() {
        let Some(v) = last[j] else { continue };
        if !op.admits(j) {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((j, v));
        }
    }
    let (state, total_duration) = best.ok_or(DpError::Infeasible)?;

    let mut allocations = vec![0u32; m];
    let mut per_task_durations = vec![0.0; m];
    let mut j = state;
    for i in (1..=m).rev() {
        let k = choice[i * width + j];
        allocations[i - 1] = k;
        let task = &tasks[i - 1];
        let idx = task.units.iter().position(|&u| u == k).expect("choice is an allowed unit");
        per_task_durations[i - 1] = task.durations[idx];
        j = op.prev(j, k).expect("back-trace follows recorded transitions");
    }
    debug_assert_eq!(j, 0);
    Ok(AllocationResult { total_duration, allocations, per_task_durations, state })
}

/// A DP state and the unit lists of the tasks checked against it.
type ValidityKey = (usize, Vec<Vec<u32>>);

/// Flat pool of interchangeable units.
#[derive(Debug)]
pub struct BasicOperator {
    capacity: usize,
    memo: RefCell<HashMap<ValidityKey, bool>>,
}

impl BasicOperator {
    pub fn new(capacity: u32) -> BasicOperator {
        BasicOperator { capacity: capacity as usize, memo: RefCell::new(HashMap::new()) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn exact_cover(&self, r: usize, specs: &[&[u32]], memo: &mut HashMap<(usize, usize), bool>) -> bool {
        let Some((first, rest)) = specs.split_first() else {
            return r == 0;
        };
        if let Some(&hit) = memo.get(&(r, specs.len())) {
            return hit;
        }
        let hit = first.iter().any(|&u| (u as usize) <= r && self.exact_cover(r - u as usize, rest, memo));
        memo.insert((r, specs.len()), hit);
        hit
    }
}

impl DpOperator for BasicOperator {
    fn start(&self, specs: &[&[u32]]) -> usize {
        specs.iter().map(|s| s.first().copied().unwrap_or(0) as usize).sum()
    }

    fn end(&self, specs: &[&[u32]]) -> usize {
        let max_total: usize = specs.iter().map(|s| s.last().copied().unwrap_or(0) as usize).sum();
        self.capacity.min(max_total)
    }

    fn prev(&self, state: usize, units: u32) -> Option<usize> {
        state.checked_sub(units as usize)
    }

    fn is_valid(&self, state: usize, specs: &[&[u32]]) -> bool {
        let key = (state, specs.iter().map(|s| s.to_vec()).collect::<Vec<_>>());
        if let Some(&hit) = self.memo.borrow().get(&key) {
            return hit;
        }
        // suffixes of one spec list are identified by their length
        let hit = self.exact_cover(state, specs, &mut HashMap::new());
        self.memo.borrow_mut().insert(key, hit);
        hit
    }

    fn admits(&self, state: usize) -> bool {
        state <= self.capacity
    }
}
