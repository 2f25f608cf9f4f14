//! Exhaustive cross-checks of the allocation DP on small random instances.
//!
//! The brute force enumerates every unit tuple and sums durations in task
//! order, the same order the DP uses, so optimal totals must agree bit for
//! bit.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dp::{dp_arrange, BasicOperator, DpError, DpTask};
use crate::gpu::{decode_state, encode_state, free_counts, state_count, GpuOperator, PrevRule};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub checked: usize,
    pub matched: usize,
    pub mismatches: Vec<String>,
}

impl OracleReport {
    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if ok {
            self.matched += 1;
        } else if self.mismatches.len() < 10 {
            self.mismatches.push(detail());
        }
    }

    pub fn all_match(&self) -> bool {
        self.checked == self.matched
    }
}

/// Random monotone speedup table over `units`: efficiency never exceeds 1
/// and the speedup `E(m)·m` never drops as `m` grows.
fn random_task(rng: &mut ChaCha8Rng, units: Vec<u32>) -> DpTask {
    let base = rng.random_range(1.0..100.0_f64);
    let mut speedup = 0.0_f64;
    let durations = units
        .iter()
        .map(|&m| {
            let lo = (speedup / m as f64).min(1.0);
            let e = if m == 1 { 1.0 } else { rng.random_range(lo..=1.0) };
            speedup = speedup.max(e * m as f64);
            base / (e * m as f64)
        })
        .collect();
    DpTask::new(units, durations)
}

fn random_units(rng: &mut ChaCha8Rng, pool: &[u32]) -> Vec<u32> {
    let mut units: Vec<u32> = pool.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
    if units.is_empty() {
        units.push(*pool.choose(rng).expect("non-empty pool"));
    }
    units.sort_unstable();
    units
}

/// Best total over all unit tuples accepted by `feasible`.
pub fn brute_force(tasks: &[DpTask], feasible: &dyn Fn(&[u32]) -> bool) -> Option<f64> {
    fn go(tasks: &[DpTask], feasible: &dyn Fn(&[u32]) -> bool, pick: &mut Vec<usize>, best: &mut Option<f64>) {
        if pick.len() == tasks.len() {
            let units: Vec<u32> = pick.iter().zip(tasks).map(|(&i, t)| t.units[i]).collect();
            if feasible(&units) {
                let total = pick.iter().zip(tasks).fold(0.0, |acc, (&i, t)| acc + t.durations[i]);
                if best.is_none_or(|b| total < b) {
                    *best = Some(total);
                }
            }
            return;
        }
        for i in 0..tasks[pick.len()].units.len() {
            pick.push(i);
            go(tasks, feasible, pick, best);
            pick.pop();
        }
    }
    let mut best = None;
    go(tasks, feasible, &mut Vec::new(), &mut best);
    best
}

fn agree(dp: Result<f64, DpError>, brute: Option<f64>) -> bool {
    match (dp, brute) {
        (Ok(a), Some(b)) => a == b,
        (Err(DpError::Infeasible), None) => true,
        _ => false,
    }
}

/// Flat pools: DP optimum against exhaustive search. Allowed units are
/// powers of two up to `max_units`.
pub fn check_basic(instances: usize, max_tasks: usize, max_units: u32, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<u32> = [1, 2, 4, 8, 16].into_iter().filter(|&u| u <= max_units.max(1)).collect();
    let mut report = OracleReport::default();
    for n in 0..instances {
        let count = rng.random_range(1..=max_tasks.max(1));
        let tasks: Vec<DpTask> = (0..count)
            .map(|_| {
                let units = random_units(&mut rng, &pool);
                random_task(&mut rng, units)
            })
            .collect();
        let capacity = rng.random_range(1..=max_units.max(1));
        let dp = dp_arrange(&tasks, &BasicOperator::new(capacity)).map(|r| r.total_duration);
        let brute = brute_force(&tasks, &|u| u.iter().sum::<u32>() <= capacity);
        report.record(agree(dp.clone(), brute), || {
            format!("instance {n}: capacity {capacity}, tasks {tasks:?}: dp {dp:?}, brute force {brute:?}")
        });
    }
    report
}

/// Whether power-of-two requests fit the free masks, trying every aligned
/// position on every node.
pub fn placeable(masks: &[u8], requests: &[u32]) -> bool {
    let Some((&first, rest)) = requests.split_first() else { return true };
    let size = first as u8;
    let block = ((1u16 << size) - 1) as u8;
    for node in 0..masks.len() {
        for start in (0..8u8).step_by(size as usize) {
            let bits = block << start;
            if masks[node] & bits == bits {
                let mut next = masks.to_vec();
                next[node] &= !bits;
                if placeable(&next, rest) {
                    return true;
                }
            }
        }
    }
    false
}

/// GPU chunks: DP optimum against exhaustive physical placement, on random
/// free masks over one or two nodes. Also checks the state encoding is a
/// bijection for the maxima involved.
pub fn check_gpu(instances: usize, max_tasks: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::default();
    for n in 0..instances {
        let nodes = rng.random_range(1..=2);
        let masks: Vec<u8> = (0..nodes).map(|_| rng.random::<u8>() | if rng.random_bool(0.3) { 0xff } else { 0 }).collect();
        let count = rng.random_range(1..=max_tasks.max(1));
        let tasks: Vec<DpTask> = (0..count)
            .map(|_| {
                let units = random_units(&mut rng, &[1, 2, 4, 8]);
                random_task(&mut rng, units)
            })
            .collect();
        let op = GpuOperator::new(free_counts(&masks), count, PrevRule::Aligned);
        let dp = dp_arrange(&tasks, &op).map(|r| r.total_duration);
        let brute = brute_force(&tasks, &|u| placeable(&masks, u));
        let maxima = op.maxima();
        let bijective = (0..state_count(maxima))
            .all(|j| decode_state(j, maxima).and_then(|c| encode_state(c, maxima)).is_ok_and(|k| k == j));
        report.record(bijective && agree(dp.clone(), brute), || {
            format!(
                "instance {n}: masks {masks:02x?}, tasks {tasks:?}: dp {dp:?}, brute force {brute:?}, \
                 encoding bijective for {maxima}: {bijective}"
            )
        });
    }
    report
}
