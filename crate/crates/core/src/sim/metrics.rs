use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionId, SimTime, TrajectoryId};

/// Completion record for one action. All times are simulated microseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRecord {
    pub action_id: ActionId,
    pub trajectory_id: TrajectoryId,
    pub policy: String,
    pub submit: SimTime,
    pub start: SimTime,
    pub end: SimTime,
    pub queue: SimTime,
    pub exec: SimTime,
    pub overhead: SimTime,
    pub units: u32,
    pub timed_out: bool,
}

impl SimRecord {
    pub fn act(&self) -> SimTime {
        self.queue + self.exec + self.overhead
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("no records to summarize")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub start: f64,
    pub count: usize,
    pub mean_act: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub actions: usize,
    pub timeouts: usize,
    pub mean_act: f64,
    pub p50_act: f64,
    pub p90_act: f64,
    pub p99_act: f64,
    pub mean_queue: f64,
    pub mean_exec: f64,
    pub mean_overhead: f64,
    /// Total overhead over total execution time.
    pub overhead_share: f64,
    pub mean_trajectory_makespan: f64,
    pub max_trajectory_makespan: f64,
    pub window: f64,
    pub series: Vec<WindowPoint>,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean_us(total: u128, n: usize) -> f64 {
    total as f64 / n as f64 / 1e6
}

/// Means and percentiles of ACT and its breakdown, plus mean ACT over
/// tumbling windows of completion time. `starts` maps trajectories to their
/// start time for makespans.
pub fn summarize(
    records: &[SimRecord],
    starts: &BTreeMap<TrajectoryId, SimTime>,
    window: f64,
) -> Result<Summary, SummaryError> {
    if records.is_empty() {
        return Err(SummaryError::Empty);
    }
    let n = records.len();
    let sum = |f: fn(&SimRecord) -> SimTime| records.iter().map(|r| f(r).0 as u128).sum::<u128>();
    let (q, e, o, a) = (sum(|r| r.queue), sum(|r| r.exec), sum(|r| r.overhead), sum(SimRecord::act));

    let mut acts: Vec<f64> = records.iter().map(|r| r.act().as_secs()).collect();
    acts.sort_by(f64::total_cmp);

    let mut ends: BTreeMap<TrajectoryId, SimTime> = BTreeMap::new();
    for r in records {
        let e = ends.entry(r.trajectory_id).or_default();
        *e = (*e).max(r.end);
    }
    let spans: Vec<f64> = ends
        .iter()
        .map(|(t, end)| end.saturating_sub(starts.get(t).copied().unwrap_or_default()).as_secs())
        .collect();

    let width = SimTime::from_secs(window.max(1e-6)).0.max(1);
    let mut buckets: BTreeMap<u64, (usize, u128)> = BTreeMap::new();
    for r in records {
        let b = buckets.entry(r.end.0 / width).or_default();
        b.0 += 1;
        b.1 += r.act().0 as u128;
    }
    let series = buckets
        .into_iter()
        .map(|(k, (c, s))| WindowPoint { start: SimTime(k * width).as_secs(), count: c, mean_act: mean_us(s, c) })
        .collect();

    Ok(Summary {
        policy: records[0].policy.clone(),
        actions: n,
        timeouts: records.iter().filter(|r| r.timed_out).count(),
        mean_act: mean_us(a, n),
        p50_act: percentile(&acts, 50.0),
        p90_act: percentile(&acts, 90.0),
        p99_act: percentile(&acts, 99.0),
        mean_queue: mean_us(q, n),
        mean_exec: mean_us(e, n),
        mean_overhead: mean_us(o, n),
        overhead_share: if e > 0 { o as f64 / e as f64 } else { 0.0 },
        mean_trajectory_makespan: spans.iter().sum::<f64>() / spans.len() as f64,
        max_trajectory_makespan: spans.iter().copied().fold(0.0, f64::max),
        window,
        series,
    })
}

#[derive(Serialize)]
struct Row<'a> {
    action_id: ActionId,
    trajectory_id: TrajectoryId,
    policy: &'a str,
    submit: String,
    start: String,
    end: String,
    queue: String,
    exec: String,
    overhead: String,
    #[serde(rename = "ACT")]
    act: String,
    units: u32,
    timed_out: bool,
}

/// Records as CSV, times in seconds with microsecond precision.
pub fn write_records<W: Write>(w: W, records: &[SimRecord]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(Row {
            action_id: r.action_id,
            trajectory_id: r.trajectory_id,
            policy: &r.policy,
            submit: r.submit.to_string(),
            start: r.start.to_string(),
            end: r.end.to_string(),
            queue: r.queue.to_string(),
            exec: r.exec.to_string(),
            overhead: r.overhead.to_string(),
            act: r.act().to_string(),
            units: r.units,
            timed_out: r.timed_out,
        })?;
    }
    out.flush()?;
    Ok(())
}
