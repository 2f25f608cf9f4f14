//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use actsched::dp::{dp_arrange, BasicOperator, DpTask};
use actsched::gpu::{
    chunk_allocate, chunk_free, decode_state, encode_state, gpu_prev, state_count, Chunk, ChunkCounts, PrevRule,
};
use actsched::managers::{BasicManager, CpuManager, ResourceManager};
use actsched::model::{Action, CpuNodeSpec, ElasticityProfile, ResourceTypeId, SimTime, UnitSpec};
use actsched::scenarios::{self, Scenario};
use actsched::scheduler::{DurationHistory, InFlight, ScheduleDecision, Scheduler, SchedulerView};
use actsched::sim::{gen_trace, run, summarize, LogEntry, Policy, Segment, SimConfig, SimOutput, Summary};

const SEED: u64 = 42;

const DP_INSTANCES: usize = 500;
const DP_LIMIT: Duration = Duration::from_secs(10);
const GPU_TRANSITIONS: usize = 10_000;
const GPU_LIMIT: Duration = Duration::from_secs(5);
const SCHED_INVOCATIONS: usize = 200;
const SCHED_LIMIT: Duration = Duration::from_secs(10);
const SIM_LIMIT: Duration = Duration::from_secs(120);
/// Minimum mean ACT ratio of a fixed-DoP baseline over elastic.
const FIXED_DOP_FLOOR: f64 = 1.3;
/// Maximum mean ACT ratio of elastic over trajectory-static.
const STATIC_CEILING: f64 = 0.5;
const SATURATION_LOAD: f64 = 1.2;
/// Maximum mean ACT ratio of the shared GPU pool over dedicated replicas.
const CONSOLIDATION_CEILING: f64 = 1.5;
const GPU_SHARE: f64 = 0.4;
const OVERHEAD_SHARE: (f64, f64) = (0.15, 0.35);
const LATENCY_LIMIT: Duration = Duration::from_millis(10);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- 1: DP against exhaustive enumeration -------------------------------

fn monotone_task(rng: &mut ChaCha8Rng) -> DpTask {
    let mut units: Vec<u32> = [1, 2, 4, 8, 16].into_iter().filter(|_| rng.random_bool(0.5)).collect();
    if units.is_empty() {
        units.push(1 << rng.random_range(0..5));
    }
    let base = rng.random_range(0.5..200.0_f64);
    let mut best_speedup = 0.0_f64;
    let mut durations = Vec::new();
    for &m in &units {
        let floor = (best_speedup / m as f64).min(1.0);
        let e = if m == 1 { 1.0 } else { rng.random_range(floor..=1.0) };
        best_speedup = best_speedup.max(e * m as f64);
        durations.push(base / (e * m as f64));
    }
    DpTask::new(units, durations)
}

/// Every tuple, summed left to right as the DP does.
fn enumerate(tasks: &[DpTask], capacity: u32) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; tasks.len()];
    loop {
        let used: u32 = idx.iter().zip(tasks).map(|(&i, t)| t.units[i]).sum();
        if used <= capacity {
            let total = idx.iter().zip(tasks).fold(0.0, |acc, (&i, t)| acc + t.durations[i]);
            if best.is_none_or(|b| total < b) {
                best = Some(total);
            }
        }
        let mut d = 0;
        loop {
            if d == tasks.len() {
                return best;
            }
            idx[d] += 1;
            if idx[d] < tasks[d].units.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn dp_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut matched = 0;
    let mut first_bad = None;
    for n in 0..DP_INSTANCES {
        let tasks: Vec<DpTask> = (0..rng.random_range(1..=4)).map(|_| monotone_task(&mut rng)).collect();
        let capacity = rng.random_range(1..=16);
        let dp = dp_arrange(&tasks, &BasicOperator::new(capacity)).ok().map(|r| r.total_duration);
        let brute = enumerate(&tasks, capacity);
        if dp == brute {
            matched += 1;
        } else if first_bad.is_none() {
            first_bad = Some(format!("; instance {n}: dp {dp:?} vs {brute:?}"));
        }
    }
    let took = t0.elapsed();
    outcome(
        matched == DP_INSTANCES && took < DP_LIMIT,
        format!("{matched}/{DP_INSTANCES} exact matches in {took:.2?}{}", first_bad.unwrap_or_default()),
    )
}

// ---- 2: GPU state algebra ----------------------------------------------

fn gpu_algebra() -> Outcome {
    let t0 = Instant::now();
    let maxima = ChunkCounts::new(8, 4, 2, 2);
    let states = state_count(maxima);
    let mut seen = vec![false; states];
    let mut bijective = true;
    for a in 0..=8 {
        for b in 0..=4 {
            for c in 0..=2 {
                for d in 0..=2 {
                    let counts = ChunkCounts::new(a, b, c, d);
                    match encode_state(counts, maxima) {
                        Ok(j) if j < states && !seen[j] && decode_state(j, maxima) == Ok(counts) => seen[j] = true,
                        _ => bijective = false,
                    }
                }
            }
        }
    }
    bijective &= seen.iter().all(|&s| s) && decode_state(states, maxima).is_err();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut conserved = 0;
    for _ in 0..GPU_TRANSITIONS {
        let counts = ChunkCounts::new(
            rng.random_range(0..=8),
            rng.random_range(0..=4),
            rng.random_range(0..=2),
            rng.random_range(0..=2),
        );
        let k = 1 << rng.random_range(0..4);
        let rule = if rng.random_bool(0.5) { PrevRule::Aligned } else { PrevRule::GreedySplit };
        // a refusal is only right when nothing could host k devices
        let largest = (0..4).rev().find(|&l| counts.0[l] > 0).map_or(0, |l| 1u32 << l);
        let hostable = match rule {
            PrevRule::Aligned => largest >= k,
            _ => counts.devices() >= k,
        };
        match gpu_prev(counts, k, rule) {
            Ok(Some(left)) if hostable && left.devices() + k == counts.devices() => conserved += 1,
            Ok(None) if !hostable => conserved += 1,
            _ => {}
        }
    }

    // random allocate/free churn on four nodes; every chunk must stay aligned
    let mut free: Vec<Chunk> = (0..4).map(Chunk::whole_node).collect();
    let mut busy: Vec<Chunk> = Vec::new();
    let mut legal = true;
    let mut materialized = 0usize;
    for _ in 0..GPU_TRANSITIONS {
        if busy.is_empty() || rng.random_bool(0.55) {
            let units = 1 << rng.random_range(0..4);
            if let Ok(c) = chunk_allocate(&mut free, units, None) {
                busy.push(c);
            }
        } else {
            let c = busy.swap_remove(rng.random_range(0..busy.len()));
            legal &= chunk_free(c, &mut free).is_ok();
        }
        materialized += free.len() + busy.len();
        legal &= free.iter().chain(&busy).all(|c| (c.start as u32).is_multiple_of(1u32 << c.level) && c.end() <= 8);
        let mut cover = [0u8; 4];
        for c in free.iter().chain(&busy) {
            legal &= cover[c.node] & c.mask() == 0;
            cover[c.node] |= c.mask();
        }
        legal &= cover == [0xff; 4];
    }
    let took = t0.elapsed();
    outcome(
        bijective && conserved == GPU_TRANSITIONS && legal && took < GPU_LIMIT,
        format!(
            "bijection over {states} states: {bijective}; {conserved}/{GPU_TRANSITIONS} transitions conserve devices; \
             {materialized} chunk observations aligned: {legal}; {took:.2?}"
        ),
    )
}

// ---- 3: scheduler properties ------------------------------------------

const CPU: ResourceTypeId = ResourceTypeId(0);

fn random_action(rng: &mut ChaCha8Rng, id: u64) -> Action {
    let scalable = rng.random_bool(0.7);
    let units: Vec<u32> = if scalable {
        let top = rng.random_range(1..=5);
        (0..top).map(|i| 1 << i).collect()
    } else {
        vec![rng.random_range(1..=2)]
    };
    let mut a = Action::new(id, id, CPU, UnitSpec::new(units.clone()).unwrap());
    a.submit_time = SimTime::from_secs(id as f64);
    let base = rng.random_range(1.0..60.0);
    if scalable {
        a.elasticity = ElasticityProfile::amdahl(CPU, &units, rng.random_range(0.5..0.99));
        a.base_duration = Some(base);
    } else {
        a.est_duration = Some(base);
    }
    a
}

fn random_manager(rng: &mut ChaCha8Rng) -> Box<dyn ResourceManager> {
    if rng.random_bool(0.5) {
        Box::new(BasicManager::concurrency("cpu", rng.random_range(1..=48)))
    } else {
        let nodes: Vec<CpuNodeSpec> = (0..rng.random_range(1..=3))
            .map(|_| CpuNodeSpec { numa: vec![rng.random_range(1..=8), rng.random_range(0..=8)], memory_mb: 1 << 20 })
            .collect();
        Box::new(CpuManager::new("cpu", &nodes, 0.0))
    }
}

fn check_decision(queue: &[Action], managers: &[Box<dyn ResourceManager>], d: &ScheduleDecision) -> Result<(), String> {
    let m = &managers[0];
    let now = SimTime::ZERO;
    // FCFS prefix: the candidates are exactly the longest prefix that fits at minimum units
    let fits = |n: usize| {
        let demands: Vec<(&Action, u32)> = queue[..n].iter().map(|a| (a, a.key_units().min_units())).collect();
        m.accommodate(&demands, now)
    };
    if !fits(d.candidates) || (d.candidates < queue.len() && fits(d.candidates + 1)) {
        return Err(format!("candidate prefix {} is not the longest feasible one", d.candidates));
    }
    let mut ids: Vec<u64> = d.selected.iter().map(|s| s.action).chain(d.deferred.iter().copied()).collect();
    ids.sort_unstable();
    if ids != queue.iter().map(|a| a.id).collect::<Vec<_>>() {
        return Err("selected and deferred do not partition the queue".into());
    }
    let by_id: BTreeMap<u64, &Action> = queue.iter().map(|a| (a.id, a)).collect();
    for s in &d.selected {
        if s.action as usize >= d.candidates || !by_id[&s.action].key_units().contains(s.key_units()) {
            return Err(format!("action {} selected outside the prefix or at a disallowed size", s.action));
        }
    }
    // capacity: the whole selection must be placeable at once
    let demands: Vec<(&Action, u32)> = d.selected.iter().map(|s| (by_id[&s.action], s.key_units())).collect();
    if !m.accommodate(&demands, now) {
        return Err("selection exceeds capacity".into());
    }
    for g in &d.groups {
        let picked: Vec<u64> = g.members.iter().copied().filter(|id| d.selected.iter().any(|s| s.action == *id)).collect();
        if picked != g.members[..g.selected] {
            return Err(format!("group selection {picked:?} is not a prefix of {:?}", g.members));
        }
        if !g.scalable {
            continue;
        }
        let Some(first) = g.objectives.iter().position(Option::is_some) else {
            if g.selected != 0 {
                return Err("selected members without a feasible objective".into());
            }
            continue;
        };
        let seq = &g.objectives[first..];
        let start_len = g.members.len() - first;
        let kept = start_len - g.selected;
        let values: Vec<f64> = seq[..=kept].iter().map(|o| o.expect("accepted objectives are feasible")).collect();
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(format!("objectives {values:?} do not strictly decrease"));
        }
        match seq.get(kept + 1) {
            None if g.selected != 1 => {
                return Err(format!("search stopped at {} members without a break", g.selected));
            }
            Some(Some(o)) if *o < values[kept] => return Err("stopped although the objective improved".into()),
            _ => {}
        }
        if seq.len() > kept + 2 {
            return Err("objectives evaluated after the break".into());
        }
    }
    Ok(())
}

fn scheduler_properties() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut ok = 0;
    let mut evictions = 0;
    let mut first_bad = None;
    for n in 0..SCHED_INVOCATIONS {
        let queue: Vec<Action> = (0..rng.random_range(1..=24)).map(|i| random_action(&mut rng, i)).collect();
        let managers = vec![random_manager(&mut rng)];
        let mut in_flight = InFlight::new();
        for i in 0..rng.random_range(0..4) {
            in_flight.insert(1000 + i, CPU, 0, SimTime::from_secs(rng.random_range(0.5..30.0)));
        }
        let history = DurationHistory::new();
        let view = SchedulerView { now: SimTime::ZERO, managers: &managers, in_flight: &in_flight, history: &history };
        let depth = rng.random_range(1..=3);
        let sched = Scheduler::new(depth);
        let a = sched.schedule(&queue, &view);
        let b = sched.schedule(&queue, &view);
        evictions += a.groups.iter().map(|g| g.evictions()).sum::<usize>();
        let res = if a != b { Err("repeat call gave a different decision".into()) } else { check_decision(&queue, &managers, &a) };
        match res {
            Ok(()) => ok += 1,
            Err(e) if first_bad.is_none() => first_bad = Some(format!("; invocation {n}: {e}")),
            Err(_) => {}
        }
    }
    let took = t0.elapsed();
    outcome(
        ok == SCHED_INVOCATIONS && took < SCHED_LIMIT,
        format!(
            "{ok}/{SCHED_INVOCATIONS} invocations satisfy all properties ({evictions} evictions exercised) in {took:.2?}{}",
            first_bad.unwrap_or_default()
        ),
    )
}

// ---- simulation criteria --------------------------------------------------

struct Run {
    summary: Summary,
    output: SimOutput,
}

fn simulate(s: &Scenario, policy: Policy) -> Run {
    let trace = gen_trace(&s.params, SEED).expect("bundled generator parameters are valid");
    let cfg = SimConfig { policy, ..Default::default() };
    let output = run(&trace, &s.cluster, &cfg).expect("bundled scenarios simulate");
    let summary = summarize(&output.records, &output.trajectory_starts, 60.0).expect("runs produce records");
    Run { summary, output }
}

fn elastic_vs_fixed(runs: &mut Vec<Run>) -> Outcome {
    let t0 = Instant::now();
    let (low, high) = (scenarios::coding_low(), scenarios::coding_high());
    let el_low = simulate(&low, Policy::Elastic);
    let fx_low = simulate(&low, Policy::FixedDop(4));
    let el_high = simulate(&high, Policy::Elastic);
    let fx_high = simulate(&high, Policy::FixedDop(16));
    let r_low = fx_low.summary.mean_act / el_low.summary.mean_act;
    let r_high = fx_high.summary.mean_act / el_high.summary.mean_act;
    let took = t0.elapsed();
    let detail = format!(
        "low load ({} trajectories): fixed-dop:4/elastic = {r_low:.2} ({:.2}s vs {:.2}s); \
         high load ({} trajectories): fixed-dop:16/elastic = {r_high:.2} ({:.2}s vs {:.2}s); floor {FIXED_DOP_FLOOR}; {took:.2?}",
        low.params.n_trajectories,
        fx_low.summary.mean_act,
        el_low.summary.mean_act,
        high.params.n_trajectories,
        fx_high.summary.mean_act,
        el_high.summary.mean_act,
    );
    runs.extend([el_low, fx_low, el_high, fx_high]);
    outcome(r_low >= FIXED_DOP_FLOOR && r_high >= FIXED_DOP_FLOOR && took < SIM_LIMIT, detail)
}

/// Cores demanded at minimum units by trajectories in flight, as a multiple
/// of capacity, on an otherwise idle cluster.
fn offered_load(s: &Scenario) -> f64 {
    let trace = gen_trace(&s.params, SEED).unwrap();
    let capacity = s.cluster.total_capacity(ResourceTypeId(0)).unwrap() as f64;
    let demand: f64 = trace
        .iter()
        .map(|t| {
            let (mut busy, mut span) = (0.0, 0.0);
            for seg in &t.segments {
                match seg {
                    Segment::Think { dur } => span += dur,
                    Segment::Act(a) => {
                        let min = a.cost[&a.key].units.iter().min().copied().unwrap_or(1) as f64;
                        busy += min * a.min_secs();
                        span += a.min_secs();
                    }
                }
            }
            busy / span
        })
        .sum();
    demand / capacity
}

fn action_vs_static(runs: &mut Vec<Run>) -> Outcome {
    let t0 = Instant::now();
    let s = scenarios::saturation();
    let load = offered_load(&s);
    let el = simulate(&s, Policy::Elastic);
    let st = simulate(&s, Policy::TrajectoryStatic);
    let ratio = el.summary.mean_act / st.summary.mean_act;
    let took = t0.elapsed();
    let detail = format!(
        "offered load {load:.2}x capacity; elastic/static = {ratio:.3} ({:.2}s vs {:.2}s, static timeouts {}); \
         ceiling {STATIC_CEILING}; {took:.2?}",
        el.summary.mean_act, st.summary.mean_act, st.summary.timeouts
    );
    runs.extend([el, st]);
    outcome(load >= SATURATION_LOAD && ratio <= STATIC_CEILING && took < SIM_LIMIT, detail)
}

fn gpu_count(s: &Scenario) -> u32 {
    s.cluster
        .resources
        .iter()
        .map(|r| match &r.topology {
            actsched::model::Topology::Gpu { nodes, .. } => *nodes * 8,
            _ => 0,
        })
        .sum()
}

fn consolidation(runs: &mut Vec<Run>) -> (Outcome, Summary) {
    let t0 = Instant::now();
    let (shared, dedicated) = (scenarios::mopd_shared(), scenarios::mopd_dedicated());
    let share = gpu_count(&shared) as f64 / gpu_count(&dedicated) as f64;
    let sh = simulate(&shared, Policy::Elastic);
    let de = simulate(&dedicated, Policy::Dedicated(8));
    let ratio = sh.summary.mean_act / de.summary.mean_act;
    let took = t0.elapsed();
    let detail = format!(
        "shared pool uses {:.0}% of dedicated GPUs ({} vs {}); shared/dedicated = {ratio:.2} ({:.2}s vs {:.2}s); \
         ceiling {CONSOLIDATION_CEILING}; {took:.2?}",
        share * 100.0,
        gpu_count(&shared),
        gpu_count(&dedicated),
        sh.summary.mean_act,
        de.summary.mean_act
    );
    let shared_summary = sh.summary.clone();
    runs.extend([sh, de]);
    (outcome(share <= GPU_SHARE + 1e-9 && ratio <= CONSOLIDATION_CEILING && took < SIM_LIMIT, detail), shared_summary)
}

fn accounting(runs: &[Run], mopd: &Summary) -> Outcome {
    let timeout = SimTime::from_secs(SimConfig::default().timeout);
    let mut checked = 0;
    let mut bad = 0;
    for r in runs {
        for rec in &r.output.records {
            checked += 1;
            let parts = rec.queue + rec.exec + rec.overhead;
            let exact = if rec.timed_out {
                rec.queue == timeout && rec.exec.0 == 0 && rec.overhead.0 == 0
            } else {
                rec.end.saturating_sub(rec.submit) == parts && rec.start.saturating_sub(rec.submit) == rec.queue
            };
            if !exact || parts != rec.act() {
                bad += 1;
            }
        }
    }
    let share = mopd.overhead_share;
    let (lo, hi) = OVERHEAD_SHARE;
    outcome(
        bad == 0 && checked > 0 && (lo..=hi).contains(&share),
        format!("{checked} records over {} runs, {bad} inexact; MOPD overhead share {share:.3} (band {lo}..{hi})", runs.len()),
    )
}

fn latency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let units = [1, 2, 4, 8, 16, 32];
    let queue: Vec<Action> = (0..64)
        .map(|i| {
            let mut a = Action::new(i, i, CPU, UnitSpec::new(units.to_vec()).unwrap());
            a.submit_time = SimTime::from_secs(i as f64);
            a.elasticity = ElasticityProfile::amdahl(CPU, &units, rng.random_range(0.6..0.99));
            a.base_duration = Some(rng.random_range(5.0..300.0));
            a
        })
        .collect();
    let managers: Vec<Box<dyn ResourceManager>> = vec![Box::new(BasicManager::concurrency("cpu", 256))];
    let in_flight = InFlight::new();
    let history = DurationHistory::new();
    let view = SchedulerView { now: SimTime::ZERO, managers: &managers, in_flight: &in_flight, history: &history };
    let sched = Scheduler::new(2);
    let mut times: Vec<Duration> = (0..100)
        .map(|_| {
            let t = Instant::now();
            let d = sched.schedule(&queue, &view);
            let took = t.elapsed();
            assert_eq!(d.candidates, 64);
            took
        })
        .collect();
    times.sort_unstable();
    let median = times[times.len() / 2];
    outcome(
        median < LATENCY_LIMIT,
        format!("64 candidates, 256 units, depth 2: median {median:.2?}, max {:.2?} over 100 calls", times[99]),
    )
}

fn quota_safety() -> Outcome {
    let s = scenarios::api();
    let run = simulate(&s, Policy::Elastic);
    let mut limits = BTreeMap::new();
    for r in &s.cluster.resources {
        limits.insert(r.name.clone(), r.topology.clone());
    }
    let mut held: BTreeMap<String, i64> = BTreeMap::new();
    let mut windows: BTreeMap<(String, u64), u32> = BTreeMap::new();
    let (mut violations, mut peak_conc, mut peak_window) = (0, 0, 0);
    for e in &run.output.log {
        match e {
            LogEntry::Acquire { t, resource, units, .. } => match &limits[resource] {
                actsched::model::Topology::Concurrency { limit } => {
                    let h = held.entry(resource.clone()).or_default();
                    *h += *units as i64;
                    peak_conc = peak_conc.max(*h);
                    violations += usize::from(*h > *limit as i64);
                }
                actsched::model::Topology::Quota { limit, window } => {
                    let w = SimTime::from_secs(*window).0;
                    let used = windows.entry((resource.clone(), t.0 / w)).or_default();
                    *used += units;
                    peak_window = peak_window.max(*used);
                    violations += usize::from(*used > *limit);
                }
                _ => {}
            },
            LogEntry::Release { resource, units, .. } => {
                if let Some(h) = held.get_mut(resource) {
                    *h -= *units as i64;
                }
            }
            _ => {}
        }
    }
    let actions = run.output.records.len();
    outcome(
        violations == 0 && actions >= 10_000,
        format!(
            "{actions} actions, {violations} violations; peak concurrency {peak_conc}, peak window usage {peak_window}; \
             mean queue {:.2}s",
            run.summary.mean_queue
        ),
    )
}

fn main() {
    let mut runs = Vec::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 dp optimality oracle", dp_oracle()),
        ("2 gpu state algebra", gpu_algebra()),
        ("3 scheduler properties", scheduler_properties()),
        ("4 elastic vs fixed dop", elastic_vs_fixed(&mut runs)),
        ("5 action-level vs trajectory-static", action_vs_static(&mut runs)),
    ];
    let (gpu, mopd) = consolidation(&mut runs);
    results.push(("6 gpu consolidation", gpu));
    results.push(("7 act accounting", accounting(&runs, &mopd)));
    results.push(("8 scheduling latency", latency()));
    results.push(("9 quota safety", quota_safety()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
