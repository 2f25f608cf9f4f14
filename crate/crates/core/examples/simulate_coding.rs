//! Runs the bundled coding workload under elastic scheduling and prints the
//! latency breakdown.

use actsched::scenarios;
use actsched::sim::{gen_trace, run, summarize, Policy, SimConfig};

fn main() {
    let s = scenarios::coding_low();
    let trace = gen_trace(&s.params, 42).unwrap();
    let cfg = SimConfig { policy: Policy::Elastic, ..Default::default() };
    let out = run(&trace, &s.cluster, &cfg).unwrap();
    let sm = summarize(&out.records, &out.trajectory_starts, 60.0).unwrap();

    println!("{} trajectories, {} actions", trace.len(), sm.actions);
    println!("mean ACT   {:8.2}s  (p50 {:.2}, p99 {:.2})", sm.mean_act, sm.p50_act, sm.p99_act);
    println!("  queue    {:8.2}s", sm.mean_queue);
    println!("  exec     {:8.2}s", sm.mean_exec);
    println!("  overhead {:8.2}s", sm.mean_overhead);
    println!("makespan   {:8.2}s (slowest trajectory)", sm.max_trajectory_makespan);
}
