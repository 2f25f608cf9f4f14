//! Same trace, four allocation policies.

use actsched::scenarios;
use actsched::sim::{gen_trace, run, summarize, Policy, SimConfig};

fn main() {
    let s = scenarios::saturation();
    let trace = gen_trace(&s.params, 7).unwrap();
    let policies = [Policy::Elastic, Policy::TrajectoryStatic, Policy::FixedDop(4), Policy::FixedDop(1)];
    let mut base = None;
    for p in policies {
        let cfg = SimConfig { policy: p, ..Default::default() };
        let out = run(&trace, &s.cluster, &cfg).unwrap();
        let sm = summarize(&out.records, &out.trajectory_starts, 60.0).unwrap();
        let b = *base.get_or_insert(sm.mean_act);
        println!("{:<20} mean ACT {:8.2}s  x{:.2}  timeouts {}", p.to_string(), sm.mean_act, sm.mean_act / b, sm.timeouts);
    }
}
