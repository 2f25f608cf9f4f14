//! Splits a core budget across waiting actions with the DP and compares the
//! result to giving everyone the minimum.

use actsched::dp::{dp_arrange, BasicOperator, DpTask};
use actsched::model::{eval_duration, ElasticityProfile, ResourceTypeId};

fn main() {
    let cpu = ResourceTypeId(0);
    let units = [1, 2, 4, 8, 16];
    // (name, single-core seconds, parallel fraction)
    let jobs = [("unit tests", 120.0, 0.95), ("lint", 20.0, 0.5), ("build", 300.0, 0.9), ("grep", 5.0, 0.0)];

    let tasks: Vec<DpTask> = jobs
        .iter()
        .map(|&(_, base, p)| {
            let profile = ElasticityProfile::amdahl(cpu, &units, p);
            DpTask::from_fn(&units, |m| eval_duration(&profile, Some(base), m).unwrap())
        })
        .collect();

    for capacity in [4, 8, 16, 32] {
        let r = dp_arrange(&tasks, &BasicOperator::new(capacity)).unwrap();
        let naive: f64 = jobs.iter().map(|j| j.1).sum();
        println!("{capacity:>2} cores: total {:7.1}s (all at one core: {naive:.1}s)", r.total_duration);
        for ((name, ..), (k, d)) in jobs.iter().zip(r.allocations.iter().zip(&r.per_task_durations)) {
            println!("    {name:<10} {k:>2} cores  {d:7.1}s");
        }
    }
}
