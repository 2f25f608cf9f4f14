//! One scheduler invocation over a queue of CPU actions: which ones start,
//! at what width, and which are held back.

use actsched::managers::{CpuManager, ResourceManager};
use actsched::model::{Action, CpuNodeSpec, ElasticityProfile, ResourceTypeId, SimTime, UnitSpec};
use actsched::scheduler::{DurationHistory, InFlight, Scheduler, SchedulerView};

fn main() {
    let cpu = ResourceTypeId(0);
    let nodes = [CpuNodeSpec { numa: vec![4, 4], memory_mb: 65536 }];
    let managers: Vec<Box<dyn ResourceManager>> = vec![Box::new(CpuManager::new("cpu", &nodes, 0.0))];

    let units = [1, 2, 4, 8];
    let queue: Vec<Action> = [(60.0, 0.95), (45.0, 0.9), (3.0, 0.2), (90.0, 0.97), (30.0, 0.8)]
        .iter()
        .enumerate()
        .map(|(i, &(base, p))| {
            let mut a = Action::new(i as u64, i as u64, cpu, UnitSpec::new(units.to_vec()).unwrap());
            a.elasticity = ElasticityProfile::amdahl(cpu, &units, p);
            a.base_duration = Some(base);
            a.submit_time = SimTime::from_secs(i as f64);
            a
        })
        .collect();

    let in_flight = InFlight::new();
    let history = DurationHistory::new();
    let view = SchedulerView { now: SimTime::from_secs(5.0), managers: &managers, in_flight: &in_flight, history: &history };
    let d = Scheduler::new(2).schedule(&queue, &view);

    println!("{} candidates fit at minimum width", d.candidates);
    for s in &d.selected {
        println!("  start action {} on {} cores", s.action, s.key_units());
    }
    println!("  deferred: {:?}", d.deferred);
    for g in &d.groups {
        println!("  group {:?}/{}: prefix objectives {:?}", g.resource, g.partition, g.objectives);
    }
}
