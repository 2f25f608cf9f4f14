use proptest::prelude::*;

use actsched::dp::{BasicOperator, DpOperator};
use actsched::managers::{BasicManager, Grant, ManagerError, Placement, PlacementProbe, ResourceManager};
use actsched::model::{Action, ElasticityProfile, ResourceTypeId, SimTime, UnitSpec};
use actsched::scheduler::{DurationHistory, InFlight, ScheduleDecision, Scheduler, SchedulerView};

const R: ResourceTypeId = ResourceTypeId(0);

/// Flat sub-pools that fill first-fit, standing in for a real topology.
struct MockPools {
    free: Vec<u32>,
}

struct MockProbe {
    left: Vec<u32>,
}

impl PlacementProbe for MockProbe {
    fn try_add(&mut self, _action: &Action, units: u32) -> Option<usize> {
        let p = self.left.iter().position(|&l| l >= units)?;
        self.left[p] -= units;
        Some(p)
    }
}

impl ResourceManager for MockPools {
    fn name(&self) -> &str {
        "mock"
    }

    fn probe(&self, _now: SimTime) -> Box<dyn PlacementProbe + '_> {
        Box::new(MockProbe { left: self.free.clone() })
    }

    fn partitions(&self) -> usize {
        self.free.len()
    }

    fn operator(&self, partition: usize, reserved: &[u32], _max_tasks: usize, _now: SimTime) -> Box<dyn DpOperator> {
        Box::new(BasicOperator::new(self.free[partition].saturating_sub(reserved.iter().sum())))
    }

    fn acquire(&mut self, _a: &Action, units: u32, partition: usize, _now: SimTime) -> Result<Grant, ManagerError> {
        let f = &mut self.free[partition];
        *f = f.checked_sub(units).ok_or(ManagerError::Unavailable { resource: "mock".into(), units })?;
        Ok(Grant { placement: Placement::Units { units }, overhead: 0.0, events: vec![] })
    }

    fn release(&mut self, _placement: &Placement, _now: SimTime) -> Result<(), ManagerError> {
        Ok(())
    }

    fn remaining(&self, _now: SimTime) -> u64 {
        self.free.iter().map(|&f| f as u64).sum()
    }
}

#[derive(Debug, Clone)]
struct Spec {
    units: Vec<u32>,
    scalable: bool,
    parallel: f64,
    base: f64,
}

fn spec() -> impl Strategy<Value = Spec> {
    (1usize..=5, any::<bool>(), 0.3f64..0.99, 1.0f64..100.0, 1u32..=3).prop_map(|(top, scalable, parallel, base, fixed)| {
        let units = if scalable { (0..top).map(|i| 1 << i).collect() } else { vec![fixed] };
        Spec { units, scalable, parallel, base }
    })
}

fn actions(specs: &[Spec]) -> Vec<Action> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let id = i as u64;
            let mut a = Action::new(id, id, R, UnitSpec::new(s.units.clone()).unwrap());
            a.submit_time = SimTime(id);
            if s.scalable {
                a.elasticity = ElasticityProfile::amdahl(R, &s.units, s.parallel);
                a.base_duration = Some(s.base);
            } else {
                a.est_duration = Some(s.base);
            }
            a
        })
        .collect()
}

fn decide(queue: &[Action], managers: &[Box<dyn ResourceManager>], running: &[f64], depth: usize) -> ScheduleDecision {
    let mut in_flight = InFlight::new();
    for (i, &r) in running.iter().enumerate() {
        in_flight.insert(10_000 + i as u64, R, 0, SimTime::from_secs(r));
    }
    let history = DurationHistory::new();
    let view = SchedulerView { now: SimTime::ZERO, managers, in_flight: &in_flight, history: &history };
    Scheduler::new(depth).schedule(queue, &view)
}

fn longest_prefix(queue: &[Action], free: &[u32]) -> usize {
    let mut probe = MockProbe { left: free.to_vec() };
    queue.iter().take_while(|a| probe.try_add(a, a.key_units().min_units()).is_some()).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decisions_hold_invariants(
        specs in prop::collection::vec(spec(), 1..20),
        free in prop::collection::vec(0u32..24, 1..=3),
        running in prop::collection::vec(0.1f64..50.0, 0..4),
        depth in 1usize..=3,
    ) {
        let queue = actions(&specs);
        let managers: Vec<Box<dyn ResourceManager>> = vec![Box::new(MockPools { free: free.clone() })];
        let d = decide(&queue, &managers, &running, depth);
        prop_assert_eq!(&d, &decide(&queue, &managers, &running, depth));

        // FCFS: candidates are the longest prefix that fits at minimum units
        prop_assert_eq!(d.candidates, longest_prefix(&queue, &free));
        let mut all: Vec<u64> = d.selected.iter().map(|s| s.action).chain(d.deferred.iter().copied()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..queue.len() as u64).collect::<Vec<_>>());

        // capacity per partition
        let mut used = vec![0u32; free.len()];
        for s in &d.selected {
            prop_assert!((s.action as usize) < d.candidates);
            prop_assert!(queue[s.action as usize].key_units().contains(s.key_units()));
            used[s.grants[0].partition] += s.key_units();
        }
        for (u, f) in used.iter().zip(&free) {
            prop_assert!(u <= f, "partition overcommitted: {:?} of {:?}", used, free);
        }

        for g in &d.groups {
            let picked: Vec<u64> = g.members.iter().copied().filter(|m| d.selected.iter().any(|s| s.action == *m)).collect();
            prop_assert_eq!(&picked[..], &g.members[..g.selected]);
            let Some(first) = g.objectives.iter().position(Option::is_some) else { continue };
            // accepted objectives strictly decrease; the first non-improvement ends the search
            let tried = &g.objectives[first..];
            let accepted = g.members.len() - first - g.selected + 1;
            let vals: Vec<f64> = tried[..accepted].iter().map(|o| o.unwrap()).collect();
            prop_assert!(vals.windows(2).all(|w| w[1] < w[0]), "{:?}", vals);
            match tried.get(accepted) {
                Some(Some(o)) => prop_assert!(*o >= vals[accepted - 1]),
                Some(None) => {}
                None => prop_assert_eq!(g.selected, 1),
            }
            prop_assert!(tried.len() <= accepted + 1);
        }
    }

    #[test]
    fn work_conserving(specs in prop::collection::vec(spec(), 1..12), cap in 1u32..16) {
        let queue = actions(&specs);
        let managers: Vec<Box<dyn ResourceManager>> = vec![Box::new(MockPools { free: vec![cap] })];
        let d = decide(&queue, &managers, &[], 2);
        if queue[0].key_units().min_units() <= cap {
            prop_assert!(!d.selected.is_empty());
        }
    }

    #[test]
    fn mock_and_real_pool_agree(specs in prop::collection::vec(spec(), 1..12), cap in 1u32..24, running in prop::collection::vec(0.1f64..20.0, 0..3)) {
        let queue = actions(&specs);
        let mock: Vec<Box<dyn ResourceManager>> = vec![Box::new(MockPools { free: vec![cap] })];
        let real: Vec<Box<dyn ResourceManager>> = vec![Box::new(BasicManager::concurrency("pool", cap))];
        prop_assert_eq!(decide(&queue, &mock, &running, 2), decide(&queue, &real, &running, 2));
    }
}

#[test]
fn third_candidate_is_evicted() {
    // two long scalable actions and a short one: deferring the third lets
    // the first two take two units each
    let specs = [
        Spec { units: vec![1, 2], scalable: true, parallel: 1.0, base: 8.0 },
        Spec { units: vec![1, 2], scalable: true, parallel: 1.0, base: 8.0 },
        Spec { units: vec![1, 2], scalable: true, parallel: 1.0, base: 8.0 },
    ];
    let queue = actions(&specs);
    let managers: Vec<Box<dyn ResourceManager>> = vec![Box::new(MockPools { free: vec![4] })];
    let d = decide(&queue, &managers, &[], 2);
    let picked: Vec<(u64, u32)> = d.selected.iter().map(|s| (s.action, s.key_units())).collect();
    assert_eq!(picked, vec![(0, 2), (1, 2)]);
    assert_eq!(d.deferred, vec![2]);
    assert_eq!(d.groups[0].evictions(), 1);
}
