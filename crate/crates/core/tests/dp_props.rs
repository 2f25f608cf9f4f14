use proptest::prelude::*;

use actsched::dp::{dp_arrange, BasicOperator, DpError, DpOperator, DpTask};

/// A task with allowed units drawn from {1,2,4,8,16} and a monotone speedup.
fn task() -> impl Strategy<Value = DpTask> {
    (
        prop::sample::subsequence(vec![1u32, 2, 4, 8, 16], 1..=5),
        0.5f64..100.0,
        prop::collection::vec(0.0f64..=1.0, 5),
    )
        .prop_map(|(units, base, draws)| {
            let mut speedup = 0.0_f64;
            let durations = units
                .iter()
                .zip(draws)
                .map(|(&m, d)| {
                    let lo = (speedup / m as f64).min(1.0);
                    let e = if m == 1 { 1.0 } else { lo + d * (1.0 - lo) };
                    speedup = speedup.max(e * m as f64);
                    base / (e * m as f64)
                })
                .collect();
            DpTask::new(units, durations)
        })
}

/// Recursive enumeration of every tuple within `capacity`; durations summed
/// in task order.
fn best_tuple(tasks: &[DpTask], capacity: u32, acc: f64) -> Option<f64> {
    let Some((t, rest)) = tasks.split_first() else { return Some(acc) };
    let mut best: Option<f64> = None;
    for (&k, &d) in t.units.iter().zip(&t.durations) {
        if k > capacity {
            continue;
        }
        if let Some(v) = best_tuple(rest, capacity - k, acc + d) {
            if best.is_none_or(|b| v < b) {
                best = Some(v);
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_enumeration(tasks in prop::collection::vec(task(), 1..=4), capacity in 1u32..=16) {
        let dp = dp_arrange(&tasks, &BasicOperator::new(capacity));
        match best_tuple(&tasks, capacity, 0.0) {
            Some(v) => prop_assert_eq!(dp.unwrap().total_duration, v),
            None => prop_assert_eq!(dp, Err(DpError::Infeasible)),
        }
    }

    #[test]
    fn backtrace_is_consistent(tasks in prop::collection::vec(task(), 1..=5), capacity in 1u32..=24) {
        if let Ok(r) = dp_arrange(&tasks, &BasicOperator::new(capacity)) {
            prop_assert!(r.allocations.iter().sum::<u32>() <= capacity);
            let mut total = 0.0;
            for ((t, &k), &d) in tasks.iter().zip(&r.allocations).zip(&r.per_task_durations) {
                let i = t.units.iter().position(|&u| u == k);
                prop_assert!(i.is_some(), "{} not allowed", k);
                prop_assert_eq!(t.durations[i.unwrap()], d);
                total += d;
            }
            prop_assert_eq!(total, r.total_duration);
        }
    }

    #[test]
    fn less_capacity_never_helps(tasks in prop::collection::vec(task(), 1..=4), capacity in 2u32..=20) {
        let more = dp_arrange(&tasks, &BasicOperator::new(capacity));
        let less = dp_arrange(&tasks, &BasicOperator::new(capacity - 1));
        match (more, less) {
            (Ok(m), Ok(l)) => prop_assert!(l.total_duration >= m.total_duration),
            (Err(_), Ok(_)) => prop_assert!(false, "shrinking capacity made the instance feasible"),
            _ => {}
        }
    }
}

#[test]
fn worked_examples() {
    let linear = |base: f64, units: &[u32]| DpTask::from_fn(units, |m| base / m as f64);
    let r = dp_arrange(&[linear(8.0, &[1, 2, 4]), linear(4.0, &[1, 2, 4])], &BasicOperator::new(4)).unwrap();
    assert_eq!((r.total_duration, r.allocations.clone()), (6.0, vec![2, 2]));

    let t = DpTask::new(vec![1, 2, 4], vec![10.0, 10.0 / 1.5, 5.0]);
    let r = dp_arrange(&[t], &BasicOperator::new(4)).unwrap();
    assert_eq!((r.total_duration, r.allocations), (5.0, vec![4]));

    let one = DpTask::new(vec![1], vec![1.0]);
    assert_eq!(dp_arrange(&[one.clone(), one], &BasicOperator::new(1)), Err(DpError::Infeasible));
}

#[test]
fn basic_operator_primitives() {
    let op = BasicOperator::new(8);
    let specs: [&[u32]; 2] = [&[1, 2], &[1, 2]];
    assert!(op.is_valid(3, &specs));
    assert!(!op.is_valid(5, &specs));
    assert_eq!(op.prev(7, 4), Some(3));
}
