//! A per-minute API quota and a concurrency cap, driven by hand.

use actsched::managers::{basic_acquire, BasicOutcome, QuotaState};
use actsched::model::SimTime;

fn main() {
    let mut judge = QuotaState::quota(5, SimTime::from_secs(60.0));
    for t in [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 59.9, 60.0, 61.0] {
        let now = SimTime::from_secs(t);
        let out = basic_acquire(&mut judge, 1, now);
        println!("t={t:>5.1}s judge call: {out:?} (headroom {})", judge.headroom(now));
    }

    let mut search = QuotaState::concurrency(2);
    let now = SimTime::ZERO;
    let grants: Vec<BasicOutcome> = (0..3).map(|_| basic_acquire(&mut search, 1, now)).collect();
    println!("\nthree searches against a cap of two: {grants:?}");
    search.in_flight -= 1;
    println!("one finishes, retry: {:?}", basic_acquire(&mut search, 1, now));
}
