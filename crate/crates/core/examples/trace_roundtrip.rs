//! Generates a trace, writes it as NDJSON and reads it back.

use actsched::scenarios;
use actsched::sim::{gen_trace, measured_active_ratio, read_trace, trace_to_string};

fn main() {
    let s = scenarios::api();
    let trace = gen_trace(&s.params, 1).unwrap();
    let text = trace_to_string(&trace);
    let back = read_trace(text.as_bytes()).unwrap();
    assert_eq!(back, trace);

    println!("{} trajectories, {} bytes of NDJSON", trace.len(), text.len());
    println!("active ratio {:.3} (target {:.3})", measured_active_ratio(&trace), s.params.active_ratio);
    println!("first line: {}", text.lines().next().unwrap_or_default().chars().take(160).collect::<String>());
}
