//! Carves aligned GPU chunks out of a node, frees them again and shows the
//! chunk-count state the DP works on.

use actsched::dp::{dp_arrange, DpTask};
use actsched::gpu::{chunk_allocate, chunk_free, free_counts, Chunk, GpuOperator, PrevRule};

fn show(label: &str, free: &[Chunk]) {
    let list: Vec<String> = free.iter().map(|c| c.to_string()).collect();
    println!("{label:<22} free: {}", list.join(" "));
}

fn main() {
    let mut free = vec![Chunk::whole_node(0)];
    show("start", &free);
    let a = chunk_allocate(&mut free, 2, None).unwrap();
    let b = chunk_allocate(&mut free, 1, None).unwrap();
    let c = chunk_allocate(&mut free, 4, None).unwrap();
    show("after 2, 1, 4", &free);
    chunk_free(a, &mut free).unwrap();
    show("2 returned", &free);
    chunk_free(b, &mut free).unwrap();
    chunk_free(c, &mut free).unwrap();
    show("all returned", &free);

    // one node with devices 0..3 busy: a free 4-chunk only
    let masks = [0b1111_0000u8];
    let counts = free_counts(&masks);
    println!("\nfree chunk counts (1,2,4,8): {:?}", counts.0);
    let tasks = [DpTask::from_fn(&[1, 2, 4], |m| 12.0 / m as f64), DpTask::from_fn(&[1, 2], |m| 6.0 / m as f64)];
    let op = GpuOperator::new(counts, tasks.len(), PrevRule::Aligned);
    let r = dp_arrange(&tasks, &op).unwrap();
    println!("dp over chunk states: {:?} devices, total {:.1}s", r.allocations, r.total_duration);
}
