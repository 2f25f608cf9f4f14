//! Chunk algebra for 8-GPU nodes.
//!
//! A chunk is an aligned run of `2^level` devices (`level` in 0..=3) whose
//! start is a multiple of its size. Nodes start as one free level-3 chunk;
//! allocation splits into halves, release coalesces buddies when no cached
//! service would be lost.

use std::fmt;

use thiserror::Error;

use crate::dp::DpOperator;
use crate::model::{SimTime, GPUS_PER_NODE};

pub const LEVELS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpuError {
    #[error("chunk count {count} exceeds maximum {max} at level {level}")]
    CountOutOfRange { level: usize, count: u32, max: u32 },
    #[error("state index {index} outside 0..{states}")]
    IndexOutOfRange { index: usize, states: usize },
    #[error("GPU request must be 1, 2, 4 or 8 devices, got {0}")]
    BadRequest(u32),
    #[error("no free chunk of level {level} or larger")]
    Unavailable { level: u8 },
    #[error("chunk {0} overlaps free space (double free)")]
    DoubleFree(Chunk),
}

/// Smallest level whose chunk holds `units` devices.
pub fn level_for(units: u32) -> Result<u8, GpuError> {
    match units {
        1 => Ok(0),
        2 => Ok(1),
        3..=4 => Ok(2),
        5..=8 => Ok(3),
        _ => Err(GpuError::BadRequest(units)),
    }
}

fn exact_level(units: u32) -> Result<usize, GpuError> {
    match units {
        1 => Ok(0),
        2 => Ok(1),
        4 => Ok(2),
        8 => Ok(3),
        _ => Err(GpuError::BadRequest(units)),
    }
}

/// Free chunk counts `(a, b, c, d)` for sizes 1, 2, 4, 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ChunkCounts(pub [u32; LEVELS]);

impl ChunkCounts {
    pub fn new(a: u32, b: u32, c: u32, d: u32) -> ChunkCounts {
        ChunkCounts([a, b, c, d])
    }

    /// Devices represented by these chunks.
    pub fn devices(&self) -> u32 {
        self.0.iter().enumerate().map(|(l, &n)| n << l).sum()
    }

    pub fn chunks(&self) -> u32 {
        self.0.iter().sum()
    }

    fn add(&mut self, other: &ChunkCounts) {
        for l in 0..LEVELS {
            self.0[l] += other.0[l];
        }
    }
}

impl fmt::Display for ChunkCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "({a},{b},{c},{d})")
    }
}

/// Mixed-radix encode of `counts` under `maxima` `(N1, N2, N4, N8)`.
pub fn encode_state(counts: ChunkCounts, maxima: ChunkCounts) -> Result<usize, GpuError> {
    let mut index = 0usize;
    let mut radix = 1usize;
    for level in 0..LEVELS {
        let (count, max) = (counts.0[level], maxima.0[level]);
        if count > max {
            return Err(GpuError::CountOutOfRange { level, count, max });
        }
        index += radix * count as usize;
        radix *= max as usize + 1;
    }
    Ok(index)
}

/// Number of distinct encoded states under `maxima`.
pub fn state_count(maxima: ChunkCounts) -> usize {
    maxima.0.iter().map(|&n| n as usize + 1).product()
}

/// Inverse of [`encode_state`].
pub fn decode_state(index: usize, maxima: ChunkCounts) -> Result<ChunkCounts, GpuError> {
    let states = state_count(maxima);
    if index >= states {
        return Err(GpuError::IndexOutOfRange { index, states });
    }
    let mut rest = index;
    let mut counts = [0u32; LEVELS];
    for (count, &max) in counts.iter_mut().zip(&maxima.0) {
        let radix = max as usize + 1;
        *count = (rest % radix) as u32;
        rest /= radix;
    }
    Ok(ChunkCounts(counts))
}

/// How a request is carved out of a chunk multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrevRule {
    /// Greedy large-to-small decomposition, no splitting.
    Pseudocode,
    /// Greedy decomposition, then one split of the smallest chunk larger
    /// than the residual need.
    #[default]
    GreedySplit,
    /// One chunk of exactly the requested size, splitting the smallest larger
    /// chunk when none is free. Never combines chunks, so every transition is
    /// a legal physical placement.
    Aligned,
}

/// Splits a chunk of `2^from` devices after `used` of its leading devices
/// are taken, crediting the aligned remainder pieces.
fn credit_remainder(counts: &mut ChunkCounts, from: usize, used: u32) {
    let remainder = (1u32 << from) - used;
    for level in 0..LEVELS {
        if remainder & (1 << level) != 0 {
            counts.0[level] += 1;
        }
    }
}

/// Chunks left after a task takes `k` devices from `counts`, or `None`.
pub fn gpu_prev(counts: ChunkCounts, k: u32, rule: PrevRule) -> Result<Option<ChunkCounts>, GpuError> {
    let want = exact_level(k)?;
    let mut left = counts;
    if rule == PrevRule::Aligned {
        if left.0[want] > 0 {
            left.0[want] -= 1;
            return Ok(Some(left));
        }
        let Some(from) = (want + 1..LEVELS).find(|&l| left.0[l] > 0) else {
            return Ok(None);
        };
        left.0[from] -= 1;
        credit_remainder(&mut left, from, k);
        return Ok(Some(left));
    }

    let mut need = k;
    for level in (0..LEVELS).rev() {
        let size = 1u32 << level;
        let used = left.0[level].min(need / size);
        left.0[level] -= used;
        need -= used * size;
    }
    if need == 0 {
        return Ok(Some(left));
    }
    if rule == PrevRule::Pseudocode {
        return Ok(None);
    }
    let Some(from) = (0..LEVELS).find(|&l| (1u32 << l) > need && left.0[l] > 0) else {
        return Ok(None);
    };
    left.0[from] -= 1;
    credit_remainder(&mut left, from, need);
    Ok(Some(left))
}

/// Carves `wanted` out of `available` one chunk at a time, largest first.
/// Optimal for power-of-two sizes.
pub fn carve(available: ChunkCounts, wanted: ChunkCounts) -> Option<ChunkCounts> {
    let mut left = available;
    for level in (0..LEVELS).rev() {
        for _ in 0..wanted.0[level] {
            left = gpu_prev(left, 1 << level, PrevRule::Aligned).ok()??;
        }
    }
    Some(left)
}

/// An aligned run of devices on one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub node: usize,
    pub start: u8,
    pub level: u8,
    pub cached_service: Option<String>,
    pub last_used: SimTime,
}

impl Chunk {
    pub fn new(node: usize, start: u8, level: u8) -> Chunk {
        debug_assert!(level < LEVELS as u8 && start.is_multiple_of(1 << level), "illegal chunk");
        Chunk { node, start, level, cached_service: None, last_used: SimTime::ZERO }
    }

    pub fn whole_node(node: usize) -> Chunk {
        Chunk::new(node, 0, 3)
    }

    pub fn caching(mut self, service: &str, at: SimTime) -> Chunk {
        self.cached_service = Some(service.to_string());
        self.last_used = at;
        self
    }

    pub fn size(&self) -> u8 {
        1 << self.level
    }

    pub fn end(&self) -> u8 {
        self.start + self.size()
    }

    pub fn is_legal(&self) -> bool {
        self.level < LEVELS as u8 && self.start.is_multiple_of(self.size()) && self.end() <= GPUS_PER_NODE as u8
    }

    /// Bitmask of covered devices.
    pub fn mask(&self) -> u8 {
        (((1u16 << self.size()) - 1) << self.start) as u8
    }

    fn buddy_start(&self) -> u8 {
        self.start ^ self.size()
    }
}

impl fmt::Display for Chunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}:({},{})", self.node, self.start, self.end())
    }
}

/// Halves `chunk` until it reaches `level`; returns the lowest-start piece
/// and pushes the siblings (uncached) onto `free`.
pub fn split_to(chunk: Chunk, level: u8, free: &mut Vec<Chunk>) -> Chunk {
    let mut cur = chunk;
    if cur.level > level {
        cur.cached_service = None;
    }
    while cur.level > level {
        let child = cur.level - 1;
        let upper = Chunk { start: cur.start + (1 << child), level: child, ..cur.clone() };
        free.push(upper);
        cur.level = child;
    }
    cur
}

/// Order in which same-level candidates are preferred: cache affinity, then
/// uncached, then least recently used, then lowest start, then lowest node.
fn preference(c: &Chunk, service: Option<&str>) -> (u8, bool, bool, SimTime, u8, usize) {
    let hit = service.is_some() && c.cached_service.as_deref() == service;
    (c.level, !hit, c.cached_service.is_some(), c.last_used, c.start, c.node)
}

/// Index of the free chunk an `m`-device request should take.
pub fn pick_chunk(free: &[Chunk], units: u32, service: Option<&str>) -> Result<usize, GpuError> {
    let level = level_for(units)?;
    free.iter()
        .enumerate()
        .filter(|(_, c)| c.level >= level)
        .min_by_key(|(_, c)| preference(c, service))
        .map(|(i, _)| i)
        .ok_or(GpuError::Unavailable { level })
}

/// Takes a chunk for `units` devices out of `free`, splitting as needed.
pub fn chunk_allocate(free: &mut Vec<Chunk>, units: u32, service: Option<&str>) -> Result<Chunk, GpuError> {
    let level = level_for(units)?;
    let idx = pick_chunk(free, units, service)?;
    let chosen = free.swap_remove(idx);
    let out = split_to(chosen, level, free);
    sort_chunks(free);
    Ok(out)
}

/// Returns `chunk` to `free`, coalescing uncached buddies.
pub fn chunk_free(chunk: Chunk, free: &mut Vec<Chunk>) -> Result<(), GpuError> {
    if free.iter().any(|c| c.node == chunk.node && c.mask() & chunk.mask() != 0) {
        return Err(GpuError::DoubleFree(chunk));
    }
    let mut cur = chunk;
    while cur.level < 3 && cur.cached_service.is_none() {
        let buddy = cur.buddy_start();
        let Some(pos) = free.iter().position(|c| {
            c.node == cur.node && c.level == cur.level && c.start == buddy && c.cached_service.is_none()
        }) else {
            break;
        };
        let other = free.swap_remove(pos);
        cur = Chunk {
            start: cur.start.min(other.start),
            level: cur.level + 1,
            last_used: cur.last_used.max(other.last_used),
            ..cur
        };
    }
    free.push(cur);
    sort_chunks(free);
    Ok(())
}

pub fn sort_chunks(free: &mut [Chunk]) {
    free.sort_by_key(|c| (c.node, c.start));
}

/// Maximal aligned free blocks in an 8-device mask.
pub fn maximal_blocks(free_mask: u8) -> ChunkCounts {
    let mut counts = ChunkCounts::default();
    let mut covered = 0u8;
    for level in (0..LEVELS).rev() {
        let size = 1u8 << level;
        let block = (((1u16 << size) - 1) as u8, size);
        let mut start = 0u8;
        while start < GPUS_PER_NODE as u8 {
            let m = block.0 << start;
            if free_mask & m == m && covered & m == 0 {
                counts.0[level] += 1;
                covered |= m;
            }
            start += block.1;
        }
    }
    counts
}

/// Aggregated maximal free blocks over several nodes.
pub fn free_counts(masks: &[u8]) -> ChunkCounts {
    let mut total = ChunkCounts::default();
    for &m in masks {
        total.add(&maximal_blocks(m));
    }
    total
}

/// Finds an aligned fully-free block of `level` in `mask`, preferring the
/// one inside the smallest maximal free block.
pub fn best_fit_block(free_mask: u8, level: u8) -> Option<u8> {
    let size = 1u8 << level;
    let block = ((1u16 << size) - 1) as u8;
    let mut best: Option<(u8, u8)> = None;
    let mut start = 0u8;
    while start < GPUS_PER_NODE as u8 {
        let m = block << start;
        if free_mask & m == m {
            // size of the largest aligned free block containing this one
            let mut enclosing = level;
            while enclosing < 3 {
                let up = enclosing + 1;
                let s = 1u8 << up;
                let base = start - start % s;
                let um = (((1u16 << s) - 1) as u8) << base;
                if free_mask & um != um {
                    break;
                }
                enclosing = up;
            }
            if best.is_none_or(|(e, _)| enclosing < e) {
                best = Some((enclosing, start));
            }
        }
        start += size;
    }
    best.map(|(_, s)| s)
}

/// Whether `requests` (device counts) can all be placed on nodes with the
/// given free masks. Places largest first, best fit.
pub fn place_all(masks: &[u8], requests: &[u32]) -> bool {
    let mut masks = masks.to_vec();
    let mut sorted: Vec<u32> = requests.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    for units in sorted {
        let Ok(level) = level_for(units) else { return false };
        let mut best: Option<(u8, usize, u8)> = None;
        for (node, &m) in masks.iter().enumerate() {
            if let Some(start) = best_fit_block(m, level) {
                let enclosing = maximal_enclosing(m, start, level);
                if best.is_none_or(|(e, _, _)| enclosing < e) {
                    best = Some((enclosing, node, start));
                }
            }
        }
        let Some((_, node, start)) = best else { return false };
        let size = 1u8 << level;
        masks[node] &= !((((1u16 << size) - 1) as u8) << start);
    }
    true
}

fn maximal_enclosing(free_mask: u8, start: u8, level: u8) -> u8 {
    let mut enclosing = level;
    while enclosing < 3 {
        let s = 1u8 << (enclosing + 1);
        let base = start - start % s;
        let um = (((1u16 << s) - 1) as u8) << base;
        if free_mask & um != um {
            break;
        }
        enclosing += 1;
    }
    enclosing
}

/// DP operator whose states are encoded chunk multisets.
#[derive(Debug, Clone)]
pub struct GpuOperator {
    maxima: ChunkCounts,
    available: ChunkCounts,
    rule: PrevRule,
}

impl GpuOperator {
    /// `available` holds the free chunk counts; state maxima cover every
    /// multiset reachable by splitting them, capped at `max_tasks` chunks
    /// per size.
    pub fn new(available: ChunkCounts, max_tasks: usize, rule: PrevRule) -> GpuOperator {
        let devices = available.devices();
        let cap = max_tasks.max(1) as u32;
        let maxima = ChunkCounts([
            devices.min(cap),
            (devices / 2).min(cap),
            (devices / 4).min(cap),
            available.0[3].min(cap),
        ]);
        GpuOperator { maxima, available, rule }
    }

    pub fn with_maxima(available: ChunkCounts, maxima: ChunkCounts, rule: PrevRule) -> GpuOperator {
        GpuOperator { maxima, available, rule }
    }

    pub fn maxima(&self) -> ChunkCounts {
        self.maxima
    }

    pub fn decode(&self, state: usize) -> Option<ChunkCounts> {
        decode_state(state, self.maxima).ok()
    }
}

impl DpOperator for GpuOperator {
    /// Encoded chunk counts of every task's minimum request, one chunk each.
    fn start(&self, specs: &[&[u32]]) -> usize {
        let mut counts = ChunkCounts::default();
        for s in specs {
            if let Some(&min) = s.first() {
                if let Ok(level) = exact_level(min) {
                    counts.0[level] += 1;
                }
            }
        }
        encode_state(counts, self.maxima).unwrap_or(0)
    }

    fn end(&self, _specs: &[&[u32]]) -> usize {
        state_count(self.maxima) - 1
    }

    fn prev(&self, state: usize, units: u32) -> Option<usize> {
        let counts = decode_state(state, self.maxima).ok()?;
        let left = gpu_prev(counts, units, self.rule).ok()??;
        encode_state(left, self.maxima).ok()
    }

    fn is_valid(&self, state: usize, _specs: &[&[u32]]) -> bool {
        decode_state(state, self.maxima).is_ok()
    }

    fn admits(&self, state: usize) -> bool {
        decode_state(state, self.maxima).is_ok_and(|wanted| carve(self.available, wanted).is_some())
    }

    fn ordered(&self) -> bool {
        false
    }
}
