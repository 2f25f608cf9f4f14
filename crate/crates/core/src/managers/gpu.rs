use std::collections::{BTreeMap, BTreeSet};

use crate::dp::DpOperator;
use crate::gpu::{
    carve, free_counts, level_for, pick_chunk, place_all, sort_chunks, split_to, chunk_free, Chunk, ChunkCounts,
    GpuOperator, PrevRule,
};
use crate::model::{Action, ActionId, ServiceSpec, SimTime, GPUS_PER_NODE};

use super::{Grant, ManagerError, ManagerEvent, Placement, PlacementProbe, ResourceManager};

/// Restore cost of a service at DoP `d` defaults to this share of its mean
/// single-GPU duration, divided by `d`.
pub const DEFAULT_RESTORE_FRACTION: f64 = 0.35;

/// Cache key: each DoP of a service is cached separately.
fn cache_key(service: &str, dop: u32) -> String {
    format!("{service}@{dop}")
}

/// GPU manager with evict-on-execution service caching.
#[derive(Debug, Clone)]
pub struct GpuManager {
    name: String,
    nodes: usize,
    free: Vec<Chunk>,
    busy: BTreeMap<ActionId, Chunk>,
    catalog: BTreeMap<String, ServiceSpec>,
    /// Service states backed up in host memory at start-up.
    backups: BTreeSet<String>,
}

impl GpuManager {
    pub fn new(name: &str, nodes: usize, services: &[ServiceSpec]) -> GpuManager {
        let catalog: BTreeMap<String, ServiceSpec> = services.iter().map(|s| (s.name.clone(), s.clone())).collect();
        let backups = services.iter().flat_map(|s| s.dops.iter().map(|&d| cache_key(&s.name, d))).collect();
        GpuManager {
            name: name.to_string(),
            nodes,
            free: (0..nodes).map(Chunk::whole_node).collect(),
            busy: BTreeMap::new(),
            catalog,
            backups,
        }
    }

    pub fn free_chunks(&self) -> &[Chunk] {
        &self.free
    }

    pub fn busy_chunks(&self) -> impl Iterator<Item = (&ActionId, &Chunk)> {
        self.busy.iter()
    }

    pub fn free_masks(&self) -> Vec<u8> {
        let mut masks = vec![0u8; self.nodes];
        for c in &self.free {
            masks[c.node] |= c.mask();
        }
        masks
    }

    pub fn restore_cost(&self, service: &str, dop: u32) -> Result<f64, ManagerError> {
        let spec = self.catalog.get(service).ok_or_else(|| ManagerError::UnknownService(service.to_string()))?;
        Ok(spec
            .restore_cost
            .get(&dop)
            .copied()
            .unwrap_or(DEFAULT_RESTORE_FRACTION * spec.mean_duration / dop as f64))
    }

    /// Builds a free `level` chunk out of smaller free fragments, evicting
    /// whatever they cache. Picks the block whose newest fragment is oldest.
    fn merge_fragments(&mut self, level: u8, events: &mut Vec<ManagerEvent>) -> Option<Chunk> {
        let size = 1u8 << level;
        let block = ((1u16 << size) - 1) as u8;
        let masks = self.free_masks();
        let mut best: Option<(SimTime, usize, u8)> = None;
        for (node, &mask) in masks.iter().enumerate() {
            let mut start = 0u8;
            while start < GPUS_PER_NODE as u8 {
                let m = block << start;
                if mask & m == m {
                    let newest = self
                        .free
                        .iter()
                        .filter(|c| c.node == node && c.mask() & m != 0)
                        .map(|c| c.last_used)
                        .max()
                        .unwrap_or_default();
                    if best.is_none_or(|(t, _, _)| newest < t) {
                        best = Some((newest, node, start));
                    }
                }
                start += size;
            }
        }
        let (_, node, start) = best?;
        let m = block << start;
        let mut last_used = SimTime::ZERO;
        self.free.retain(|c| {
            if c.node != node || c.mask() & m == 0 {
                return true;
            }
            if let Some(s) = &c.cached_service {
                events.push(ManagerEvent::Evict { node, start: c.start, end: c.end(), service: s.clone() });
            }
            last_used = last_used.max(c.last_used);
            false
        });
        Some(Chunk { last_used, ..Chunk::new(node, start, level) })
    }
}

struct GpuProbe {
    masks: Vec<u8>,
    accepted: Vec<u32>,
}

impl PlacementProbe for GpuProbe {
    fn try_add(&mut self, _action: &Action, units: u32) -> Option<usize> {
        self.accepted.push(units);
        if place_all(&self.masks, &self.accepted) {
            Some(0)
        } else {
            self.accepted.pop();
            None
        }
    }
}

impl ResourceManager for GpuManager {
    fn name(&self) -> &str {
        &self.name
    }

    fn probe(&self, _now: SimTime) -> Box<dyn PlacementProbe + '_> {
        Box::new(GpuProbe { masks: self.free_masks(), accepted: Vec::new() })
    }

    fn operator(&self, _partition: usize, reserved: &[u32], max_tasks: usize, _now: SimTime) -> Box<dyn DpOperator> {
        let mut available = free_counts(&self.free_masks());
        let mut held = ChunkCounts::default();
        for &u in reserved {
            if let Ok(level) = level_for(u) {
                held.0[level as usize] += 1;
            }
        }
        available = carve(available, held).unwrap_or_default();
        Box::new(GpuOperator::new(available, max_tasks, PrevRule::Aligned))
    }

    fn acquire(&mut self, action: &Action, units: u32, _partition: usize, now: SimTime) -> Result<Grant, ManagerError> {
        let level = level_for(units)?;
        let key = action.service_id.as_deref().map(|s| cache_key(s, units));
        let mut events = Vec::new();

        let chunk = match pick_chunk(&self.free, units, key.as_deref()) {
            Ok(idx) => {
                let chosen = self.free.swap_remove(idx);
                if chosen.level > level {
                    if let Some(s) = &chosen.cached_service {
                        events.push(ManagerEvent::Evict {
                            node: chosen.node,
                            start: chosen.start,
                            end: chosen.end(),
                            service: s.clone(),
                        });
                    }
                }
                split_to(chosen, level, &mut self.free)
            }
            Err(_) => self
                .merge_fragments(level, &mut events)
                .ok_or_else(|| ManagerError::Unavailable { resource: self.name.clone(), units })?,
        };
        sort_chunks(&mut self.free);

        let mut overhead = 0.0;
        let mut chunk = chunk;
        if key.is_some() && chunk.cached_service != key {
            if let Some(old) = chunk.cached_service.take() {
                events.push(ManagerEvent::Evict { node: chunk.node, start: chunk.start, end: chunk.end(), service: old });
            }
            let service = action.service_id.as_deref().unwrap();
            overhead = self.restore_cost(service, units)?;
            let k = key.clone().unwrap();
            debug_assert!(self.backups.contains(&k) || !self.catalog.contains_key(service));
            events.push(ManagerEvent::Restore { node: chunk.node, start: chunk.start, end: chunk.end(), service: k, cost: overhead });
        }
        chunk.cached_service = key;
        chunk.last_used = now;
        self.busy.insert(action.id, chunk.clone());
        Ok(Grant { placement: Placement::Gpu { chunk, owner: action.id }, overhead, events })
    }

    fn release(&mut self, placement: &Placement, _now: SimTime) -> Result<(), ManagerError> {
        let Placement::Gpu { owner, .. } = placement else {
            return Err(ManagerError::ForeignPlacement);
        };
        let chunk = self.busy.remove(owner).ok_or(ManagerError::DoubleRelease)?;
        chunk_free(chunk, &mut self.free)?;
        Ok(())
    }

    fn remaining(&self, _now: SimTime) -> u64 {
        self.free.iter().map(|c| c.size() as u64).sum()
    }
}
