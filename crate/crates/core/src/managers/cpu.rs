use std::collections::{BTreeMap, BTreeSet};

use crate::dp::{BasicOperator, DpOperator};
use crate::model::{Action, CpuNodeSpec, SimTime, TrajectoryId};

use super::{Grant, ManagerError, ManagerEvent, Placement, PlacementProbe, ResourceManager};

/// One CPU node: cores grouped by NUMA domain, plus trajectory memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CpuNodeState {
    pub id: usize,
    pub numa_domains: Vec<Vec<u32>>,
    pub free_cores: BTreeSet<u32>,
    pub memory_total: u64,
    pub free_memory: u64,
    pub trajectory_reservations: BTreeMap<TrajectoryId, u64>,
}

impl CpuNodeState {
    pub fn new(id: usize, spec: &CpuNodeSpec) -> CpuNodeState {
        let mut next = 0u32;
        let numa_domains: Vec<Vec<u32>> = spec
            .numa
            .iter()
            .map(|&n| {
                let cores = (next..next + n).collect();
                next += n;
                cores
            })
            .collect();
        CpuNodeState {
            id,
            free_cores: (0..next).collect(),
            numa_domains,
            memory_total: spec.memory_mb,
            free_memory: spec.memory_mb,
            trajectory_reservations: BTreeMap::new(),
        }
    }

    pub fn free_count(&self) -> u32 {
        self.free_cores.len() as u32
    }

    fn free_in(&self, domain: usize) -> Vec<u32> {
        self.numa_domains[domain].iter().copied().filter(|c| self.free_cores.contains(c)).collect()
    }
}

/// Node for a trajectory's first action: enough free cores for the action and
/// enough free memory for the whole trajectory, most free memory wins, ties
/// go to the lowest node id.
pub fn cpu_place_trajectory(nodes: &[CpuNodeState], memory: u64, min_cores: u32) -> Option<usize> {
    nodes
        .iter()
        .filter(|n| n.free_count() >= min_cores && n.free_memory >= memory)
        .max_by_key(|n| (n.free_memory, std::cmp::Reverse(n.id)))
        .map(|n| n.id)
}

/// Takes `m` cores, preferring a single NUMA domain.
pub fn cpu_allocate_cores(node: &mut CpuNodeState, m: u32) -> Result<Vec<u32>, ManagerError> {
    if node.free_count() < m {
        return Err(ManagerError::Unavailable { resource: format!("cores on node {}", node.id), units: m });
    }
    let mut domains: Vec<(usize, Vec<u32>)> = (0..node.numa_domains.len()).map(|d| (d, node.free_in(d))).collect();
    // most free first, lower domain index on ties
    domains.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let mut picked = Vec::with_capacity(m as usize);
    if domains[0].1.len() >= m as usize {
        picked.extend_from_slice(&domains[0].1[..m as usize]);
    } else {
        for (_, free) in &domains {
            let take = (m as usize - picked.len()).min(free.len());
            picked.extend_from_slice(&free[..take]);
            if picked.len() == m as usize {
                break;
            }
        }
    }
    for c in &picked {
        node.free_cores.remove(c);
    }
    Ok(picked)
}

/// CPU manager with allocate-on-execution cores and per-trajectory memory.
#[derive(Debug, Clone)]
pub struct CpuManager {
    name: String,
    nodes: Vec<CpuNodeState>,
    homes: BTreeMap<TrajectoryId, usize>,
    overhead: f64,
}

impl CpuManager {
    pub fn new(name: &str, nodes: &[CpuNodeSpec], overhead: f64) -> CpuManager {
        CpuManager {
            name: name.to_string(),
            nodes: nodes.iter().enumerate().map(|(i, n)| CpuNodeState::new(i, n)).collect(),
            homes: BTreeMap::new(),
            overhead,
        }
    }

    pub fn nodes(&self) -> &[CpuNodeState] {
        &self.nodes
    }

    pub fn home_of(&self, trajectory: TrajectoryId) -> Option<usize> {
        self.homes.get(&trajectory).copied()
    }
}

struct CpuProbe<'a> {
    manager: &'a CpuManager,
    free_cores: Vec<u32>,
    free_memory: Vec<u64>,
    tentative: BTreeMap<TrajectoryId, usize>,
}

impl PlacementProbe for CpuProbe<'_> {
    fn try_add(&mut self, action: &Action, units: u32) -> Option<usize> {
        let traj = action.trajectory_id;
        let home = self.manager.homes.get(&traj).or(self.tentative.get(&traj)).copied();
        let node = match home {
            Some(n) => n,
            None => {
                let fits = |n: usize| self.free_cores[n] >= units && self.free_memory[n] >= action.memory_mb;
                let n = match action.node_pin {
                    Some(p) if p < self.free_cores.len() && fits(p) => p,
                    Some(_) => return None,
                    None => (0..self.free_cores.len())
                        .filter(|&n| fits(n))
                        .max_by_key(|&n| (self.free_memory[n], std::cmp::Reverse(n)))?,
                };
                self.free_memory[n] -= action.memory_mb;
                self.tentative.insert(traj, n);
                n
            }
        };
        if self.free_cores[node] < units {
            return None;
        }
        self.free_cores[node] -= units;
        Some(node)
    }
}

impl ResourceManager for CpuManager {
    fn name(&self) -> &str {
        &self.name
    }

    fn probe(&self, _now: SimTime) -> Box<dyn PlacementProbe + '_> {
        Box::new(CpuProbe {
            manager: self,
            free_cores: self.nodes.iter().map(CpuNodeState::free_count).collect(),
            free_memory: self.nodes.iter().map(|n| n.free_memory).collect(),
            tentative: BTreeMap::new(),
        })
    }

    fn partitions(&self) -> usize {
        self.nodes.len()
    }

    fn home_partition(&self, action: &Action) -> usize {
        if let Some(n) = self.homes.get(&action.trajectory_id).copied().or(action.node_pin) {
            return n;
        }
        self.nodes.iter().max_by_key(|n| (n.free_memory, std::cmp::Reverse(n.id))).map_or(0, |n| n.id)
    }

    fn operator(&self, partition: usize, reserved: &[u32], _max_tasks: usize, _now: SimTime) -> Box<dyn DpOperator> {
        let held: u32 = reserved.iter().sum();
        Box::new(BasicOperator::new(self.nodes[partition].free_count().saturating_sub(held)))
    }

    fn acquire(&mut self, action: &Action, units: u32, partition: usize, _now: SimTime) -> Result<Grant, ManagerError> {
        let traj = action.trajectory_id;
        let mut events = Vec::new();
        match self.homes.get(&traj).copied() {
            Some(home) if home != partition => {
                return Err(ManagerError::WrongNode { trajectory: traj, home, requested: partition })
            }
            Some(_) => {}
            None => {
                let node = self.nodes.get_mut(partition).ok_or(ManagerError::TrajectoryUnplaceable(traj))?;
                if node.free_memory < action.memory_mb || node.free_count() < units {
                    return Err(ManagerError::TrajectoryUnplaceable(traj));
                }
                node.free_memory -= action.memory_mb;
                node.trajectory_reservations.insert(traj, action.memory_mb);
                self.homes.insert(traj, partition);
                events.push(ManagerEvent::PlaceTrajectory { trajectory: traj, node: partition, memory_mb: action.memory_mb });
            }
        }
        let cores = cpu_allocate_cores(&mut self.nodes[partition], units)?;
        Ok(Grant { placement: Placement::Cpu { node: partition, cores }, overhead: self.overhead, events })
    }

    fn release(&mut self, placement: &Placement, _now: SimTime) -> Result<(), ManagerError> {
        let Placement::Cpu { node, cores } = placement else {
            return Err(ManagerError::ForeignPlacement);
        };
        let state = self.nodes.get_mut(*node).ok_or(ManagerError::ForeignPlacement)?;
        if cores.iter().any(|c| state.free_cores.contains(c)) {
            return Err(ManagerError::DoubleRelease);
        }
        state.free_cores.extend(cores.iter().copied());
        Ok(())
    }

    fn remaining(&self, _now: SimTime) -> u64 {
        self.nodes.iter().map(|n| n.free_count() as u64).sum()
    }

    fn trajectory_finished(&mut self, trajectory: TrajectoryId) -> Vec<ManagerEvent> {
        let Some(node) = self.homes.remove(&trajectory) else { return vec![] };
        let state = &mut self.nodes[node];
        let memory_mb = state.trajectory_reservations.remove(&trajectory).unwrap_or(0);
        state.free_memory += memory_mb;
        vec![ManagerEvent::ReleaseTrajectory { trajectory, node, memory_mb }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ResourceTypeId, UnitSpec};

    fn node(id: usize, numa: Vec<u32>, memory: u64) -> CpuNodeState {
        CpuNodeState::new(id, &CpuNodeSpec { numa, memory_mb: memory })
    }

    #[test]
    fn place_by_most_free_memory() {
        assert_eq!(cpu_place_trajectory(&[node(0, vec![4], 100), node(1, vec![4], 50)], 10, 1), Some(0));
        assert_eq!(cpu_place_trajectory(&[node(0, vec![4], 50), node(1, vec![4], 100)], 10, 1), Some(1));
        assert_eq!(cpu_place_trajectory(&[node(0, vec![4], 100), node(1, vec![4], 100)], 10, 1), Some(0));
        assert_eq!(cpu_place_trajectory(&[node(0, vec![4], 8), node(1, vec![4], 5)], 10, 1), None);
    }

    #[test]
    fn single_domain_preferred() {
        let mut n = node(0, vec![6, 2], 0);
        let cores = cpu_allocate_cores(&mut n, 4).unwrap();
        assert!(cores.iter().all(|c| n.numa_domains[0].contains(c)));
        assert_eq!(n.free_count(), 4);
    }

    #[test]
    fn spill_across_domains() {
        let mut n = node(0, vec![3, 3], 0);
        let cores = cpu_allocate_cores(&mut n, 4).unwrap();
        let in0 = cores.iter().filter(|c| n.numa_domains[0].contains(c)).count();
        assert_eq!(cores.len(), 4);
        assert_eq!((in0, 4 - in0), (3, 1));
        let unique: BTreeSet<_> = cores.iter().collect();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn no_cores_left() {
        let mut n = node(0, vec![1, 1], 0);
        cpu_allocate_cores(&mut n, 2).unwrap();
        assert!(cpu_allocate_cores(&mut n, 1).is_err());
    }

    #[test]
    fn pinned_actions_respect_node_capacity() {
        let spec = [CpuNodeSpec { numa: vec![1], memory_mb: 100 }, CpuNodeSpec { numa: vec![9], memory_mb: 100 }];
        let m = CpuManager::new("cpu", &spec, 0.0);
        let mut a = Action::new(1, 7, ResourceTypeId(0), UnitSpec::fixed(1));
        a.node_pin = Some(0);
        let mut b = a.clone();
        b.id = 2;
        assert!(!m.accommodate(&[(&a, 1), (&b, 1)], SimTime::ZERO));
        assert!(m.accommodate(&[(&a, 1)], SimTime::ZERO));
    }

    #[test]
    fn trajectory_memory_lifecycle() {
        let spec = [CpuNodeSpec { numa: vec![4], memory_mb: 100 }];
        let mut m = CpuManager::new("cpu", &spec, 0.0);
        let mut a = Action::new(1, 7, ResourceTypeId(0), UnitSpec::fixed(1));
        a.memory_mb = 60;
        let g = m.acquire(&a, 2, 0, SimTime::ZERO).unwrap();
        assert_eq!(m.nodes()[0].free_memory, 40);
        m.release(&g.placement, SimTime(1)).unwrap();
        assert_eq!(m.nodes()[0].free_memory, 40, "memory stays reserved between actions");
        assert_eq!(m.release(&g.placement, SimTime(1)), Err(ManagerError::DoubleRelease));
        m.trajectory_finished(7);
        assert_eq!(m.nodes()[0].free_memory, 100);
    }
}
