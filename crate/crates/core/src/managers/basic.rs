use crate::dp::{BasicOperator, DpOperator};
use crate::model::{Action, SimTime};

use super::{Grant, ManagerError, Placement, PlacementProbe, ResourceManager};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotaMode {
    /// Caps units held at the same time.
    Concurrency,
    /// Caps units granted per tumbling window, counted from time zero.
    Quota { window: SimTime },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaState {
    pub mode: QuotaMode,
    pub limit: u32,
    pub in_flight: u32,
    pub window_usage: u32,
    pub window_start: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasicOutcome {
    Grant,
    Defer,
}

impl QuotaState {
    pub fn concurrency(limit: u32) -> QuotaState {
        QuotaState { mode: QuotaMode::Concurrency, limit, in_flight: 0, window_usage: 0, window_start: SimTime::ZERO }
    }

    pub fn quota(limit: u32, window: SimTime) -> QuotaState {
        assert!(window.0 > 0, "quota window must be positive");
        QuotaState { mode: QuotaMode::Quota { window }, limit, in_flight: 0, window_usage: 0, window_start: SimTime::ZERO }
    }

    fn window_of(&self, now: SimTime) -> SimTime {
        match self.mode {
            QuotaMode::Quota { window } => SimTime(now.0 - now.0 % window.0),
            QuotaMode::Concurrency => SimTime::ZERO,
        }
    }

    /// Units still grantable at `now`.
    pub fn headroom(&self, now: SimTime) -> u32 {
        match self.mode {
            QuotaMode::Concurrency => self.limit.saturating_sub(self.in_flight),
            QuotaMode::Quota { .. } => {
                let used = if self.window_of(now) == self.window_start { self.window_usage } else { 0 };
                self.limit.saturating_sub(used)
            }
        }
    }

    fn roll(&mut self, now: SimTime) {
        let w = self.window_of(now);
        if w != self.window_start {
            self.window_start = w;
            self.window_usage = 0;
        }
    }
}

/// Grants `units` if the limit allows, updating the counters.
pub fn basic_acquire(state: &mut QuotaState, units: u32, now: SimTime) -> BasicOutcome {
    state.roll(now);
    if state.headroom(now) < units {
        return BasicOutcome::Defer;
    }
    match state.mode {
        QuotaMode::Concurrency => state.in_flight += units,
        QuotaMode::Quota { .. } => state.window_usage += units,
    }
    BasicOutcome::Grant
}

/// Manager for flat pools, concurrency caps and windowed quotas.
#[derive(Debug, Clone)]
pub struct BasicManager {
    name: String,
    state: QuotaState,
}

impl BasicManager {
    pub fn concurrency(name: &str, limit: u32) -> BasicManager {
        BasicManager { name: name.to_string(), state: QuotaState::concurrency(limit) }
    }

    pub fn quota(name: &str, limit: u32, window: SimTime) -> BasicManager {
        BasicManager { name: name.to_string(), state: QuotaState::quota(limit, window) }
    }

    pub fn state(&self) -> &QuotaState {
        &self.state
    }
}

struct HeadroomProbe {
    left: u32,
}

impl PlacementProbe for HeadroomProbe {
    fn try_add(&mut self, _action: &Action, units: u32) -> Option<usize> {
        self.left = self.left.checked_sub(units)?;
        Some(0)
    }
}

impl ResourceManager for BasicManager {
    fn name(&self) -> &str {
        &self.name
    }

    fn probe(&self, now: SimTime) -> Box<dyn PlacementProbe + '_> {
        Box::new(HeadroomProbe { left: self.state.headroom(now) })
    }

    fn operator(&self, _partition: usize, reserved: &[u32], _max_tasks: usize, now: SimTime) -> Box<dyn DpOperator> {
        let held: u32 = reserved.iter().sum();
        Box::new(BasicOperator::new(self.state.headroom(now).saturating_sub(held)))
    }

    fn acquire(&mut self, _action: &Action, units: u32, _partition: usize, now: SimTime) -> Result<Grant, ManagerError> {
        match basic_acquire(&mut self.state, units, now) {
            BasicOutcome::Grant => Ok(Grant { placement: Placement::Units { units }, overhead: 0.0, events: vec![] }),
            BasicOutcome::Defer => Err(ManagerError::Unavailable { resource: self.name.clone(), units }),
        }
    }

    fn release(&mut self, placement: &Placement, _now: SimTime) -> Result<(), ManagerError> {
        let Placement::Units { units } = placement else {
            return Err(ManagerError::ForeignPlacement);
        };
        if self.state.mode == QuotaMode::Concurrency {
            self.state.in_flight = self.state.in_flight.checked_sub(*units).ok_or(ManagerError::DoubleRelease)?;
        }
        Ok(())
    }

    fn remaining(&self, now: SimTime) -> u64 {
        self.state.headroom(now) as u64
    }

    fn next_wake(&self, now: SimTime) -> Option<SimTime> {
        match self.state.mode {
            QuotaMode::Quota { window } => Some(SimTime(now.0 - now.0 % window.0 + window.0)),
            QuotaMode::Concurrency => None,
        }
    }
}
