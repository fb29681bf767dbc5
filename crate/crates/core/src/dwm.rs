//! Domain-wall-motion weight cell.
//!
//! The wall position is quantized to `n_states` discrete states; state 0 is
//! fully antiparallel (lowest conductance) and `n_states - 1` fully parallel.

use crate::error::{Error, Result};

pub const DEFAULT_STATES: u16 = 33;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwmCell {
    pub state_index: u16,
    pub n_states: u16,
    /// Conductance at full-parallel (S).
    pub g_p: f64,
    /// Conductance at full-antiparallel (S).
    pub g_ap: f64,
}

impl DwmCell {
    pub fn new(state_index: u16, n_states: u16, g_p: f64, g_ap: f64) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::InvalidParameter(format!("n_states must be >= 2, got {n_states}")));
        }
        if state_index >= n_states {
            return Err(Error::InvalidParameter(format!("state {state_index} outside [0, {}]", n_states - 1)));
        }
        if !(g_ap > 0.0 && g_ap < g_p) {
            return Err(Error::InvalidParameter(format!("need 0 < g_ap < g_p, got g_ap={g_ap}, g_p={g_p}")));
        }
        Ok(DwmCell { state_index, n_states, g_p, g_ap })
    }

    pub fn max_state(&self) -> u16 {
        self.n_states - 1
    }

    pub fn conductance(&self) -> f64 {
        conductance(self)
    }

    pub fn resistance(&self) -> f64 {
        1.0 / conductance(self)
    }

    pub fn with_state(mut self, state_index: u16) -> Self {
        self.state_index = state_index.min(self.max_state());
        self
    }
}

/// Linear interpolation between `g_ap` and `g_p` by state index.
pub fn conductance(cell: &DwmCell) -> f64 {
    let frac = cell.state_index as f64 / (cell.n_states - 1) as f64;
    cell.g_ap + frac * (cell.g_p - cell.g_ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increase,
    Decrease,
}

/// A write pulse; `n_steps` stands in for the VPULSE duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseSpec {
    pub direction: Direction,
    pub n_steps: u32,
}

/// Move the wall by the pulse, saturating at both ends.
pub fn apply_pulse(cell: DwmCell, pulse: PulseSpec) -> DwmCell {
    let s = cell.state_index as i64;
    let d = pulse.n_steps as i64;
    let next = match pulse.direction {
        Direction::Increase => s + d,
        Direction::Decrease => s - d,
    };
    cell.with_state(next.clamp(0, cell.max_state() as i64) as u16)
}

/// Convert a real-valued weight change into a pulse of whole steps. Returns
/// `None` when the change rounds to zero steps.
pub fn quantize_weight_update(delta_w: f64, w_step: f64, max_steps: u32) -> Result<Option<PulseSpec>> {
    if !(w_step > 0.0) {
        return Err(Error::InvalidParameter(format!("w_step must be positive, got {w_step}")));
    }
    if max_steps == 0 {
        return Err(Error::InvalidParameter("max_steps must be >= 1".into()));
    }
    let steps = (delta_w.abs() / w_step).round();
    if !(steps >= 1.0) {
        return Ok(None);
    }
    let n_steps = if steps >= max_steps as f64 { max_steps } else { steps as u32 };
    let direction = if delta_w > 0.0 { Direction::Increase } else { Direction::Decrease };
    Ok(Some(PulseSpec { direction, n_steps }))
}
