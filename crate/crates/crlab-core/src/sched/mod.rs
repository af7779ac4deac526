//! Frame-based uplink scheduling under an instantaneous interference cap.
//!
//! A fleet of secondary users shares one uplink. Each frame, a policy fixes
//! a priority order and per-user power parameters from virtual-queue state;
//! slots inside the frame serve the highest-priority nonempty queue. The
//! actual transmit power in a slot is capped so the interference seen by the
//! primary receiver never exceeds `i_inst`.
//!
//! `queueing` holds the rate/service-time layer (effective rate, mean rate
//! per packet, priority-queue waiting bounds). `policies` holds the frame
//! planners: the delay-oriented sort (`doic_frame_setup`), the joint
//! delay/average-interference allocator (`doac_pow_alloc`), its cheap
//! approximation (`subopt_frame_setup`), and the virtual-queue updates that
//! tie frames together.

mod policies;
mod queueing;

pub use policies::{
    brho_max_chain, csi_adjust, doac_pow_alloc, doic_frame_setup, psi_terms, subopt_frame_setup,
    update_virtual_queues, ChainStep, FrameTrace, PsiTerms,
};
pub(crate) use policies::sort_descending;
pub use queueing::{
    effective_rate, mu_of_power, service_moments, slot_power, stability_check, waiting_bound,
    with_admission_control, QueueingConstants, ServiceMoments, StabilityReport,
};

use crate::numerics::{Density1D, NumericsError};

#[derive(Debug, Clone, PartialEq)]
pub enum SchedError {
    /// A numeric kernel failed underneath.
    Numerics(NumericsError),
    /// Inputs violate a documented precondition.
    BadInput(String),
    /// Every candidate power saturates some queue: the residual service
    /// capacity left by higher priorities cannot carry this user's load.
    Saturated { su: usize },
    /// The fleet is unstable even at full power, so minimum powers and the
    /// residual-work constant do not exist.
    InfeasibleLoad { load: f64 },
}

impl std::fmt::Display for SchedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchedError::Numerics(e) => write!(f, "numerics: {e}"),
            SchedError::BadInput(msg) => write!(f, "bad input: {msg}"),
            SchedError::Saturated { su } => {
                write!(f, "no feasible power for user {su}: queue saturates")
            }
            SchedError::InfeasibleLoad { load } => {
                write!(f, "total load {load:.6} at full power is not stable")
            }
        }
    }
}

impl std::error::Error for SchedError {}

impl From<NumericsError> for SchedError {
    fn from(e: NumericsError) -> Self {
        SchedError::Numerics(e)
    }
}

/// One secondary user: arrivals, delay target, and channel statistics.
///
/// `gain_density` is the uplink gain to the secondary base station,
/// `interference_density` the gain toward the primary receiver. Packets are
/// `packet_bits` long; `lambda` is the packet arrival probability per slot
/// (Bernoulli arrivals, at most one packet per slot). `d` is the waiting
/// budget credited back per frame when the delay queue runs hot.
#[derive(Clone, Debug)]
pub struct SuProfile {
    pub lambda: f64,
    pub d: f64,
    pub packet_bits: u32,
    pub gain_density: Density1D,
    pub interference_density: Density1D,
}

/// Shared uplink parameters for a fleet of `SuProfile`s.
///
/// `p_max` bounds the power parameter, `i_inst` the instantaneous received
/// interference (enforced per slot), `i_avg` the average interference (only
/// tracked when set). `r_max` optionally caps the per-slot rate. `v` trades
/// delay against the `d_i` credits; `epsilon` is the admission-control
/// margin.
#[derive(Clone, Debug)]
pub struct FleetConfig {
    pub sus: Vec<SuProfile>,
    pub p_max: f64,
    pub i_inst: f64,
    pub i_avg: Option<f64>,
    pub r_max: Option<f64>,
    pub v: f64,
    pub epsilon: f64,
}

impl FleetConfig {
    pub(crate) fn validate(&self) -> Result<(), SchedError> {
        if self.sus.is_empty() {
            return Err(SchedError::BadInput("empty fleet".into()));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(SchedError::BadInput("p_max must be positive".into()));
        }
        if !(self.i_inst > 0.0 && self.i_inst.is_finite()) {
            return Err(SchedError::BadInput("i_inst must be positive".into()));
        }
        if let Some(ia) = self.i_avg {
            if !(ia > 0.0 && ia.is_finite()) {
                return Err(SchedError::BadInput("i_avg must be positive".into()));
            }
        }
        if let Some(rm) = self.r_max {
            if !(rm > 0.0 && rm.is_finite()) {
                return Err(SchedError::BadInput("r_max must be positive".into()));
            }
        }
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return Err(SchedError::BadInput("v must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SchedError::BadInput("epsilon must sit in [0, 1)".into()));
        }
        for (i, su) in self.sus.iter().enumerate() {
            if !(su.lambda > 0.0 && su.lambda <= 1.0) {
                return Err(SchedError::BadInput(format!(
                    "user {i}: arrival rate must sit in (0, 1]"
                )));
            }
            if !(su.d >= 0.0 && su.d.is_finite()) {
                return Err(SchedError::BadInput(format!(
                    "user {i}: delay credit must be nonnegative"
                )));
            }
            if su.packet_bits == 0 {
                return Err(SchedError::BadInput(format!(
                    "user {i}: packets must carry at least one bit"
                )));
            }
        }
        Ok(())
    }
}

/// Virtual queues carried across frames.
///
/// `y[i]` tracks cumulated waiting beyond the credits `r[i]`; `x` tracks
/// average-interference debt (stays zero when no `i_avg` is configured).
/// `r[i]` records the credit applied when the most recent frame closed.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualQueueState {
    pub y: Vec<f64>,
    pub x: f64,
    pub r: Vec<f64>,
    pub frame_index: u64,
}

impl VirtualQueueState {
    pub fn new(n: usize) -> Self {
        VirtualQueueState {
            y: vec![0.0; n],
            x: 0.0,
            r: vec![0.0; n],
            frame_index: 0,
        }
    }
}

/// A frame plan: who goes first and at what power parameter.
///
/// `priority` lists user indices from highest to lowest priority.
/// `power_params` is indexed by user (not by rank) and always sits in
/// `[p_min_i, p_max]` for planners that search, or equals `p_max`/`p_min`
/// for the closed-form ones.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePlanState {
    pub priority: Vec<usize>,
    pub power_params: Vec<f64>,
}
