//! Slot-level simulation of the stopping policies.
//!
//! Occupancy verdicts, gains, and sensing statistics come from
//! counter-based streams indexed by (channel, slot), so runs with the same
//! seed are reproducible and policy variants see common random numbers.
//! Each slot replays the probe sequence: walk the channels in order, stop
//! at the first one the policy accepts, transmit, and score the slot.

use super::{
    posterior_busy, ChannelEnsemble, OverlayPolicy, SensingModel, StoppingError, StoppingStats,
    UnderlayPolicy,
};
use crate::rng::{Quantity, Stream};

/// Policy under simulation; the underlay carries its sensing model to draw
/// statistics from the true channel state.
#[derive(Clone, Copy)]
pub enum SimPolicy<'a> {
    Overlay(&'a OverlayPolicy),
    Underlay {
        policy: &'a UnderlayPolicy,
        model: &'a SensingModel,
    },
}

/// Sample means with standard errors. Delay is estimated from the gaps
/// between consecutive successful slots.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedStoppingStats {
    pub stats: StoppingStats,
    pub se_throughput: f64,
    pub se_power: f64,
    pub se_interference: Option<f64>,
    pub se_success: f64,
    pub se_delay: f64,
}

#[derive(Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn se(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Run `slots` independent probe sequences and average the outcomes.
pub fn simulate_stopping(
    ens: &ChannelEnsemble,
    policy: SimPolicy<'_>,
    slots: u64,
    seed: u64,
) -> Result<SimulatedStoppingStats, StoppingError> {
    if slots == 0 {
        return Err(StoppingError::BadInput("need at least one slot".into()));
    }
    let m = ens.channels();
    match policy {
        SimPolicy::Overlay(p) if p.thresholds.len() != m => {
            return Err(StoppingError::BadInput(format!(
                "policy covers {} channels, ensemble has {m}",
                p.thresholds.len()
            )));
        }
        SimPolicy::Underlay { policy: p, .. } if p.kappa.len() != m => {
            return Err(StoppingError::BadInput(format!(
                "policy covers {} channels, ensemble has {m}",
                p.kappa.len()
            )));
        }
        _ => {}
    }
    let underlay = matches!(policy, SimPolicy::Underlay { .. });
    let occupancy: Vec<Stream> = (0..m)
        .map(|i| Stream::new(seed, i as u32, Quantity::Occupancy))
        .collect();
    let gains: Vec<Stream> = (0..m)
        .map(|i| Stream::new(seed, i as u32, Quantity::Gain))
        .collect();
    let sensing: Vec<Stream> = (0..m)
        .map(|i| Stream::new(seed, i as u32, Quantity::SensingStat))
        .collect();
    let mut rate = Welford::default();
    let mut power = Welford::default();
    let mut interference = Welford::default();
    let mut success = Welford::default();
    let mut delay = Welford::default();
    let mut last_success: Option<u64> = None;
    for t in 0..slots {
        let mut slot_rate = 0.0;
        let mut slot_power = 0.0;
        let mut slot_intf = 0.0;
        let mut hit = false;
        for i in 0..m {
            let theta = ens.theta()[i];
            let c = ens.c()[i];
            let free = occupancy[i].bernoulli(t, theta);
            match policy {
                SimPolicy::Overlay(p) => {
                    if !free {
                        continue;
                    }
                    let gamma = ens.gain().sample(gains[i].uniform(t))?;
                    if gamma < p.thresholds[i] {
                        continue;
                    }
                    let pw = p.power(gamma);
                    slot_rate = c * (pw * gamma).ln_1p();
                    slot_power = c * pw;
                }
                SimPolicy::Underlay { policy: p, model } => {
                    let state = if free { model.free() } else { model.busy() };
                    let z = state.sample(sensing[i].uniform(t))?;
                    let q = posterior_busy(model, theta, z)?;
                    let gamma = ens.gain().sample(gains[i].uniform(t))?;
                    if gamma < p.threshold(i, q) {
                        continue;
                    }
                    let pw = p.power(gamma, q);
                    slot_rate = c * (pw * gamma).ln_1p();
                    slot_power = c * pw;
                    if !free {
                        slot_intf = c * pw;
                    }
                }
            }
            hit = true;
            break;
        }
        rate.push(slot_rate);
        power.push(slot_power);
        if underlay {
            interference.push(slot_intf);
        }
        success.push(if hit { 1.0 } else { 0.0 });
        if hit {
            let gap = match last_success {
                Some(prev) => t - prev,
                None => t + 1,
            };
            delay.push(gap as f64);
            last_success = Some(t);
        }
    }
    let stats = StoppingStats {
        throughput: rate.mean(),
        power: power.mean(),
        interference: underlay.then(|| interference.mean()),
        success_prob: success.mean(),
        expected_delay: if delay.n > 0 {
            delay.mean()
        } else {
            f64::INFINITY
        },
    };
    Ok(SimulatedStoppingStats {
        stats,
        se_throughput: rate.se(),
        se_power: power.se(),
        se_interference: underlay.then(|| interference.se()),
        se_success: success.se(),
        se_delay: delay.se(),
    })
}
