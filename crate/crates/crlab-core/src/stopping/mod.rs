//! Sequential channel sensing with optimal stopping.
//!
//! A secondary user probes licensed channels one at a time inside a slot of
//! unit length. Sensing the first `i` channels costs `i * tau/T` of the
//! slot, so a transmission started on channel `i` only spans the fraction
//! `c_i = 1 - i * tau/T`. The solvers here compute stationary stopping
//! policies for two access modes:
//!
//! * overlay ([`solve_overlay`]): transmit only on channels sensed free,
//!   with water-filling power against the gain, subject to an average (and
//!   optional peak) transmit-power budget plus an optional cap on the
//!   expected number of slots between transmissions;
//! * underlay ([`solve_underlay`]): transmit on every probed channel whose
//!   gain is good enough, with power and thresholds shaped by the posterior
//!   probability that the channel is busy, subject to an average
//!   interference budget at the primary receiver.
//!
//! [`solve_multi_su`] maps a network of `L` contending secondary users onto
//! the overlay solver via a thinned ensemble with a best-of-`L` gain proxy.
//! [`simulate_stopping`] replays any solved policy slot by slot against
//! streamed randomness, for validating the analytic statistics.
//!
//! Dual prices are located by bisection on monotone constraint curves;
//! stopping thresholds come from the principal Lambert branch. Rates are in
//! nats per symbol, averaged per slot.

mod monte_carlo;
mod multi_su;
mod overlay;
mod underlay;

pub use monte_carlo::{simulate_stopping, SimPolicy, SimulatedStoppingStats};
pub use multi_su::{solve_multi_su, MultiSuSolution};
pub use overlay::{
    find_lambda_p, k_out_of_m, lambda_d_upper_bound, no_osr, overlay_power, overlay_recursions,
    overlay_thresholds, solve_overlay, threshold_residuals, KOutOfMSolution, PowerDual,
};
pub use underlay::{posterior_busy, solve_underlay, underlay_power};

use crate::numerics::{ln_bessel_i, ln_gamma, Density1D, NumericsError};
use std::fmt;

/// Failure modes for the stopping solvers.
#[derive(Debug, Clone)]
pub enum StoppingError {
    /// A numerical kernel failed underneath.
    Numerics(NumericsError),
    /// Structurally invalid input.
    BadInput(String),
    /// Sensing statistic with zero density under both channel states, so no
    /// posterior exists there.
    UndefinedPosterior { z: f64 },
    /// The expected-delay cap lies below the reachable minimum. Carries the
    /// most aggressive overlay solution found (maximal success probability).
    InfeasibleDelay(Box<OverlaySolution>),
    /// Underlay analogue of `InfeasibleDelay`.
    InfeasibleDelayUnderlay(Box<UnderlaySolution>),
}

impl fmt::Display for StoppingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingError::Numerics(e) => write!(f, "numerics: {e}"),
            StoppingError::BadInput(msg) => f.write_str(msg),
            StoppingError::UndefinedPosterior { z } => write!(
                f,
                "sensing statistic {z} has zero density under both channel states"
            ),
            StoppingError::InfeasibleDelay(best) => write!(
                f,
                "delay cap unreachable: minimum expected delay is {:.6}",
                best.stats.expected_delay
            ),
            StoppingError::InfeasibleDelayUnderlay(best) => write!(
                f,
                "delay cap unreachable: minimum expected delay is {:.6}",
                best.stats.expected_delay
            ),
        }
    }
}

impl std::error::Error for StoppingError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            StoppingError::Numerics(e) => Some(e),
            _ => None,
        }
    }
}

impl From<NumericsError> for StoppingError {
    fn from(e: NumericsError) -> StoppingError {
        StoppingError::Numerics(e)
    }
}

/// Licensed-channel ensemble in fixed sensing order.
///
/// `theta[i]` is the prior probability that channel `i+1` is free; all
/// channels share one fading-gain density. The time-share coefficients
/// `c_i = 1 - i * tau/T` are derived at construction and strictly decrease;
/// `c_M > 0` is required so the last channel is still worth sensing.
#[derive(Clone, Debug)]
pub struct ChannelEnsemble {
    theta: Vec<f64>,
    c: Vec<f64>,
    tau_over_t: f64,
    gain: Density1D,
}

impl ChannelEnsemble {
    pub fn new(
        theta: Vec<f64>,
        tau_over_t: f64,
        gain: Density1D,
    ) -> Result<ChannelEnsemble, StoppingError> {
        if theta.is_empty() {
            return Err(StoppingError::BadInput(
                "ensemble needs at least one channel".into(),
            ));
        }
        for (i, &t) in theta.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(StoppingError::BadInput(format!(
                    "theta[{i}] = {t} outside [0, 1]"
                )));
            }
        }
        if !tau_over_t.is_finite() || tau_over_t <= 0.0 {
            return Err(StoppingError::BadInput(format!(
                "sensing-time fraction {tau_over_t} must be positive"
            )));
        }
        let m = theta.len();
        if m as f64 * tau_over_t >= 1.0 {
            return Err(StoppingError::BadInput(format!(
                "sensing all {m} channels consumes the whole slot (tau/T = {tau_over_t})"
            )));
        }
        let c = (1..=m).map(|i| 1.0 - i as f64 * tau_over_t).collect();
        Ok(ChannelEnsemble {
            theta,
            c,
            tau_over_t,
            gain,
        })
    }

    pub fn channels(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Time-share coefficients, one per channel, strictly decreasing.
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn tau_over_t(&self) -> f64 {
        self.tau_over_t
    }

    pub fn gain(&self) -> &Density1D {
        &self.gain
    }
}

/// Stationary overlay rule: sense channels in order, transmit on the first
/// free channel whose gain clears its threshold.
#[derive(Clone, Debug)]
pub struct OverlayPolicy {
    /// Dual price on average transmit power.
    pub lambda_p: f64,
    /// Dual price on expected delay; zero when the cap is absent or slack.
    pub lambda_d: f64,
    /// Per-channel stopping thresholds on the instantaneous gain.
    pub thresholds: Vec<f64>,
    /// Optional peak transmit-power cap.
    pub p_max: Option<f64>,
}

impl OverlayPolicy {
    /// Transmit power used at gain `gamma` once stopped.
    pub fn power(&self, gamma: f64) -> f64 {
        overlay_power(gamma, self.lambda_p, self.p_max)
    }
}

/// Per-slot performance of a stopping policy, seen from the first channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingStats {
    /// Expected rate per slot (nats per symbol, time-share weighted).
    pub throughput: f64,
    /// Expected transmit energy per slot (power times time share).
    pub power: f64,
    /// Expected interference energy per slot at the primary receiver;
    /// `None` for overlay policies, which never collide.
    pub interference: Option<f64>,
    /// Probability that the slot ends with a transmission.
    pub success_prob: f64,
    /// Expected slots per transmission, `1 / success_prob`.
    pub expected_delay: f64,
}

/// Solved overlay policy with its stationary statistics.
#[derive(Clone, Debug)]
pub struct OverlaySolution {
    pub policy: OverlayPolicy,
    pub stats: StoppingStats,
    /// Whether the average-power constraint binds at the optimum.
    pub power_active: bool,
}

/// Conditional densities of the sensing statistic under each channel state.
#[derive(Clone, Debug)]
pub struct SensingModel {
    free: Density1D,
    busy: Density1D,
}

impl SensingModel {
    pub fn new(free: Density1D, busy: Density1D) -> SensingModel {
        SensingModel { free, busy }
    }

    pub fn free(&self) -> &Density1D {
        &self.free
    }

    pub fn busy(&self) -> &Density1D {
        &self.busy
    }
}

/// Energy detector averaging `samples` received-energy points per sensing
/// window. The statistic is Gamma-distributed on a free channel and follows
/// the Bessel-weighted noncentral law on a busy one.
#[derive(Clone, Copy, Debug)]
pub struct EnergyDetector {
    /// Energy samples averaged per window.
    pub samples: u32,
    /// Receiver noise power; free-channel mean statistic.
    pub noise_power: f64,
    /// Received primary signal energy; busy-channel mean is
    /// `noise_power + signal_energy`.
    pub signal_energy: f64,
}

impl EnergyDetector {
    /// Build the conditional statistic densities.
    pub fn model(&self) -> Result<SensingModel, StoppingError> {
        if self.samples == 0 {
            return Err(StoppingError::BadInput(
                "energy detector needs at least one sample".into(),
            ));
        }
        if !self.noise_power.is_finite() || self.noise_power <= 0.0 {
            return Err(StoppingError::BadInput(format!(
                "noise power {} must be positive",
                self.noise_power
            )));
        }
        if !self.signal_energy.is_finite() || self.signal_energy <= 0.0 {
            return Err(StoppingError::BadInput(format!(
                "signal energy {} must be positive",
                self.signal_energy
            )));
        }
        let n = self.samples as f64;
        let rate = n / self.noise_power;
        let ln_norm = n * rate.ln() - ln_gamma(n);
        let free = Density1D::from_pdf(
            move |z| {
                if z <= 0.0 {
                    return 0.0;
                }
                (ln_norm + (n - 1.0) * z.ln() - rate * z).exp()
            },
            0.0,
            f64::INFINITY,
        )?;
        let order = self.samples - 1;
        let energy = self.signal_energy;
        let busy = Density1D::from_pdf(
            move |z| {
                if z <= 0.0 {
                    return 0.0;
                }
                let bessel = ln_bessel_i(order, 2.0 * rate * (energy * z).sqrt())
                    .unwrap_or(f64::NAN);
                (rate.ln() + 0.5 * (n - 1.0) * (z / energy).ln() - rate * (z + energy) + bessel)
                    .exp()
            },
            0.0,
            f64::INFINITY,
        )?;
        Ok(SensingModel { free, busy })
    }
}

/// Continuation values one channel sees in the underlay recursion: optimal
/// tail statistics of the channels after it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnderlayTail {
    pub throughput: f64,
    pub interference: f64,
    pub power: f64,
    pub success: f64,
}

/// Stationary underlay rule: transmit on channel `i` when the gain clears
/// `kappa[i] * beta(q)`, at water-filling power `(1/beta(q) - 1/gamma)^+`,
/// where `q` is the posterior busy probability given the sensing statistic.
#[derive(Clone, Debug)]
pub struct UnderlayPolicy {
    /// Dual price on average transmit power; zero when no power budget.
    pub lambda_p: f64,
    /// Dual price on average interference at the primary receiver.
    pub lambda_i: f64,
    /// Dual price on expected delay.
    pub lambda_d: f64,
    /// Per-channel threshold multipliers; each is at least 1.
    pub kappa: Vec<f64>,
    /// `tails[i]` holds the continuation values used for channel `i`.
    pub tails: Vec<UnderlayTail>,
}

impl UnderlayPolicy {
    /// Effective price per unit transmit power at the given posterior.
    pub fn beta(&self, posterior: f64) -> f64 {
        self.lambda_p + self.lambda_i * posterior
    }

    /// Stopping threshold on the gain for `channel` at the given posterior.
    pub fn threshold(&self, channel: usize, posterior: f64) -> f64 {
        self.kappa[channel] * self.beta(posterior)
    }

    /// Transmit power at gain `gamma` for the given posterior.
    pub fn power(&self, gamma: f64, posterior: f64) -> f64 {
        underlay_power(gamma, self.lambda_i, self.lambda_p, posterior)
    }
}

/// Solved underlay policy with its stationary statistics.
#[derive(Clone, Debug)]
pub struct UnderlaySolution {
    pub policy: UnderlayPolicy,
    pub stats: StoppingStats,
    /// Whether the average-power constraint binds (false when absent).
    pub power_active: bool,
    /// Whether the average-interference constraint binds.
    pub interference_active: bool,
}

/// Locate where a continuous decreasing excess function crosses zero on
/// `(0, hi]`, or report that it never does.
///
/// `g` must be decreasing with `g(hi) <= 0`. Returns `(x, true)` with
/// `|g(x)| <= tol` when the constraint binds, or `(0.0, false)` when the
/// excess stays below `-tol` down to a vanishing argument (slack
/// constraint). The initial probe sits at `hi * 1e-9` and shrinks by factors
/// of 1e-3 while the excess stays negative, so roots anywhere above
/// `hi * 1e-27` are found.
pub(crate) fn bisect_decreasing(
    mut g: impl FnMut(f64) -> Result<f64, StoppingError>,
    hi: f64,
    tol: f64,
) -> Result<(f64, bool), StoppingError> {
    debug_assert!(hi.is_finite() && hi > 0.0 && tol > 0.0);
    let mut upper = hi;
    let mut lower = hi * 1e-9;
    let mut shrinks = 0;
    loop {
        let excess = g(lower)?;
        if excess > tol {
            break;
        }
        if excess >= -tol {
            return Ok((lower, true));
        }
        if shrinks == 6 {
            return Ok((0.0, false));
        }
        upper = lower;
        lower *= 1e-3;
        shrinks += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lower + upper);
        let excess = g(mid)?;
        if excess.abs() <= tol {
            return Ok((mid, true));
        }
        if excess > 0.0 {
            lower = mid;
        } else {
            upper = mid;
        }
        if upper - lower <= f64::EPSILON * upper {
            break;
        }
    }
    Ok((0.5 * (lower + upper), true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_derives_time_shares() {
        let ens = ChannelEnsemble::new(
            vec![0.05, 0.10, 0.15],
            0.05,
            Density1D::exponential(1.0),
        )
        .unwrap();
        assert_eq!(ens.channels(), 3);
        let c = ens.c();
        assert!((c[0] - 0.95).abs() < 1e-15);
        assert!((c[1] - 0.90).abs() < 1e-15);
        assert!((c[2] - 0.85).abs() < 1e-15);
        assert!(c.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn ensemble_rejects_bad_inputs() {
        let gain = Density1D::exponential(1.0);
        assert!(ChannelEnsemble::new(vec![], 0.05, gain.clone()).is_err());
        assert!(ChannelEnsemble::new(vec![1.2], 0.05, gain.clone()).is_err());
        assert!(ChannelEnsemble::new(vec![-0.1], 0.05, gain.clone()).is_err());
        assert!(ChannelEnsemble::new(vec![0.5], 0.0, gain.clone()).is_err());
        // 10 channels at tau/T = 0.1 leave no time to transmit on the last.
        assert!(ChannelEnsemble::new(vec![0.5; 10], 0.1, gain).is_err());
    }

    #[test]
    fn energy_detector_statistic_means() {
        let det = EnergyDetector {
            samples: 10,
            noise_power: 1.0,
            signal_energy: 2.0,
        };
        // `from_pdf` already rejects densities whose mass is off by 1e-6,
        // so construction succeeding is itself a transcription check.
        let model = det.model().unwrap();
        assert!((model.free().mean() - 1.0).abs() < 1e-7);
        assert!((model.busy().mean() - 3.0).abs() < 1e-7);
    }

    #[test]
    fn bisect_decreasing_finds_root_and_slack() {
        let (x, active) = bisect_decreasing(|x| Ok(1.0 / x - 4.0), 10.0, 1e-10).unwrap();
        assert!(active);
        assert!((x - 0.25).abs() < 1e-9);
        // Excess bounded above by -1: no root anywhere.
        let (x, active) = bisect_decreasing(|x| Ok(-1.0 - x), 10.0, 1e-10).unwrap();
        assert!(!active);
        assert_eq!(x, 0.0);
        // Root far below the first probe: 1/x - 1e12 crosses at 1e-12.
        let (x, active) =
            bisect_decreasing(|x| Ok(1.0 / x - 1e12), 10.0, 1e-2).unwrap();
        assert!(active);
        assert!((x * 1e12 - 1.0).abs() < 1e-6);
    }
}
