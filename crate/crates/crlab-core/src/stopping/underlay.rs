//! Underlay access: transmit on every probed channel whose gain clears a
//! posterior-priced threshold.
//!
//! Sensing returns a noisy statistic `z` instead of a verdict. The posterior
//! busy probability `q(z)` prices transmit power at `β(z) = λ_P + λ_I q(z)`,
//! the power is water-filling against `β`, and the stopping threshold is
//! `κ_i β(z)` with a per-channel multiplier from the same Lambert form as
//! the overlay. Statistics need one extra integral over `z`, evaluated per
//! mixture component (free and busy) so the interference term can reuse the
//! busy-side power integral. Interference at the primary receiver counts
//! transmit energy spent while the channel is actually busy, through a unit
//! coupling gain.

use super::{
    bisect_decreasing, overlay::kappa_for_margin, ChannelEnsemble, SensingModel, StoppingError,
    StoppingStats, UnderlayPolicy, UnderlaySolution, UnderlayTail,
};
use crate::numerics::{composite_gk15_vec, integrate, Density1D, QuadratureSpec};
use rayon::prelude::*;

/// Panels for the composite z-quadrature; nodes stay strictly interior, so
/// densities vanishing at the support edge are never probed there.
const Z_PANELS: usize = 16;
const REFINE_EVALS: usize = 48;
const FEAS_SLACK: f64 = 1e-9;

/// Density or atom weight of `d` at `z`, flagged atomic for point masses.
fn mass_at(d: &Density1D, z: f64) -> (f64, bool) {
    match d.atoms() {
        Some(atoms) => (
            atoms
                .iter()
                .filter(|&&(a, _)| a == z)
                .map(|&(_, w)| w)
                .sum(),
            true,
        ),
        None => (d.pdf_at(z), false),
    }
}

/// Posterior probability that the channel is busy given statistic `z`:
/// `(1-θ) f_busy(z) / (θ f_free(z) + (1-θ) f_busy(z))`.
///
/// A point mass acts as a Dirac spike: an atom at `z` on one side outweighs
/// any density value on the other.
pub fn posterior_busy(model: &SensingModel, theta: f64, z: f64) -> Result<f64, StoppingError> {
    if !theta.is_finite() || !(0.0..=1.0).contains(&theta) {
        return Err(StoppingError::BadInput(format!(
            "availability {theta} outside [0, 1]"
        )));
    }
    if !z.is_finite() {
        return Err(StoppingError::BadInput(format!(
            "sensing statistic {z} must be finite"
        )));
    }
    let (free_mass, free_atomic) = mass_at(model.free(), z);
    let (busy_mass, busy_atomic) = mass_at(model.busy(), z);
    let wf = theta * free_mass;
    let wb = (1.0 - theta) * busy_mass;
    if wf == 0.0 && wb == 0.0 {
        return Err(StoppingError::UndefinedPosterior { z });
    }
    if free_atomic != busy_atomic {
        if free_atomic && wf > 0.0 {
            return Ok(0.0);
        }
        if busy_atomic && wb > 0.0 {
            return Ok(1.0);
        }
    }
    Ok(wb / (wf + wb))
}

/// Water-filling power against the posterior-priced level
/// `β = λ_P + λ_I q`: `(1/β - 1/γ)^+`. A vanishing price returns infinity;
/// the solvers reject that configuration before ever transmitting.
pub fn underlay_power(gamma: f64, lambda_i: f64, lambda_p: f64, posterior: f64) -> f64 {
    if !(gamma > 0.0) {
        return 0.0;
    }
    let beta = if posterior > 0.0 {
        lambda_p + lambda_i * posterior
    } else {
        lambda_p
    };
    if beta <= 0.0 {
        return f64::INFINITY;
    }
    (beta.recip() - gamma.recip()).max(0.0)
}

struct MixtureTerms {
    /// `E[rate]` over the statistic mixture and the gain above threshold.
    rate: f64,
    /// `E[power]` over the same region.
    power: f64,
    /// Probability this channel transmits.
    transmit: f64,
    /// Power expectation against the busy component alone (unweighted);
    /// interference is this times `(1-θ)` and the coupling gain.
    busy_power: f64,
}

/// Expected rate, power, and transmit probability for one channel: inner
/// gain integrals at each statistic value, outer integral per mixture
/// component. `[rate, power, tail]` share every posterior and threshold
/// evaluation.
fn mixture_terms(
    model: &SensingModel,
    gain: &Density1D,
    theta: f64,
    kappa: f64,
    lambda_p: f64,
    lambda_i: f64,
) -> Result<MixtureTerms, StoppingError> {
    if kappa.is_infinite() {
        return Ok(MixtureTerms {
            rate: 0.0,
            power: 0.0,
            transmit: 0.0,
            busy_power: 0.0,
        });
    }
    let at = |z: f64| -> Result<[f64; 3], StoppingError> {
        let q = posterior_busy(model, theta, z)?;
        let beta = if q > 0.0 { lambda_p + lambda_i * q } else { lambda_p };
        if !(beta > 0.0) {
            return Err(StoppingError::BadInput(format!(
                "power price vanished at statistic {z}: unbounded power"
            )));
        }
        let gamma_z = kappa * beta;
        let quad = QuadratureSpec::default();
        let rate = integrate(
            |g| if g > beta { (g / beta).ln() } else { 0.0 },
            gain,
            gamma_z,
            quad,
        )?;
        let pow = integrate(
            |g| (beta.recip() - g.recip()).max(0.0),
            gain,
            gamma_z,
            quad,
        )?;
        let tail = gain.ccdf(gamma_z)?;
        Ok([rate, pow, tail])
    };
    let component = |comp: &Density1D| -> Result<[f64; 3], StoppingError> {
        match comp.atoms() {
            Some(atoms) => {
                let mut acc = [0.0; 3];
                for &(z, w) in atoms {
                    if w == 0.0 {
                        continue;
                    }
                    let v = at(z)?;
                    for (a, x) in acc.iter_mut().zip(v) {
                        *a += w * x;
                    }
                }
                Ok(acc)
            }
            None => {
                let (lo, _) = comp.support();
                let hi = comp.cutoff(1e-12)?;
                composite_gk15_vec(
                    |z| {
                        let pdf = comp.pdf_at(z);
                        if pdf == 0.0 {
                            return Ok([0.0; 3]);
                        }
                        let v = at(z)?;
                        Ok([v[0] * pdf, v[1] * pdf, v[2] * pdf])
                    },
                    lo,
                    hi,
                    Z_PANELS,
                )
            }
        }
    };
    let mut out = MixtureTerms {
        rate: 0.0,
        power: 0.0,
        transmit: 0.0,
        busy_power: 0.0,
    };
    if theta > 0.0 {
        let [r, w, t] = component(model.free())?;
        out.rate += theta * r;
        out.power += theta * w;
        out.transmit += theta * t;
    }
    if theta < 1.0 {
        let [r, w, t] = component(model.busy())?;
        out.rate += (1.0 - theta) * r;
        out.power += (1.0 - theta) * w;
        out.transmit += (1.0 - theta) * t;
        out.busy_power = w;
    }
    Ok(out)
}

struct PassResult {
    kappa: Vec<f64>,
    tails: Vec<UnderlayTail>,
    stats: StoppingStats,
}

/// Backward pass at fixed dual prices: derive every threshold multiplier
/// (or pin them all at `kappa_fixed` for the first-positive-power rule) and
/// fold the channel terms into tail statistics.
fn underlay_pass(
    ens: &ChannelEnsemble,
    model: &SensingModel,
    lambda_p: f64,
    lambda_i: f64,
    lambda_d: f64,
    kappa_fixed: Option<f64>,
    coupling: &[f64],
) -> Result<PassResult, StoppingError> {
    let m = ens.channels();
    debug_assert_eq!(coupling.len(), m);
    let mut kappa = vec![0.0; m];
    let mut tails = vec![UnderlayTail::default(); m];
    let mut tail = UnderlayTail::default();
    for i in (0..m).rev() {
        tails[i] = tail;
        let margin = (tail.throughput
            - lambda_i * tail.interference
            - lambda_p * tail.power
            - lambda_d * (1.0 - tail.success))
            .max(0.0)
            / ens.c()[i];
        let k = match kappa_fixed {
            Some(fixed) => fixed,
            None => kappa_for_margin(margin)?,
        };
        kappa[i] = k;
        let theta = ens.theta()[i];
        let c = ens.c()[i];
        let terms = mixture_terms(model, ens.gain(), theta, k, lambda_p, lambda_i)?;
        let skip = 1.0 - terms.transmit;
        tail = UnderlayTail {
            throughput: c * terms.rate + skip * tail.throughput,
            interference: c * coupling[i] * (1.0 - theta) * terms.busy_power
                + skip * tail.interference,
            power: c * terms.power + skip * tail.power,
            success: terms.transmit + skip * tail.success,
        };
    }
    let stats = StoppingStats {
        throughput: tail.throughput,
        power: tail.power,
        interference: Some(tail.interference),
        success_prob: tail.success,
        expected_delay: if tail.success > 0.0 {
            tail.success.recip()
        } else {
            f64::INFINITY
        },
    };
    Ok(PassResult {
        kappa,
        tails,
        stats,
    })
}

/// Resolve the power dual at fixed interference and delay prices. Without a
/// power budget the dual is zero; with one, bisection on the decreasing
/// average-power curve (`S ≤ Σ c_i / λ_P` brackets it). Unlike the overlay,
/// the budget can come out slack without a peak cap because the
/// interference price alone bounds the power.
fn eval_duals(
    ens: &ChannelEnsemble,
    model: &SensingModel,
    p_avg: Option<f64>,
    lambda_i: f64,
    lambda_d: f64,
    kappa_fixed: Option<f64>,
    coupling: &[f64],
) -> Result<(f64, bool, PassResult), StoppingError> {
    let Some(pa) = p_avg else {
        let pass = underlay_pass(ens, model, 0.0, lambda_i, lambda_d, kappa_fixed, coupling)?;
        return Ok((0.0, false, pass));
    };
    let top = ens.c().iter().sum::<f64>() / pa;
    let (lambda_p, active) = bisect_decreasing(
        |lp| {
            Ok(
                underlay_pass(ens, model, lp, lambda_i, lambda_d, kappa_fixed, coupling)?
                    .stats
                    .power
                    - pa,
            )
        },
        top,
        1e-8 * pa,
    )?;
    let pass = underlay_pass(ens, model, lambda_p, lambda_i, lambda_d, kappa_fixed, coupling)?;
    Ok((lambda_p, active, pass))
}

/// Resolve the interference dual at a fixed delay price: double the bracket
/// until the budget is met, then bisect the decreasing curve.
fn solve_interference(
    ens: &ChannelEnsemble,
    model: &SensingModel,
    i_avg: f64,
    p_avg: Option<f64>,
    lambda_d: f64,
    kappa_fixed: Option<f64>,
    coupling: &[f64],
) -> Result<UnderlaySolution, StoppingError> {
    let tol = 1e-8 * i_avg;
    let eval = |li: f64| eval_duals(ens, model, p_avg, li, lambda_d, kappa_fixed, coupling);
    let mut hi = i_avg.recip().max(1.0);
    let mut doublings = 0;
    loop {
        let (_, _, pass) = eval(hi)?;
        if pass.stats.interference.unwrap_or(0.0) - i_avg <= tol {
            break;
        }
        doublings += 1;
        if doublings > 60 {
            return Err(StoppingError::BadInput(format!(
                "interference above budget even at price {hi:.3e}"
            )));
        }
        hi *= 2.0;
    }
    let (lambda_i, active) = bisect_decreasing(
        |li| Ok(eval(li)?.2.stats.interference.unwrap_or(0.0) - i_avg),
        hi,
        tol,
    )?;
    let (lambda_p, power_active, pass) = eval(lambda_i)?;
    Ok(UnderlaySolution {
        policy: UnderlayPolicy {
            lambda_p,
            lambda_i,
            lambda_d,
            kappa: pass.kappa,
            tails: pass.tails,
        },
        stats: pass.stats,
        power_active,
        interference_active: active,
    })
}

/// Maximize expected throughput under an average-interference budget, an
/// optional average-power budget, and an optional expected-delay cap.
///
/// Structure mirrors [`super::solve_overlay`]: the interference (and nested
/// power) duals are re-solved at every delay price, the delay price sweeps a
/// grid and is refined by golden section. The sweep ceiling has no closed
/// form here; pinning every multiplier at 1 gives the most delay-eager
/// policy, and a price of `U/(1 - p)` against that success rate zeroes all
/// margins, so twice that is used.
pub fn solve_underlay(
    ens: &ChannelEnsemble,
    model: &SensingModel,
    i_avg: f64,
    p_avg: Option<f64>,
    d_max: f64,
    grid_size: usize,
) -> Result<UnderlaySolution, StoppingError> {
    if !i_avg.is_finite() || i_avg <= 0.0 {
        return Err(StoppingError::BadInput(format!(
            "interference budget {i_avg} must be positive and finite"
        )));
    }
    if let Some(pa) = p_avg {
        if !pa.is_finite() || pa <= 0.0 {
            return Err(StoppingError::BadInput(format!(
                "average-power budget {pa} must be positive and finite"
            )));
        }
    }
    if !(d_max >= 1.0) {
        return Err(StoppingError::BadInput(format!(
            "delay cap {d_max} must be at least 1"
        )));
    }
    if grid_size < 2 {
        return Err(StoppingError::BadInput(format!(
            "delay-price grid needs at least 2 points, got {grid_size}"
        )));
    }
    let coupling = vec![1.0; ens.channels()];
    let solve_at = |lambda_d: f64| {
        solve_interference(ens, model, i_avg, p_avg, lambda_d, None, &coupling)
    };
    let feasible = |stats: &StoppingStats| {
        d_max.is_infinite() || stats.success_prob * d_max >= 1.0 - FEAS_SLACK
    };
    let base = solve_at(0.0)?;
    if feasible(&base.stats) {
        return Ok(base);
    }
    let rush = solve_interference(ens, model, i_avg, p_avg, 0.0, Some(1.0), &coupling)?;
    let bound = 2.0 * base.stats.throughput / (1.0 - rush.stats.success_prob);
    if !bound.is_finite() || bound <= 0.0 {
        return Err(StoppingError::BadInput(format!(
            "delay-price bound {bound} is not usable"
        )));
    }
    let step = bound / grid_size as f64;
    let sweep: Vec<UnderlaySolution> = (1..grid_size)
        .into_par_iter()
        .map(|k| solve_at(k as f64 * step))
        .collect::<Result<_, _>>()?;
    let mut anchor: Option<&UnderlaySolution> = None;
    let mut most_likely = &base;
    for sol in &sweep {
        if sol.stats.success_prob > most_likely.stats.success_prob {
            most_likely = sol;
        }
        if feasible(&sol.stats)
            && anchor.map_or(true, |b| sol.stats.throughput > b.stats.throughput)
        {
            anchor = Some(sol);
        }
    }
    let Some(anchor) = anchor else {
        return Err(StoppingError::InfeasibleDelayUnderlay(Box::new(
            most_likely.clone(),
        )));
    };
    // Same refinement contract as the overlay sweep: infeasible points score
    // minus infinity, ties keep the right half.
    let mut best = anchor.clone();
    let score = |lambda_d: f64, best: &mut UnderlaySolution| -> Result<f64, StoppingError> {
        let sol = solve_at(lambda_d)?;
        if !feasible(&sol.stats) {
            return Ok(f64::NEG_INFINITY);
        }
        if sol.stats.throughput > best.stats.throughput {
            *best = sol.clone();
        }
        Ok(sol.stats.throughput)
    };
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = (anchor.policy.lambda_d - step).max(0.0);
    let mut b = (anchor.policy.lambda_d + step).min(bound);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut s1 = score(x1, &mut best)?;
    let mut s2 = score(x2, &mut best)?;
    for _ in 0..REFINE_EVALS {
        if s1 > s2 {
            b = x2;
            x2 = x1;
            s2 = s1;
            x1 = b - INV_PHI * (b - a);
            s1 = score(x1, &mut best)?;
        } else {
            a = x1;
            x1 = x2;
            s1 = s2;
            x2 = a + INV_PHI * (b - a);
            s2 = score(x2, &mut best)?;
        }
    }
    Ok(best)
}
