//! Overlay access: transmit only on channels sensed free.
//!
//! Everything reduces to one backward pass per dual pair: walking channels
//! from last to first yields both the Lambert-form stopping thresholds and
//! the stationary statistics they induce. Dual prices are then located by
//! bisection on the monotone constraint curves, and the delay price by a
//! grid sweep with golden-section refinement.

use super::{
    bisect_decreasing, ChannelEnsemble, OverlayPolicy, OverlaySolution, StoppingError,
    StoppingStats,
};
use crate::numerics::{integrate, inverse_ccdf, lambert_w0, Density1D, QuadratureSpec};
use rayon::prelude::*;

/// Golden-section evaluations after the delay-dual grid sweep.
const REFINE_EVALS: usize = 48;
/// Slack on `p * d_max >= 1`, absorbing dual-search tolerance.
const FEAS_SLACK: f64 = 1e-9;

/// Water-filling transmit power at gain `gamma` under water-level dual
/// `lambda_p`, optionally clamped to a peak cap: `(1/λ_P - 1/γ)^+`.
pub fn overlay_power(gamma: f64, lambda_p: f64, p_max: Option<f64>) -> f64 {
    if !(gamma > 0.0) {
        return 0.0;
    }
    let p = (lambda_p.recip() - gamma.recip()).max(0.0);
    match p_max {
        Some(cap) => p.min(cap),
        None => p,
    }
}

/// Rate at gain `gamma` under the same power law, `ln(1 + P(γ)γ)`.
///
/// Uncapped above the water level this is exactly `ln(γ/λ_P)`.
fn overlay_rate(gamma: f64, lambda_p: f64, p_max: Option<f64>) -> f64 {
    if !(gamma > lambda_p) || gamma <= 0.0 {
        return 0.0;
    }
    match p_max {
        Some(cap) if lambda_p.recip() - gamma.recip() > cap => (cap * gamma).ln_1p(),
        _ => (gamma / lambda_p).ln(),
    }
}

/// Threshold multiplier on the water level for continuation margin `a`: the
/// unique root at or above 1 of `ln k - 1 + 1/k = a`, via the principal
/// Lambert branch. `a = 0` pins the branch point exactly at 1; a margin
/// large enough to underflow the exponential pushes the threshold to
/// infinity (the channel is never worth stopping on).
pub(super) fn kappa_for_margin(margin: f64) -> Result<f64, StoppingError> {
    debug_assert!(margin >= 0.0);
    if margin == 0.0 {
        return Ok(1.0);
    }
    let arg = -(-margin - 1.0).exp();
    if arg == 0.0 {
        return Ok(f64::INFINITY);
    }
    let w = lambert_w0(arg)?;
    Ok(-w.recip())
}

/// One backward step: fold channel terms into the tail triple
/// `(throughput, power, success)`.
///
/// `u_i = θc·E[rate; γ ≥ γ_th] + (1 - θ·F̄(γ_th))·u_next`, likewise for
/// power; `p_i = θ·F̄(γ_th) + (1 - θ·F̄(γ_th))·p_next`. An infinite
/// threshold (or θ = 0) passes the tail through untouched.
fn suffix_step(
    gain: &Density1D,
    theta: f64,
    c: f64,
    gamma_th: f64,
    lambda_p: f64,
    p_max: Option<f64>,
    next: (f64, f64, f64),
) -> Result<(f64, f64, f64), StoppingError> {
    if theta == 0.0 || gamma_th == f64::INFINITY {
        return Ok(next);
    }
    let (u_next, s_next, p_next) = next;
    let quad = QuadratureSpec::default();
    // Rate and power vanish below the water level even when the stopping
    // threshold sits lower, so those integrals start at the larger of the two.
    let lower = gamma_th.max(lambda_p);
    let rate = integrate(|g| overlay_rate(g, lambda_p, p_max), gain, lower, quad)?;
    let pow = integrate(|g| overlay_power(g, lambda_p, p_max), gain, lower, quad)?;
    let tail = gain.ccdf(gamma_th)?;
    let skip = 1.0 - theta * tail;
    Ok((
        theta * c * rate + skip * u_next,
        theta * c * pow + skip * s_next,
        theta * tail + skip * p_next,
    ))
}

fn stats_from((throughput, power, success): (f64, f64, f64)) -> StoppingStats {
    StoppingStats {
        throughput,
        power,
        interference: None,
        success_prob: success,
        expected_delay: if success > 0.0 {
            success.recip()
        } else {
            f64::INFINITY
        },
    }
}

fn validate_water_level(lambda_p: f64, p_max: Option<f64>) -> Result<(), StoppingError> {
    if !lambda_p.is_finite() || lambda_p < 0.0 {
        return Err(StoppingError::BadInput(format!(
            "water-level dual {lambda_p} must be finite and nonnegative"
        )));
    }
    if lambda_p == 0.0 && p_max.is_none() {
        return Err(StoppingError::BadInput(
            "zero water level without a peak cap means unbounded power".into(),
        ));
    }
    if let Some(cap) = p_max {
        if !cap.is_finite() || cap <= 0.0 {
            return Err(StoppingError::BadInput(format!(
                "peak power cap {cap} must be positive and finite"
            )));
        }
    }
    Ok(())
}

fn validate_budget(p_avg: f64, p_max: Option<f64>) -> Result<(), StoppingError> {
    if !p_avg.is_finite() || p_avg <= 0.0 {
        return Err(StoppingError::BadInput(format!(
            "average-power budget {p_avg} must be positive and finite"
        )));
    }
    if let Some(cap) = p_max {
        if !cap.is_finite() || cap <= 0.0 {
            return Err(StoppingError::BadInput(format!(
                "peak power cap {cap} must be positive and finite"
            )));
        }
    }
    Ok(())
}

/// Stationary statistics of an arbitrary overlay policy, by backward
/// recursion from the last channel.
pub fn overlay_recursions(
    ens: &ChannelEnsemble,
    policy: &OverlayPolicy,
) -> Result<StoppingStats, StoppingError> {
    if policy.thresholds.len() != ens.channels() {
        return Err(StoppingError::BadInput(format!(
            "policy carries {} thresholds for {} channels",
            policy.thresholds.len(),
            ens.channels()
        )));
    }
    if policy.thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(StoppingError::BadInput(
            "thresholds must be nonnegative; +inf skips a channel".into(),
        ));
    }
    validate_water_level(policy.lambda_p, policy.p_max)?;
    let mut tail = (0.0, 0.0, 0.0);
    for i in (0..ens.channels()).rev() {
        tail = suffix_step(
            ens.gain(),
            ens.theta()[i],
            ens.c()[i],
            policy.thresholds[i],
            policy.lambda_p,
            policy.p_max,
            tail,
        )?;
    }
    Ok(stats_from(tail))
}

/// Backward pass deriving the optimal thresholds for dual prices
/// `(lambda_p, lambda_d)` together with the statistics they induce.
///
/// The continuation margin of channel `i` prices its tail against stopping:
/// `a_i = (u - λ_P s - λ_D(1 - p))^+ / c_i` over the tail triple of
/// channels `i+1..`, and the threshold is `λ_P · kappa(a_i)`.
fn backsolve(
    ens: &ChannelEnsemble,
    lambda_p: f64,
    lambda_d: f64,
    p_max: Option<f64>,
) -> Result<(Vec<f64>, StoppingStats), StoppingError> {
    let m = ens.channels();
    let mut thresholds = vec![0.0; m];
    let mut tail = (0.0, 0.0, 0.0);
    for i in (0..m).rev() {
        let (u, s, p) = tail;
        let margin = (u - lambda_p * s - lambda_d * (1.0 - p)).max(0.0) / ens.c()[i];
        let kappa = kappa_for_margin(margin)?;
        // At zero water level the multiplier alone cannot place a threshold;
        // an infinite multiplier still means "never stop here".
        let gamma_th = if kappa.is_infinite() {
            f64::INFINITY
        } else {
            lambda_p * kappa
        };
        thresholds[i] = gamma_th;
        tail = suffix_step(
            ens.gain(),
            ens.theta()[i],
            ens.c()[i],
            gamma_th,
            lambda_p,
            p_max,
            tail,
        )?;
    }
    Ok((thresholds, stats_from(tail)))
}

/// Optimal stopping thresholds for fixed dual prices; the last channel is
/// always pinned at the water level.
pub fn overlay_thresholds(
    ens: &ChannelEnsemble,
    lambda_p: f64,
    lambda_d: f64,
) -> Result<Vec<f64>, StoppingError> {
    if !lambda_p.is_finite() || lambda_p <= 0.0 {
        return Err(StoppingError::BadInput(format!(
            "water-level dual {lambda_p} must be positive"
        )));
    }
    if !lambda_d.is_finite() || lambda_d < 0.0 {
        return Err(StoppingError::BadInput(format!(
            "delay dual {lambda_d} must be nonnegative"
        )));
    }
    Ok(backsolve(ens, lambda_p, lambda_d, None)?.0)
}

/// Residual of the scalar threshold equation
/// `ln(γ/λ_P) - 1 + λ_P/γ = a_i` at each policy threshold, under the
/// uncapped power law. Zero (to solver tolerance) for policies produced by
/// the dual searches here; skipped channels and zero-water-level policies
/// report zero.
pub fn threshold_residuals(
    ens: &ChannelEnsemble,
    policy: &OverlayPolicy,
) -> Result<Vec<f64>, StoppingError> {
    if policy.thresholds.len() != ens.channels() {
        return Err(StoppingError::BadInput(format!(
            "policy carries {} thresholds for {} channels",
            policy.thresholds.len(),
            ens.channels()
        )));
    }
    let lp = policy.lambda_p;
    if lp == 0.0 {
        return Ok(vec![0.0; ens.channels()]);
    }
    let mut residuals = vec![0.0; ens.channels()];
    let mut tail = (0.0, 0.0, 0.0);
    for i in (0..ens.channels()).rev() {
        let (u, s, p) = tail;
        let margin = (u - lp * s - policy.lambda_d * (1.0 - p)).max(0.0) / ens.c()[i];
        let gamma_th = policy.thresholds[i];
        if gamma_th.is_finite() {
            residuals[i] = (gamma_th / lp).ln() - 1.0 + lp / gamma_th - margin;
        }
        tail = suffix_step(
            ens.gain(),
            ens.theta()[i],
            ens.c()[i],
            gamma_th,
            lp,
            policy.p_max,
            tail,
        )?;
    }
    Ok(residuals)
}

/// Upper end of the water-level bracket: average power is bounded by
/// `Σ θ_i c_i / λ_P`, so the budget pins the dual below
/// `Σ θ_i c_i / p_avg`.
pub(super) fn dual_bracket_top(ens: &ChannelEnsemble, p_avg: f64) -> f64 {
    let weight: f64 = ens.theta().iter().zip(ens.c()).map(|(t, c)| t * c).sum();
    weight / p_avg
}

/// Price of the average-power constraint found by [`find_lambda_p`].
#[derive(Clone, Copy, Debug)]
pub struct PowerDual {
    /// Dual price; zero when the constraint is slack.
    pub lambda_p: f64,
    /// Whether the average-power constraint binds.
    pub active: bool,
}

/// Locate the water-level dual matching the average-power budget at a fixed
/// delay dual, by bisection on the decreasing curve of average power.
///
/// `tol` is absolute on the power residual. Without a peak cap the
/// constraint always binds; see [`solve_overlay`] for the capped case.
pub fn find_lambda_p(
    ens: &ChannelEnsemble,
    lambda_d: f64,
    p_avg: f64,
    tol: f64,
) -> Result<PowerDual, StoppingError> {
    find_lambda_p_capped(ens, lambda_d, p_avg, None, tol)
}

/// [`find_lambda_p`] with an optional peak cap; only with a cap can the
/// average-power constraint come out slack (zero dual, transmit at the cap).
pub(super) fn find_lambda_p_capped(
    ens: &ChannelEnsemble,
    lambda_d: f64,
    p_avg: f64,
    p_max: Option<f64>,
    tol: f64,
) -> Result<PowerDual, StoppingError> {
    validate_budget(p_avg, p_max)?;
    if !lambda_d.is_finite() || lambda_d < 0.0 {
        return Err(StoppingError::BadInput(format!(
            "delay dual {lambda_d} must be nonnegative"
        )));
    }
    if !(tol > 0.0) {
        return Err(StoppingError::BadInput(format!(
            "bisection tolerance {tol} must be positive"
        )));
    }
    let top = dual_bracket_top(ens, p_avg);
    if !(top > 0.0) {
        return Err(StoppingError::BadInput(
            "no channel is ever free: the power constraint is vacuous".into(),
        ));
    }
    let (lambda_p, active) = bisect_decreasing(
        |lp| Ok(backsolve(ens, lp, lambda_d, p_max)?.1.power - p_avg),
        top,
        tol,
    )?;
    if !active && p_max.is_none() {
        // Uncapped average power diverges as the water level drops, so the
        // excess must cross zero; reaching here means the curve misbehaved.
        return Err(StoppingError::BadInput(
            "power constraint reported slack without a peak cap".into(),
        ));
    }
    Ok(PowerDual { lambda_p, active })
}

/// `Σ_{i≥2} θ_i Π_{j=2..i-1}(1 - θ_j)`: success probability of the tail
/// chain when every sensed-free channel is taken.
pub(crate) fn p2_top(ens: &ChannelEnsemble) -> f64 {
    let mut blocked = 1.0;
    let mut total = 0.0;
    for &t in &ens.theta()[1..] {
        total += blocked * t;
        blocked *= 1.0 - t;
    }
    total
}

/// Tail throughput ceiling: the rate integral at the loosest water level
/// times the tail weight `Σ_{i≥2} θ_i c_i`.
pub(crate) fn u2_top(ens: &ChannelEnsemble, lambda_p_max: f64) -> Result<f64, StoppingError> {
    let weight: f64 = ens.theta()[1..]
        .iter()
        .zip(&ens.c()[1..])
        .map(|(t, c)| t * c)
        .sum();
    if weight == 0.0 {
        return Ok(0.0);
    }
    let rate = integrate(
        |g| overlay_rate(g, lambda_p_max, None),
        ens.gain(),
        lambda_p_max,
        QuadratureSpec::default(),
    )?;
    Ok(rate * weight)
}

/// Upper bound on the delay dual: no binding delay cap needs a price above
/// this, so it caps the sweep in [`solve_overlay`].
///
/// `t` compares the loosest water level against the gain quantile at which
/// channel 1 alone could meet the cap. When that quantile sits at or below
/// the water level, or the cap is loose enough that no such quantile exists,
/// `t` saturates at 1 by continuity and the first term drops out.
pub fn lambda_d_upper_bound(
    ens: &ChannelEnsemble,
    p_avg: f64,
    d_max: f64,
) -> Result<f64, StoppingError> {
    if !d_max.is_finite() || d_max < 1.0 {
        return Err(StoppingError::BadInput(format!(
            "delay cap {d_max} must be finite and at least 1"
        )));
    }
    validate_budget(p_avg, None)?;
    let top = dual_bracket_top(ens, p_avg);
    if !(top > 0.0) {
        return Err(StoppingError::BadInput(
            "no channel is ever free: the delay cap is unreachable".into(),
        ));
    }
    let q = (ens.theta()[0] * d_max).recip();
    let t = if q < 1.0 {
        let quantile = inverse_ccdf(ens.gain(), q)?;
        if quantile <= top {
            1.0
        } else {
            top / quantile
        }
    } else {
        1.0
    };
    let u2 = u2_top(ens, top)?;
    Ok((ens.c()[0] * (t.ln() - t + 1.0) + u2) / (1.0 - p2_top(ens)))
}

/// Maximize expected throughput subject to an average-power budget, an
/// optional peak power cap, and an optional expected-delay cap.
///
/// The delay price sweeps a uniform grid below [`lambda_d_upper_bound`] and
/// a golden-section pass refines around the best feasible grid point; every
/// evaluated price re-solves the water level against its own budget. When
/// the zero-price solution already meets the cap it is returned outright.
///
/// An unreachable cap yields [`StoppingError::InfeasibleDelay`] carrying the
/// highest-success solution encountered.
pub fn solve_overlay(
    ens: &ChannelEnsemble,
    p_avg: f64,
    d_max: f64,
    p_max: Option<f64>,
    grid_size: usize,
) -> Result<OverlaySolution, StoppingError> {
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
    let tol = 1e-8 * p_avg;
    let solve_at = |lambda_d: f64| -> Result<OverlaySolution, StoppingError> {
        let dual = find_lambda_p_capped(ens, lambda_d, p_avg, p_max, tol)?;
        let (thresholds, stats) = backsolve(ens, dual.lambda_p, lambda_d, p_max)?;
        Ok(OverlaySolution {
            policy: OverlayPolicy {
                lambda_p: dual.lambda_p,
                lambda_d,
                thresholds,
                p_max,
            },
            stats,
            power_active: dual.active,
        })
    };
    let feasible = |stats: &StoppingStats| {
        d_max.is_infinite() || stats.success_prob * d_max >= 1.0 - FEAS_SLACK
    };
    let base = solve_at(0.0)?;
    if feasible(&base.stats) {
        return Ok(base);
    }
    let bound = lambda_d_upper_bound(ens, p_avg, d_max)?;
    if !bound.is_finite() {
        return Err(StoppingError::BadInput(format!(
            "delay-price bound {bound} is not finite"
        )));
    }
    if bound <= 0.0 {
        // Pricing delay cannot move this policy (single channel, say), and
        // the unpriced solution already misses the cap.
        return Err(StoppingError::InfeasibleDelay(Box::new(base)));
    }
    let step = bound / grid_size as f64;
    let sweep: Vec<OverlaySolution> = (1..grid_size)
        .into_par_iter()
        .map(|k| solve_at(k as f64 * step))
        .collect::<Result<_, _>>()?;
    let mut anchor: Option<&OverlaySolution> = None;
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
        return Err(StoppingError::InfeasibleDelay(Box::new(most_likely.clone())));
    };
    // Golden-section refinement around the anchor. Infeasible points score
    // minus infinity; ties keep the right half, where success probability is
    // no lower.
    let mut best = anchor.clone();
    let score = |lambda_d: f64, best: &mut OverlaySolution| -> Result<f64, StoppingError> {
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

/// Stop at the first free channel: every threshold pinned to the water
/// level, so any transmit-worthy gain is taken. The water level still
/// solves the average-power budget. Fastest expected delay any
/// budget-respecting overlay policy can reach.
pub fn no_osr(
    ens: &ChannelEnsemble,
    p_avg: f64,
    p_max: Option<f64>,
) -> Result<OverlaySolution, StoppingError> {
    validate_budget(p_avg, p_max)?;
    let top = dual_bracket_top(ens, p_avg);
    if !(top > 0.0) {
        return Err(StoppingError::BadInput(
            "no channel is ever free: the power constraint is vacuous".into(),
        ));
    }
    let eval = |lp: f64| -> Result<(f64, f64, f64), StoppingError> {
        let mut tail = (0.0, 0.0, 0.0);
        for i in (0..ens.channels()).rev() {
            tail = suffix_step(ens.gain(), ens.theta()[i], ens.c()[i], lp, lp, p_max, tail)?;
        }
        Ok(tail)
    };
    let (lambda_p, active) =
        bisect_decreasing(|lp| Ok(eval(lp)?.1 - p_avg), top, 1e-8 * p_avg)?;
    if !active && p_max.is_none() {
        return Err(StoppingError::BadInput(
            "power constraint reported slack without a peak cap".into(),
        ));
    }
    let stats = stats_from(eval(lambda_p)?);
    Ok(OverlaySolution {
        policy: OverlayPolicy {
            lambda_p,
            lambda_d: 0.0,
            thresholds: vec![lambda_p; ens.channels()],
            p_max,
        },
        stats,
        power_active: active,
    })
}

/// Sense-`k`-then-pick-best baseline solution.
#[derive(Clone, Debug)]
pub struct KOutOfMSolution {
    /// Water-level dual matching the average-power budget.
    pub lambda_p: f64,
    /// Indices (original sensing order) of the `k` sensed channels: the `k`
    /// largest availability probabilities, ties to the earlier channel.
    pub selected: Vec<usize>,
    pub stats: StoppingStats,
}

/// Sense a fixed set of `k` channels up front, then transmit on the best
/// free one (if any) with water-filling power. One shot per slot: a slot
/// whose selected channels are all busy, or whose best free gain sits below
/// the water level, is lost.
pub fn k_out_of_m(
    ens: &ChannelEnsemble,
    k: usize,
    p_avg: f64,
) -> Result<KOutOfMSolution, StoppingError> {
    if k == 0 || k > ens.channels() {
        return Err(StoppingError::BadInput(format!(
            "k = {k} outside 1..={}",
            ens.channels()
        )));
    }
    validate_budget(p_avg, None)?;
    if ens.gain().is_discrete() {
        return Err(StoppingError::BadInput(
            "best-of-k selection needs a continuous gain density".into(),
        ));
    }
    let mut order: Vec<usize> = (0..ens.channels()).collect();
    order.sort_by(|&a, &b| ens.theta()[b].total_cmp(&ens.theta()[a]).then(a.cmp(&b)));
    let mut selected = order[..k].to_vec();
    selected.sort_unstable();
    if selected.iter().all(|&ch| ens.theta()[ch] == 0.0) {
        return Err(StoppingError::BadInput(
            "selected channels are never free".into(),
        ));
    }
    let c_k = 1.0 - k as f64 * ens.tau_over_t();
    // Free-count distribution over the selected set (Poisson binomial).
    let mut weights = vec![0.0; k + 1];
    weights[0] = 1.0;
    for (n, &ch) in selected.iter().enumerate() {
        let t = ens.theta()[ch];
        for m in (1..=n + 1).rev() {
            weights[m] = weights[m] * (1.0 - t) + weights[m - 1] * t;
        }
        weights[0] *= 1.0 - t;
    }
    // Best gain among m free channels has density m f F^{m-1}; building it
    // through the normalization check guards the transcription.
    let (lo, hi) = ens.gain().support();
    let mut best_of = Vec::with_capacity(k);
    for m in 1..=k {
        let gain = ens.gain().clone();
        best_of.push(Density1D::from_pdf(
            move |g| {
                let cdf = 1.0 - gain.ccdf(g).unwrap_or(f64::NAN);
                m as f64 * gain.pdf_at(g) * cdf.powi(m as i32 - 1)
            },
            lo,
            hi,
        )?);
    }
    let eval = |lp: f64| -> Result<(f64, f64, f64), StoppingError> {
        let quad = QuadratureSpec::default();
        let free_tail = ens.gain().ccdf(lp)?;
        let mut u = 0.0;
        let mut s = 0.0;
        let mut p = 0.0;
        for m in 1..=k {
            let w = weights[m];
            if w == 0.0 {
                continue;
            }
            u += w * integrate(|g| overlay_rate(g, lp, None), &best_of[m - 1], lp, quad)?;
            s += w * integrate(|g| overlay_power(g, lp, None), &best_of[m - 1], lp, quad)?;
            p += w * (1.0 - (1.0 - free_tail).powi(m as i32));
        }
        Ok((c_k * u, c_k * s, p))
    };
    let (lambda_p, active) =
        bisect_decreasing(|lp| Ok(eval(lp)?.1 - p_avg), c_k / p_avg, 1e-8 * p_avg)?;
    if !active {
        return Err(StoppingError::BadInput(
            "power constraint reported slack without a peak cap".into(),
        ));
    }
    let stats = stats_from(eval(lambda_p)?);
    Ok(KOutOfMSolution {
        lambda_p,
        selected,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bisect;
    use crate::rng::{Quantity, Stream};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ten channels, availabilities 0.05i, tau/T = 0.05, unit-mean
    /// exponential gains.
    fn reference_ensemble() -> ChannelEnsemble {
        let theta = (1..=10).map(|i| 0.05 * i as f64).collect();
        ChannelEnsemble::new(theta, 0.05, Density1D::exponential(1.0)).unwrap()
    }

    #[test]
    fn water_filling_power() {
        assert_eq!(overlay_power(2.0, 1.0, None), 0.5);
        assert_eq!(overlay_power(0.5, 1.0, None), 0.0);
        assert_eq!(overlay_power(4.0, 0.5, Some(1.0)), 1.0);
    }

    #[test]
    fn single_channel_point_mass_recursion() {
        // Water level 3/7 puts exactly power 2 on a gain of 3.
        let ens =
            ChannelEnsemble::new(vec![0.6], 0.05, Density1D::point_mass(3.0)).unwrap();
        let policy = OverlayPolicy {
            lambda_p: 3.0 / 7.0,
            lambda_d: 0.0,
            thresholds: vec![0.0],
            p_max: None,
        };
        let stats = overlay_recursions(&ens, &policy).unwrap();
        assert!((stats.throughput - 0.6 * 0.95 * 7.0f64.ln()).abs() < 1e-12);
        assert!((stats.power - 1.14).abs() < 1e-12);
        assert!((stats.success_prob - 0.6).abs() < 1e-12);
        assert!((stats.expected_delay - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn infinite_thresholds_block_everything() {
        let ens = ChannelEnsemble::new(
            vec![0.5, 0.7, 0.9],
            0.05,
            Density1D::exponential(1.0),
        )
        .unwrap();
        let policy = OverlayPolicy {
            lambda_p: 1.0,
            lambda_d: 0.0,
            thresholds: vec![f64::INFINITY; 3],
            p_max: None,
        };
        let stats = overlay_recursions(&ens, &policy).unwrap();
        assert_eq!(stats.throughput, 0.0);
        assert_eq!(stats.power, 0.0);
        assert_eq!(stats.success_prob, 0.0);
        assert_eq!(stats.expected_delay, f64::INFINITY);
    }

    #[test]
    fn recursions_reject_bad_policies() {
        let ens =
            ChannelEnsemble::new(vec![0.5], 0.05, Density1D::exponential(1.0)).unwrap();
        let bad_len = OverlayPolicy {
            lambda_p: 1.0,
            lambda_d: 0.0,
            thresholds: vec![1.0, 2.0],
            p_max: None,
        };
        assert!(overlay_recursions(&ens, &bad_len).is_err());
        let negative = OverlayPolicy {
            lambda_p: 1.0,
            lambda_d: 0.0,
            thresholds: vec![-0.1],
            p_max: None,
        };
        assert!(overlay_recursions(&ens, &negative).is_err());
        let zero_level = OverlayPolicy {
            lambda_p: 0.0,
            lambda_d: 0.0,
            thresholds: vec![1.0],
            p_max: None,
        };
        assert!(overlay_recursions(&ens, &zero_level).is_err());
    }

    #[test]
    fn threshold_matches_scalar_equation_oracle() {
        let ens = ChannelEnsemble::new(
            vec![0.5, 0.5],
            0.05,
            Density1D::exponential(1.0),
        )
        .unwrap();
        let lp = 0.3;
        let th = overlay_thresholds(&ens, lp, 0.0).unwrap();
        // Last channel has an empty tail: branch point exactly at the level.
        assert_eq!(th[1], lp);
        // Tail statistics through a single-channel ensemble with c = 0.90.
        let suffix =
            ChannelEnsemble::new(vec![0.5], 0.10, Density1D::exponential(1.0)).unwrap();
        let tail_policy = OverlayPolicy {
            lambda_p: lp,
            lambda_d: 0.0,
            thresholds: vec![lp],
            p_max: None,
        };
        let tail = overlay_recursions(&suffix, &tail_policy).unwrap();
        let margin = (tail.throughput - lp * tail.power) / 0.95;
        assert!(margin > 0.0);
        let root = bisect(
            |g| (g / lp).ln() - 1.0 + lp / g - margin,
            lp,
            1e6,
            1e-12,
            200,
        )
        .unwrap();
        assert!(
            (th[0] - root).abs() < 1e-8,
            "lambert {} vs bisection {root}",
            th[0]
        );
        let residuals = threshold_residuals(
            &ens,
            &OverlayPolicy {
                lambda_p: lp,
                lambda_d: 0.0,
                thresholds: th,
                p_max: None,
            },
        )
        .unwrap();
        assert!(residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn power_dual_hits_budget() {
        let ens = reference_ensemble();
        assert!((dual_bracket_top(&ens, 10.0) - 0.17875).abs() < 1e-15);
        let dual = find_lambda_p(&ens, 0.0, 10.0, 1e-7).unwrap();
        assert!(dual.active);
        assert!(dual.lambda_p > 0.0 && dual.lambda_p <= 0.17875 + 1e-12);
        let thresholds = overlay_thresholds(&ens, dual.lambda_p, 0.0).unwrap();
        let stats = overlay_recursions(
            &ens,
            &OverlayPolicy {
                lambda_p: dual.lambda_p,
                lambda_d: 0.0,
                thresholds,
                p_max: None,
            },
        )
        .unwrap();
        assert!((stats.power - 10.0).abs() <= 1.1e-7, "s1 = {}", stats.power);
    }

    #[test]
    fn average_power_decreases_in_water_level() {
        let ens = reference_ensemble();
        let top = dual_bracket_top(&ens, 10.0);
        let mut prev = f64::INFINITY;
        for step in 1..=20 {
            let lp = top * step as f64 / 20.0;
            let s1 = backsolve(&ens, lp, 0.0, None).unwrap().1.power;
            assert!(s1 < prev, "s1({lp}) = {s1} not below {prev}");
            prev = s1;
        }
    }

    #[test]
    fn delay_price_bound_pieces() {
        let m2 = ChannelEnsemble::new(vec![0.9, 0.5], 0.05, Density1D::exponential(1.0))
            .unwrap();
        assert_eq!(p2_top(&m2), 0.5);
        let m3 =
            ChannelEnsemble::new(vec![0.9, 0.4, 0.6], 0.05, Density1D::exponential(1.0))
                .unwrap();
        assert!((p2_top(&m3) - (0.4 + 0.6 * 0.6)).abs() < 1e-15);

        // Both caps below land in the saturated t = 1 regime, one because the
        // channel-1 quantile sits under the bracket top, one because no
        // quantile exists at all; the bound then reduces to u2/(1 - p2) and
        // cannot depend on the cap.
        let top = dual_bracket_top(&m2, 1.0);
        let quantile = inverse_ccdf(m2.gain(), 1.0 / (0.9 * 3.0)).unwrap();
        assert!(quantile <= top);
        let loose = lambda_d_upper_bound(&m2, 1.0, 3.0).unwrap();
        let tight = lambda_d_upper_bound(&m2, 1.0, 1.0).unwrap();
        assert!((loose - tight).abs() < 1e-12);
        let by_hand = u2_top(&m2, top).unwrap() / (1.0 - 0.5);
        assert!((loose - by_hand).abs() < 1e-12);

        assert!(lambda_d_upper_bound(&m2, 1.0, f64::INFINITY).is_err());

        let reference = reference_ensemble();
        let bound = lambda_d_upper_bound(&reference, 10.0, 1.02).unwrap();
        assert!(bound.is_finite() && bound > 0.0);

        // Monte Carlo cross-check of the tail rate integral in u2.
        let top = dual_bracket_top(&reference, 10.0);
        let gain = reference.gain();
        let stream = Stream::new(7, 0, Quantity::Gain);
        let n = 200_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for t in 0..n {
            let g = gain.sample(stream.uniform(t)).unwrap();
            let r = if g > top { (g / top).ln() } else { 0.0 };
            sum += r;
            sum_sq += r * r;
        }
        let mc = sum / n as f64;
        let sd = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
        let weight: f64 = reference.theta()[1..]
            .iter()
            .zip(&reference.c()[1..])
            .map(|(t, c)| t * c)
            .sum();
        let integral = u2_top(&reference, top).unwrap() / weight;
        assert!(
            (mc - integral).abs() < 3.0 * sd,
            "mc {mc} vs integral {integral} (sd {sd})"
        );
    }

    #[test]
    fn unconstrained_delay_shortcut() {
        let ens = reference_ensemble();
        let sol = solve_overlay(&ens, 10.0, f64::INFINITY, None, 64).unwrap();
        assert_eq!(sol.policy.lambda_d, 0.0);
        assert!(sol.power_active);
        let floor = sol.policy.lambda_p - 1e-9;
        assert!(sol.policy.thresholds.iter().all(|&t| t >= floor));
        assert_eq!(*sol.policy.thresholds.last().unwrap(), sol.policy.lambda_p);
    }

    #[test]
    fn constrained_delay_and_baseline_ordering() {
        let ens = reference_ensemble();
        let unc = solve_overlay(&ens, 10.0, f64::INFINITY, None, 64).unwrap();
        let base = no_osr(&ens, 10.0, None).unwrap();
        assert!((base.stats.power - 10.0).abs() < 1.1e-7);
        // First-free stopping is the fastest budget-respecting policy.
        assert!(base.stats.success_prob > unc.stats.success_prob);
        let d_max =
            0.5 * (base.stats.expected_delay + unc.stats.expected_delay);
        let con = solve_overlay(&ens, 10.0, d_max, None, 64).unwrap();
        assert!(con.policy.lambda_d > 0.0);
        assert!(con.stats.success_prob * d_max >= 1.0 - 1e-9);
        assert!(con.stats.throughput <= unc.stats.throughput + 1e-12);
        assert!(con.stats.throughput >= base.stats.throughput - 1e-9);
        assert!(base.stats.success_prob >= con.stats.success_prob - 1e-9);
        let floor = con.policy.lambda_p - 1e-9;
        assert!(con.policy.thresholds.iter().all(|&t| t >= floor));
    }

    #[test]
    fn unreachable_delay_cap_reports_best_success() {
        let ens = reference_ensemble();
        let unc = solve_overlay(&ens, 10.0, f64::INFINITY, None, 64).unwrap();
        match solve_overlay(&ens, 10.0, 1.02, None, 64) {
            Err(StoppingError::InfeasibleDelay(best)) => {
                assert!(best.stats.success_prob >= unc.stats.success_prob);
                assert!(best.stats.success_prob * 1.02 < 1.0);
            }
            other => panic!("expected delay infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn probe_order_matters_best_channel_first_wins() {
        // Probing the likeliest-free channel while the time share is still
        // large beats saving it for last.
        let ens = reference_ensemble();
        let mut reversed: Vec<f64> = ens.theta().to_vec();
        reversed.reverse();
        let desc =
            ChannelEnsemble::new(reversed, 0.05, Density1D::exponential(1.0)).unwrap();
        let up = solve_overlay(&ens, 10.0, f64::INFINITY, None, 64).unwrap();
        let down = solve_overlay(&desc, 10.0, f64::INFINITY, None, 64).unwrap();
        assert!(down.stats.throughput > up.stats.throughput);
    }

    #[test]
    fn slack_budget_under_peak_cap() {
        let ens = ChannelEnsemble::new(
            vec![0.9, 0.9],
            0.05,
            Density1D::exponential(1.0),
        )
        .unwrap();
        // Cap 0.1 keeps average power under 0.1 << 1, so the budget is slack.
        let sol = solve_overlay(&ens, 1.0, f64::INFINITY, Some(0.1), 8).unwrap();
        assert!(!sol.power_active);
        assert_eq!(sol.policy.lambda_p, 0.0);
        assert!(sol.policy.thresholds.iter().all(|&t| t == 0.0));
        assert!(sol.stats.power < 1.0);
        assert!(sol.stats.throughput > 0.0);
    }

    #[test]
    fn pick_best_selection_and_degeneracy() {
        let ens = ChannelEnsemble::new(
            vec![0.2, 0.8, 0.5],
            0.05,
            Density1D::exponential(1.0),
        )
        .unwrap();
        let sol = k_out_of_m(&ens, 2, 2.0).unwrap();
        assert_eq!(sol.selected, vec![1, 2]);
        let tie = ChannelEnsemble::new(
            vec![0.5, 0.3, 0.5],
            0.05,
            Density1D::exponential(1.0),
        )
        .unwrap();
        assert_eq!(k_out_of_m(&tie, 1, 2.0).unwrap().selected, vec![0]);
        assert_eq!(
            k_out_of_m(&reference_ensemble(), 5, 10.0).unwrap().selected,
            vec![5, 6, 7, 8, 9]
        );

        // With one channel, sensing one of one is exactly first-free stopping.
        let single =
            ChannelEnsemble::new(vec![0.6], 0.05, Density1D::exponential(1.0)).unwrap();
        let pick = k_out_of_m(&single, 1, 2.0).unwrap();
        let first_free = no_osr(&single, 2.0, None).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
        assert!(rel(pick.stats.throughput, first_free.stats.throughput) < 1e-6);
        assert!(rel(pick.stats.power, first_free.stats.power) < 1e-6);
        assert!(rel(pick.stats.success_prob, first_free.stats.success_prob) < 1e-6);
    }

    #[test]
    fn random_ensembles_keep_threshold_floor_and_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..8 {
            let m = rng.gen_range(1..=6usize);
            let theta: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
            let tau = rng.gen_range(0.01..0.5 / m as f64);
            let mean = rng.gen_range(0.5..2.0);
            let p_avg = rng.gen_range(1.0..10.0);
            let ens =
                ChannelEnsemble::new(theta, tau, Density1D::exponential(mean)).unwrap();
            let sol = solve_overlay(&ens, p_avg, f64::INFINITY, None, 8).unwrap();
            let floor = sol.policy.lambda_p - 1e-9;
            assert!(
                sol.policy.thresholds.iter().all(|&t| t >= floor),
                "round {round}: threshold under water level"
            );
            let residuals = threshold_residuals(&ens, &sol.policy).unwrap();
            assert!(
                residuals.iter().all(|r| r.abs() <= 1e-7),
                "round {round}: residuals {residuals:?}"
            );
            assert!((sol.stats.power - p_avg).abs() <= 1e-7 * p_avg * 1.1);
            assert!(sol.stats.success_prob <= 1.0 + 1e-12);
            assert!(sol.stats.expected_delay >= 1.0 - 1e-12);
        }
    }
}
