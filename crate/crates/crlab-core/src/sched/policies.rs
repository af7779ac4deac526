//! Frame planners: priority orders, power parameters, and the virtual-queue
//! updates that close the loop between frames.

use super::{FleetConfig, FramePlanState, QueueingConstants, SchedError, VirtualQueueState};
use crate::numerics::golden_min;

/// Evaluations per one-dimensional power search.
const POWER_EVALS: u32 = 64;

/// The two halves of the per-user frame objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiTerms {
    /// Delay pressure: `y * lambda * w_up`.
    pub delay: f64,
    /// Interference pressure: `x * rho(p) * p`.
    pub interference: f64,
    pub total: f64,
}

/// Frame objective for user `su` at power `p` when higher priorities carry
/// at most `rho_prev_max` load.
pub fn psi_terms(
    consts: &QueueingConstants,
    su: usize,
    y: f64,
    x: f64,
    p: f64,
    rho_prev_max: f64,
) -> Result<PsiTerms, SchedError> {
    let w = consts.w_up(su, p, rho_prev_max)?;
    let delay = y * consts.lambda(su) * w;
    let interference = x * consts.rho(su, p) * p;
    Ok(PsiTerms {
        delay,
        interference,
        total: delay + interference,
    })
}

/// Golden-section minimizer of the frame objective over the feasible power
/// range. Saturated powers score infinity; if nothing is finite the user
/// cannot be placed at this position.
fn best_power(
    consts: &QueueingConstants,
    su: usize,
    y: f64,
    x: f64,
    rho_prev_max: f64,
) -> Result<(f64, f64), SchedError> {
    let lo = consts.p_min(su)?;
    let hi = consts.p_max();
    let (p, val) = golden_min(
        |p| {
            psi_terms(consts, su, y, x, p, rho_prev_max)
                .map(|t| t.total)
                .unwrap_or(f64::INFINITY)
        },
        lo,
        hi,
        POWER_EVALS,
    );
    if val.is_finite() {
        Ok((p, val))
    } else {
        Err(SchedError::Saturated { su })
    }
}

/// One rung of the worst-case load chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainStep {
    pub su: usize,
    /// Minimizing power parameter for this rung.
    pub power: f64,
    /// Objective value achieved at that power.
    pub psi: f64,
    /// Worst-case load of this user and everyone above it.
    pub rho_cum: f64,
}

/// Walks a fixed priority order front to back, at each rung minimizing the
/// frame objective given the load accumulated so far, then adding the
/// minimizer's own load. The cumulative loads bound what any joint power
/// choice can reach, so downstream waiting bounds stay valid.
pub fn brho_max_chain(
    consts: &QueueingConstants,
    priority: &[usize],
    y: &[f64],
    x: f64,
) -> Result<Vec<ChainStep>, SchedError> {
    let n = consts.n();
    if priority.len() != n || y.len() != n {
        return Err(SchedError::BadInput(
            "priority and y must cover every user exactly once".into(),
        ));
    }
    let mut seen = vec![false; n];
    for &su in priority {
        if su >= n || seen[su] {
            return Err(SchedError::BadInput("priority is not a permutation".into()));
        }
        seen[su] = true;
    }
    let mut prev = 0.0;
    let mut steps = Vec::with_capacity(n);
    for &su in priority {
        let (power, psi) = best_power(consts, su, y[su], x, prev)?;
        prev += consts.rho(su, power);
        steps.push(ChainStep {
            su,
            power,
            psi,
            rho_cum: prev,
        });
    }
    Ok(steps)
}

pub(crate) fn sort_descending(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    // Ties go to the lower index.
    idx.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Delay-oriented plan: full power for everyone, priority by descending
/// `y_i * mu_i(p_max)`. Ignores average interference entirely.
pub fn doic_frame_setup(consts: &QueueingConstants, state: &VirtualQueueState) -> FramePlanState {
    debug_assert_eq!(state.y.len(), consts.n());
    let keys: Vec<f64> = (0..consts.n())
        .map(|i| state.y[i] * consts.mu(i, consts.p_max()))
        .collect();
    FramePlanState {
        priority: sort_descending(&keys),
        power_params: vec![consts.p_max(); consts.n()],
    }
}

/// Joint priority and power plan by dynamic programming over user subsets.
///
/// Stage `k` holds, for every size-`k` subset, the cheapest way to fill the
/// top `k` priority slots with exactly that subset: its objective, the load
/// it accumulates, and the last user placed. Each transition re-runs the
/// same power search the chain uses, against the stored subset load. The
/// returned plan is therefore reproducible by `brho_max_chain` on its
/// priority order.
pub fn doac_pow_alloc(
    consts: &QueueingConstants,
    state: &VirtualQueueState,
) -> Result<FramePlanState, SchedError> {
    let n = consts.n();
    if state.y.len() != n {
        return Err(SchedError::BadInput("state does not match the fleet".into()));
    }
    if n > 20 {
        return Err(SchedError::BadInput(
            "subset table too large; cap the fleet at 20 users".into(),
        ));
    }
    let full: usize = (1 << n) - 1;
    let mut obj = vec![f64::INFINITY; full + 1];
    let mut load = vec![0.0f64; full + 1];
    let mut last: Vec<Option<(usize, f64)>> = vec![None; full + 1];
    obj[0] = 0.0;
    for mask in 1..=full {
        let mut best: Option<(usize, f64, f64)> = None;
        let mut rest = mask;
        while rest != 0 {
            let su = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let without = mask & !(1 << su);
            if !obj[without].is_finite() {
                continue;
            }
            let (power, psi) = match best_power(consts, su, state.y[su], state.x, load[without]) {
                Ok(v) => v,
                Err(SchedError::Saturated { .. }) => continue,
                Err(e) => return Err(e),
            };
            let total = obj[without] + psi;
            // Strict improvement keeps the lowest eligible index on ties.
            if best.map_or(true, |(_, _, t)| total < t) {
                best = Some((su, power, total));
            }
        }
        if let Some((su, power, total)) = best {
            obj[mask] = total;
            load[mask] = load[mask & !(1 << su)] + consts.rho(su, power);
            last[mask] = Some((su, power));
        }
    }
    if !obj[full].is_finite() {
        let su = (0..n)
            .find(|&i| !obj[1 << i].is_finite())
            .unwrap_or(0);
        return Err(SchedError::Saturated { su });
    }
    let mut priority = vec![0usize; n];
    let mut power_params = vec![0.0f64; n];
    let mut mask = full;
    for rank in (0..n).rev() {
        let (su, power) = last[mask].expect("finite objective implies a full path");
        priority[rank] = su;
        power_params[su] = power;
        mask &= !(1 << su);
    }
    Ok(FramePlanState {
        priority,
        power_params,
    })
}

/// Near-optimal plan without the subset table: bang-bang powers (minimum
/// when the interference queue outweighs the delay queue, full otherwise),
/// then a single descending sort of `y_i * mu_i` at the chosen power.
pub fn subopt_frame_setup(
    consts: &QueueingConstants,
    state: &VirtualQueueState,
) -> Result<FramePlanState, SchedError> {
    let n = consts.n();
    if state.y.len() != n {
        return Err(SchedError::BadInput("state does not match the fleet".into()));
    }
    let p_min = consts.p_min_global()?;
    let power_params: Vec<f64> = (0..n)
        .map(|i| if state.x > state.y[i] { p_min } else { consts.p_max() })
        .collect();
    let keys: Vec<f64> = (0..n)
        .map(|i| state.y[i] * consts.mu(i, power_params[i]))
        .collect();
    Ok(FramePlanState {
        priority: sort_descending(&keys),
        power_params,
    })
}

/// What one finished frame feeds back into the virtual queues.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTrace {
    /// Waiting times of the packets that arrived during the frame, per user.
    pub waits: Vec<Vec<f64>>,
    /// Transmit power times interference gain, summed over the frame's slots.
    pub interference_energy: f64,
    /// Frame length in slots.
    pub t_k: u64,
}

/// Closes a frame: applies the delay credits, accumulates waiting into the
/// delay queues, and settles the average-interference debt.
///
/// The credit for user `i` is all of `d_i` when `v < y_i * lambda_i` at the
/// frame's close (the same `y_i` its planner saw, since queues only move
/// here) and nothing otherwise. The interference queue stays zero unless an
/// average budget is configured.
pub fn update_virtual_queues(
    fleet: &FleetConfig,
    state: &VirtualQueueState,
    trace: &FrameTrace,
) -> Result<VirtualQueueState, SchedError> {
    let n = fleet.sus.len();
    if state.y.len() != n || state.r.len() != n || trace.waits.len() != n {
        return Err(SchedError::BadInput("state does not match the fleet".into()));
    }
    if trace.t_k == 0 {
        return Err(SchedError::BadInput("frames are at least one slot".into()));
    }
    let mut next = state.clone();
    for i in 0..n {
        let credit = if fleet.v < state.y[i] * fleet.sus[i].lambda {
            fleet.sus[i].d
        } else {
            0.0
        };
        let delta: f64 = trace.waits[i].iter().map(|w| w - credit).sum();
        next.y[i] = (state.y[i] + delta).max(0.0);
        next.r[i] = credit;
    }
    if let Some(i_avg) = fleet.i_avg {
        next.x = (state.x + trace.interference_energy - i_avg * trace.t_k as f64).max(0.0);
    }
    next.frame_index = state.frame_index + 1;
    Ok(next)
}

/// Discounts channel estimates so the planner never overshoots: the uplink
/// gain estimate can read high by a factor `1 + alpha/2`, the interference
/// gain low by `1 - alpha/2`. Requires `0 <= alpha < 2`.
pub fn csi_adjust(gamma_est: f64, g_est: f64, alpha: f64) -> Result<(f64, f64), SchedError> {
    if !(0.0..2.0).contains(&alpha) {
        return Err(SchedError::BadInput(
            "relative csi error must sit in [0, 2)".into(),
        ));
    }
    Ok((gamma_est / (1.0 + alpha / 2.0), g_est / (1.0 - alpha / 2.0)))
}
