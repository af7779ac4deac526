//! Rate and queueing layer: per-slot rates, per-packet service statistics,
//! and the priority-queue waiting bound the frame planners optimize.

use super::{FleetConfig, SchedError, SuProfile};
use crate::numerics::{
    bisect, composite_gk15_vec, integrate, MonotoneCubic, QuadratureSpec,
};

/// Power grid size for the cached mean-rate curve.
const MU_POINTS: usize = 128;
/// Grid size for the cached rate-versus-effective-power curve.
const RATE_POINTS: usize = 160;
/// The mean-rate cache spans `[p_max * MU_SPAN, p_max]` in power.
const MU_SPAN: f64 = 1e-4;
/// The rate curve spans `[p_max * RATE_SPAN, p_max]` in effective power;
/// effective powers below that carry negligible rate and clamp down.
const RATE_SPAN: f64 = 1e-8;
/// Panels for the fixed-order quadrature over the interference gain.
const G_PANELS: usize = 16;

fn quad() -> QuadratureSpec {
    QuadratureSpec {
        rel_tol: 1e-6,
        ..QuadratureSpec::default()
    }
}

/// Bits carried in one slot: `log2(1 + min(i_inst / g, p) * gamma)`,
/// optionally clamped to `r_max`.
///
/// `g <= 0` means the primary receiver is out of reach, so the power
/// parameter alone binds. The instantaneous interference cap holds by
/// construction: the transmit power never exceeds `i_inst / g`.
pub fn effective_rate(p: f64, g: f64, gamma: f64, i_inst: f64, r_max: Option<f64>) -> f64 {
    let power = if g > 0.0 { (i_inst / g).min(p) } else { p };
    let rate = (1.0 + power * gamma).log2();
    match r_max {
        Some(cap) => rate.min(cap),
        None => rate,
    }
}

/// Transmit power actually used in a slot: the power parameter, lowered
/// just enough to keep the received interference at or below `i_inst`.
pub fn slot_power(p: f64, g: f64, i_inst: f64) -> f64 {
    if g > 0.0 {
        (i_inst / g).min(p)
    } else {
        p
    }
}

/// First two moments of the per-packet service time, in slots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServiceMoments {
    pub mean: f64,
    pub second_moment: f64,
}

/// Service-time moments when each slot delivers the whole packet with
/// probability `success` and nothing otherwise.
///
/// The packet needs `packet_bits` successful slots; the count of failures is
/// negative binomial, which gives `second_moment` the closed form
/// `(L^2 + L(1 - success)) / success^2`.
pub fn service_moments(success: f64, packet_bits: u32) -> Result<ServiceMoments, SchedError> {
    if !(success > 0.0 && success <= 1.0) {
        return Err(SchedError::BadInput(
            "success probability must sit in (0, 1]".into(),
        ));
    }
    if packet_bits == 0 {
        return Err(SchedError::BadInput("packets must carry bits".into()));
    }
    let l = packet_bits as f64;
    let q = 1.0 - success;
    let fail_mean = q * l / success;
    let fail_second = (q * q * l * l + q * l) / (success * success);
    Ok(ServiceMoments {
        mean: l / success,
        second_moment: fail_second + 2.0 * l * fail_mean + l * l,
    })
}

/// Mean waiting of a nonpreemptive priority class: `mu` and `rho` are the
/// class's own service rate and load, `t_r` the residual-work constant, and
/// `rho_prev_max` the worst-case load of every higher class combined.
///
/// `None` means the class saturates: higher classes leave no capacity.
pub fn waiting_bound(mu: f64, rho: f64, t_r: f64, rho_prev_max: f64) -> Option<f64> {
    let head = 1.0 - rho_prev_max;
    let slack = head - rho;
    if head <= 0.0 || slack <= 0.0 {
        return None;
    }
    Some((1.0 / mu + t_r / slack) / head)
}

/// Mean rate per packet at power parameter `p`: the two-dimensional
/// expectation of `effective_rate` over the gain pair, divided by the packet
/// length. Exact quadrature, no caching; `QueueingConstants` holds the fast
/// interpolated version the planners use.
pub fn mu_of_power(
    su: &SuProfile,
    p: f64,
    i_inst: f64,
    r_max: Option<f64>,
) -> Result<f64, SchedError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(SchedError::BadInput("power must be positive".into()));
    }
    if !(i_inst > 0.0 && i_inst.is_finite()) {
        return Err(SchedError::BadInput("i_inst must be positive".into()));
    }
    if su.packet_bits == 0 {
        return Err(SchedError::BadInput("packets must carry bits".into()));
    }
    let spec = quad();
    let over_gamma = |power: f64| -> Result<f64, SchedError> {
        if power <= 0.0 {
            return Ok(0.0);
        }
        let lo = su.gain_density.support().0;
        Ok(integrate(
            |gamma| effective_rate(power, 0.0, gamma, i_inst, r_max),
            &su.gain_density,
            lo,
            spec,
        )?)
    };
    let mean = match su.interference_density.atoms() {
        Some(atoms) => {
            let mut acc = 0.0;
            for &(g, w) in atoms {
                acc += w * over_gamma(slot_power(p, g, i_inst))?;
            }
            acc
        }
        None => {
            // Below g* the power parameter binds; above it the cap does.
            let g_star = i_inst / p;
            let (g_lo, g_hi) = su.interference_density.support();
            let head = over_gamma(p)? * (1.0 - su.interference_density.ccdf(g_star)?);
            let top = if g_hi.is_finite() {
                g_hi
            } else {
                su.interference_density.cutoff(spec.tail_mass)?
            };
            let from = g_star.max(g_lo);
            let tail = if from < top {
                composite_gk15_vec(
                    |g| {
                        Ok::<_, SchedError>([over_gamma(i_inst / g)?
                            * su.interference_density.pdf_at(g)])
                    },
                    from,
                    top,
                    G_PANELS,
                )?[0]
            } else {
                0.0
            };
            head + tail
        }
    };
    Ok(mean / su.packet_bits as f64)
}

struct SuCurves {
    /// Mean rate per packet against ln(power), increasing.
    mu: MonotoneCubic,
    /// Probability a slot delivers any bits. Independent of the power
    /// parameter once it is positive: the capped power stays positive, so
    /// the rate vanishes only when the gain does.
    p_pos: f64,
}

impl SuCurves {
    fn mu_at(&self, p: f64) -> f64 {
        let (lo, hi) = self.mu.range();
        self.mu.eval(p.ln().clamp(lo, hi))
    }
}

fn ln_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
        .collect()
}

fn build_curves(su: &SuProfile, fleet: &FleetConfig) -> Result<SuCurves, SchedError> {
    let spec = quad();
    let (gamma_lo, _) = su.gain_density.support();
    let (g_lo, g_hi) = su.interference_density.support();
    if gamma_lo < 0.0 || g_lo < 0.0 {
        return Err(SchedError::BadInput(
            "gain densities must sit on [0, inf)".into(),
        ));
    }

    // Rate against effective power, tabulated once so the power grid below
    // does not pay for a nested quadrature at every node.
    let ln_c = ln_spaced(fleet.p_max * RATE_SPAN, fleet.p_max, RATE_POINTS);
    let mut rate_vals = Vec::with_capacity(RATE_POINTS);
    for &lc in &ln_c {
        let c = lc.exp();
        rate_vals.push(integrate(
            |gamma| effective_rate(c, 0.0, gamma, fleet.i_inst, fleet.r_max),
            &su.gain_density,
            gamma_lo,
            spec,
        )?);
    }
    let rate = MonotoneCubic::new(ln_c, rate_vals)?;
    let rate_at = |c: f64| -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        let (lo, hi) = rate.range();
        rate.eval(c.ln().clamp(lo, hi))
    };

    let mean_rate = |p: f64| -> Result<f64, SchedError> {
        match su.interference_density.atoms() {
            Some(atoms) => Ok(atoms
                .iter()
                .map(|&(g, w)| w * rate_at(slot_power(p, g, fleet.i_inst)))
                .sum()),
            None => {
                let g_star = fleet.i_inst / p;
                let head = rate_at(p) * (1.0 - su.interference_density.ccdf(g_star)?);
                let top = if g_hi.is_finite() {
                    g_hi
                } else {
                    su.interference_density.cutoff(spec.tail_mass)?
                };
                let from = g_star.max(g_lo);
                let tail = if from < top {
                    composite_gk15_vec(
                        |g| {
                            Ok::<_, SchedError>([rate_at(fleet.i_inst / g)
                                * su.interference_density.pdf_at(g)])
                        },
                        from,
                        top,
                        G_PANELS,
                    )?[0]
                } else {
                    0.0
                };
                Ok(head + tail)
            }
        }
    };

    let ln_p = ln_spaced(fleet.p_max * MU_SPAN, fleet.p_max, MU_POINTS);
    let mut mu_vals = Vec::with_capacity(MU_POINTS);
    for &lp in &ln_p {
        mu_vals.push(mean_rate(lp.exp())? / su.packet_bits as f64);
    }
    if !(*mu_vals.last().unwrap() > 0.0) {
        return Err(SchedError::BadInput(
            "user carries no bits even at full power".into(),
        ));
    }
    Ok(SuCurves {
        mu: MonotoneCubic::new(ln_p, mu_vals)?,
        p_pos: su.gain_density.prob_positive()?,
    })
}

struct FeasiblePart {
    p_min: Vec<f64>,
    p_min_global: f64,
    t_r: f64,
}

/// Precomputed queueing quantities for one fleet: cached mean-rate curves,
/// minimum powers, and the residual-work constant. Everything the frame
/// planners evaluate per candidate power comes from here at interpolation
/// cost.
///
/// The minimum powers and `t_r` exist only when the fleet is stable at full
/// power; their accessors report `InfeasibleLoad` otherwise, while the rate
/// curves stay usable (the interference-blind planner needs nothing else).
pub struct QueueingConstants {
    curves: Vec<SuCurves>,
    lambdas: Vec<f64>,
    p_lo: f64,
    p_max: f64,
    load_full: f64,
    feasible: Option<FeasiblePart>,
}

impl QueueingConstants {
    pub fn build(fleet: &FleetConfig) -> Result<QueueingConstants, SchedError> {
        fleet.validate()?;
        let mut curves = Vec::with_capacity(fleet.sus.len());
        for su in &fleet.sus {
            curves.push(build_curves(su, fleet)?);
        }
        let lambdas: Vec<f64> = fleet.sus.iter().map(|s| s.lambda).collect();
        let p_lo = fleet.p_max * MU_SPAN;
        let p_max = fleet.p_max;
        let n = curves.len();
        let rho_at = |i: usize, p: f64| lambdas[i] / curves[i].mu_at(p);
        let load_full: f64 = (0..n).map(|i| rho_at(i, p_max)).sum();

        let feasible = if load_full < 1.0 {
            // Smallest power keeping each load under the slack the others
            // leave at full power; the cache floor is already conservative.
            let tol = 1e-9 * p_max;
            let mut p_min = Vec::with_capacity(n);
            for i in 0..n {
                let slack = 1.0 - (load_full - rho_at(i, p_max));
                let pm = if rho_at(i, p_lo) < slack {
                    p_lo
                } else {
                    bisect(|p| rho_at(i, p) - slack, p_lo, p_max, tol, 200)?
                };
                p_min.push(pm);
            }
            let total = |p: f64| -> f64 { (0..n).map(|i| rho_at(i, p)).sum() };
            let p_min_global = if total(p_lo) < 1.0 {
                p_lo
            } else {
                bisect(|p| total(p) - 1.0, p_lo, p_max, tol, 200)?
            };
            // Residual work sums the binary-service second moments; the
            // delivery probability does not move with power, so evaluating
            // at the minimum powers needs no extra table.
            let mut t_r = 0.0;
            for i in 0..n {
                let m = service_moments(curves[i].p_pos, fleet.sus[i].packet_bits)?;
                t_r += lambdas[i] * m.second_moment / 2.0;
            }
            Some(FeasiblePart {
                p_min,
                p_min_global,
                t_r,
            })
        } else {
            None
        };

        Ok(QueueingConstants {
            curves,
            lambdas,
            p_lo,
            p_max,
            load_full,
            feasible,
        })
    }

    pub fn n(&self) -> usize {
        self.curves.len()
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Bottom of the cached power grid; powers below clamp up to it.
    pub fn p_floor(&self) -> f64 {
        self.p_lo
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambdas[i]
    }

    /// Cached mean rate per packet. Agrees with `mu_of_power` to a few
    /// parts in 1e4; monotone in `p` by construction.
    pub fn mu(&self, i: usize, p: f64) -> f64 {
        self.curves[i].mu_at(p)
    }

    pub fn rho(&self, i: usize, p: f64) -> f64 {
        self.lambdas[i] / self.curves[i].mu_at(p)
    }

    /// Probability a slot with power parameter `p` delivers any bits.
    pub fn p_nonzero(&self, i: usize, p: f64) -> f64 {
        if p > 0.0 {
            self.curves[i].p_pos
        } else {
            0.0
        }
    }

    pub fn load_at_full_power(&self) -> f64 {
        self.load_full
    }

    fn feasible(&self) -> Result<&FeasiblePart, SchedError> {
        self.feasible.as_ref().ok_or(SchedError::InfeasibleLoad {
            load: self.load_full,
        })
    }

    /// Residual-work constant: half the arrival-weighted sum of service
    /// second moments at the minimum powers.
    pub fn t_r(&self) -> Result<f64, SchedError> {
        Ok(self.feasible()?.t_r)
    }

    /// Smallest power parameter leaving user `i` stable when everyone else
    /// runs at full power.
    pub fn p_min(&self, i: usize) -> Result<f64, SchedError> {
        Ok(self.feasible()?.p_min[i])
    }

    /// Smallest common power parameter keeping the whole fleet stable.
    pub fn p_min_global(&self) -> Result<f64, SchedError> {
        Ok(self.feasible()?.p_min_global)
    }

    /// Waiting bound for user `i` at power `p` under a worst-case
    /// higher-priority load of `rho_prev_max`.
    pub fn w_up(&self, i: usize, p: f64, rho_prev_max: f64) -> Result<f64, SchedError> {
        let t_r = self.t_r()?;
        waiting_bound(self.mu(i, p), self.rho(i, p), t_r, rho_prev_max)
            .ok_or(SchedError::Saturated { su: i })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityReport {
    /// Total load with every user at full power.
    pub load: f64,
    pub stable: bool,
    /// `1 - load`; negative when unstable.
    pub margin: f64,
}

/// Necessary and sufficient stability check: some feasible schedule exists
/// exactly when the full-power loads sum below one.
pub fn stability_check(consts: &QueueingConstants) -> StabilityReport {
    let load = consts.load_at_full_power();
    StabilityReport {
        load,
        stable: load < 1.0,
        margin: 1.0 - load,
    }
}

/// Admission control: when the offered load is unstable at full power,
/// scale every arrival rate by `(1 - epsilon) / load` so the admitted
/// fleet is stable with margin `epsilon`. Returns the (possibly unchanged)
/// fleet and whether scaling happened.
pub fn with_admission_control(fleet: &FleetConfig) -> Result<(FleetConfig, bool), SchedError> {
    let consts = QueueingConstants::build(fleet)?;
    let load = consts.load_at_full_power();
    if load < 1.0 {
        return Ok((fleet.clone(), false));
    }
    let scale = (1.0 - fleet.epsilon) / load;
    let mut admitted = fleet.clone();
    for su in &mut admitted.sus {
        su.lambda *= scale;
    }
    Ok((admitted, true))
}
