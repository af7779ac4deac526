//! Deadline-aware frame planning.
//!
//! A frame carries `k` packets that must be delivered within `t_f` slots,
//! succeeding as a whole only if all packets make it. With an i.i.d. per-slot
//! success probability `p`, the frame success probability is the binomial
//! tail `P_frame(k, t_f) = sum_{n=k}^{t_f} C(t_f, n) p^n (1-p)^{t_f-n}`,
//! strictly increasing in `p`. `required_p` inverts that tail: the smallest
//! per-slot success probability that meets a target frame success rate. The
//! planner runs either offline (solve once, hold the target fixed) or online
//! (`online_replan` after every slot, re-targeting with the remaining packet
//! and slot budget).

use std::fmt;

use crate::numerics::{bisect, ln_binomial};

#[derive(Debug, Clone, PartialEq)]
pub enum DeadlineError {
    BadInput(String),
    /// Remaining slots cannot carry the remaining packets.
    FrameFailure { packets_left: u32, slots_left: u32 },
}

impl fmt::Display for DeadlineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeadlineError::BadInput(msg) => write!(f, "bad input: {msg}"),
            DeadlineError::FrameFailure {
                packets_left,
                slots_left,
            } => write!(
                f,
                "frame failure: {packets_left} packets left with {slots_left} slots"
            ),
        }
    }
}

impl std::error::Error for DeadlineError {}

/// Remaining work of one frame: `k` packets due within `t_f` more slots, at
/// target frame success rate `r_min`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePlan {
    pub k: u32,
    pub t_f: u32,
    pub r_min: f64,
}

impl FramePlan {
    pub fn new(k: u32, t_f: u32, r_min: f64) -> Result<FramePlan, DeadlineError> {
        if k > t_f {
            return Err(DeadlineError::FrameFailure {
                packets_left: k,
                slots_left: t_f,
            });
        }
        if !(0.0 < r_min && r_min < 1.0) {
            return Err(DeadlineError::BadInput(format!("r_min {r_min}")));
        }
        Ok(FramePlan { k, t_f, r_min })
    }

    /// Per-slot success probability this plan needs.
    pub fn required_p(&self) -> Result<f64, DeadlineError> {
        required_p(self.k, self.t_f, self.r_min)
    }
}

/// Binomial tail `P(at least k successes in t_f trials at rate p)`.
///
/// Evaluated in log space term by term, stable for `t_f` up to ~1e4.
pub fn p_frame(k: u32, t_f: u32, p: f64) -> Result<f64, DeadlineError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DeadlineError::BadInput(format!("p {p}")));
    }
    if k > t_f {
        return Err(DeadlineError::BadInput(format!("k {k} > t_f {t_f}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let lp = p.ln();
    let lq = (1.0 - p).ln();
    let mut sum = 0.0;
    for n in k..=t_f {
        let lt = ln_binomial(t_f as u64, n as u64)
            + n as f64 * lp
            + (t_f - n) as f64 * lq;
        sum += lt.exp();
    }
    Ok(sum.min(1.0))
}

/// Smallest `p` with `p_frame(k, t_f, p) >= r_min`.
pub fn required_p(k: u32, t_f: u32, r_min: f64) -> Result<f64, DeadlineError> {
    if !(0.0 < r_min && r_min < 1.0) {
        return Err(DeadlineError::BadInput(format!("r_min {r_min}")));
    }
    if k > t_f {
        return Err(DeadlineError::FrameFailure {
            packets_left: k,
            slots_left: t_f,
        });
    }
    if k == 0 {
        return Ok(0.0);
    }
    if k == t_f {
        // All slots must succeed: p^t_f = r_min.
        return Ok(r_min.powf(1.0 / t_f as f64));
    }
    bisect(
        |p| p_frame(k, t_f, p).unwrap_or(f64::NAN) - r_min,
        0.0,
        1.0,
        1e-10,
        200,
    )
    .map_err(|e| DeadlineError::BadInput(format!("required_p solve: {e}")))
}

/// Advances a plan by one slot outcome.
///
/// On success the packet budget drops; either way a slot is spent. Errors
/// with `FrameFailure` when the remaining slots cannot carry the remaining
/// packets (the frame is already lost).
pub fn online_replan(plan: FramePlan, slot_succeeded: bool) -> Result<FramePlan, DeadlineError> {
    let k = if slot_succeeded {
        plan.k.saturating_sub(1)
    } else {
        plan.k
    };
    let t_f = plan.t_f.saturating_sub(1);
    if k > t_f {
        return Err(DeadlineError::FrameFailure {
            packets_left: k,
            slots_left: t_f,
        });
    }
    Ok(FramePlan {
        k,
        t_f,
        r_min: plan.r_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive-enumeration oracle: walk all 2^t_f outcome strings.
    fn p_frame_oracle(k: u32, t_f: u32, p: f64) -> f64 {
        let mut total = 0.0;
        for mask in 0u32..(1 << t_f) {
            let successes = mask.count_ones();
            if successes >= k {
                let prob = p.powi(successes as i32) * (1.0 - p).powi((t_f - successes) as i32);
                total += prob;
            }
        }
        total
    }

    #[test]
    fn two_of_four_fair_coin() {
        // 11/16 by enumeration.
        let v = p_frame(2, 4, 0.5).unwrap();
        assert!((v - 11.0 / 16.0).abs() < 1e-12);
        assert!((v - p_frame_oracle(2, 4, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn enumeration_oracle_grid() {
        for t_f in 1..=8u32 {
            for k in 0..=t_f {
                for &p in &[0.1, 0.3, 0.7, 0.95] {
                    let v = p_frame(k, t_f, p).unwrap();
                    let oracle = p_frame_oracle(k, t_f, p);
                    assert!(
                        (v - oracle).abs() < 1e-12,
                        "k={k} t_f={t_f} p={p}: {v} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn edge_probabilities() {
        assert_eq!(p_frame(0, 4, 0.0).unwrap(), 1.0);
        assert_eq!(p_frame(2, 4, 0.0).unwrap(), 0.0);
        assert_eq!(p_frame(2, 4, 1.0).unwrap(), 1.0);
        assert!(p_frame(5, 4, 0.5).is_err());
    }

    #[test]
    fn large_frame_stays_stable() {
        // t_f = 10^4: log-space terms must not overflow or collapse.
        let v = p_frame(5000, 10_000, 0.5).unwrap();
        assert!(v > 0.49 && v < 0.52, "{v}");
        let v = p_frame(9_990, 10_000, 0.999).unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v));
    }

    #[test]
    fn required_p_round_trip() {
        let p = required_p(2, 4, 0.95).unwrap();
        assert!((0.7..1.0).contains(&p), "{p}");
        assert!((p_frame(2, 4, p).unwrap() - 0.95).abs() < 1e-8);
    }

    #[test]
    fn required_p_all_slots() {
        // k = t_f collapses to the closed form r^(1/t_f).
        let p = required_p(3, 3, 0.9).unwrap();
        assert!((p - 0.9f64.powf(1.0 / 3.0)).abs() < 1e-12);
        let p = required_p(1, 1, 0.95).unwrap();
        assert!((p - 0.95).abs() < 1e-12);
    }

    #[test]
    fn replan_flow() {
        let plan = FramePlan::new(2, 4, 0.95).unwrap();
        let after_success = online_replan(plan, true).unwrap();
        assert_eq!((after_success.k, after_success.t_f), (1, 3));
        let after_failure = online_replan(plan, false).unwrap();
        assert_eq!((after_failure.k, after_failure.t_f), (2, 3));

        // Success lowers the bar.
        assert!(after_success.required_p().unwrap() <= plan.required_p().unwrap());

        // Driving into the wall: 2 packets, 1 slot left.
        let tight = online_replan(after_failure, false).unwrap();
        assert_eq!((tight.k, tight.t_f), (2, 2));
        let lost = online_replan(tight, false);
        assert!(matches!(lost, Err(DeadlineError::FrameFailure { .. })));
    }

    proptest! {
        #[test]
        fn monotone_in_p(k in 0u32..6, extra in 0u32..6, p1 in 0.01f64..0.99, p2 in 0.01f64..0.99) {
            let t_f = k + extra;
            prop_assume!(t_f >= 1);
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = p_frame(k, t_f, lo).unwrap();
            let b = p_frame(k, t_f, hi).unwrap();
            prop_assert!(a <= b + 1e-12);
        }

        #[test]
        fn success_never_hurts(k in 1u32..6, extra in 1u32..6, p in 0.01f64..0.99) {
            // One packet down with one slot gone beats holding both.
            let t_f = k + extra;
            let better = p_frame(k - 1, t_f - 1, p).unwrap();
            let worse = p_frame(k, t_f, p).unwrap();
            prop_assert!(better >= worse - 1e-12);
        }
    }
}
