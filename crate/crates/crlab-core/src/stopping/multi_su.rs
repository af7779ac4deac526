//! Contention among multiple secondary users sharing one overlay band.
//!
//! With `L` users running the same stopping rule, a tagged user claims a
//! free channel roughly once per `L` probes, and the gain it rides when it
//! wins is the best of the contenders' draws. The shadow ensemble thins
//! every availability to `θ_i / L` and swaps the gain law for a Gumbel
//! distribution scaled by the base gain's mean, the extreme-value shape of
//! that winning draw. Solving the single-user problem on the shadow
//! ensemble then yields per-user statistics.

use super::{solve_overlay, ChannelEnsemble, OverlaySolution, StoppingError};
use crate::numerics::Density1D;

/// Delay-price grid for the shadow solve.
const SHADOW_GRID: usize = 64;

#[derive(Clone, Debug)]
pub struct MultiSuSolution {
    /// Tagged-user policy and statistics on the shadow ensemble.
    pub per_su: OverlaySolution,
    /// The thinned ensemble the solution was computed on.
    pub shadow: ChannelEnsemble,
    /// Per-channel `γ_th - λ_P`; contention squeezes these towards zero.
    pub threshold_gaps: Vec<f64>,
    /// The thinning argument wants ample contention; set when `L ≥ 3M`.
    pub approx_valid: bool,
}

/// Per-user overlay solution under `L`-fold contention.
pub fn solve_multi_su(
    ens: &ChannelEnsemble,
    l: u32,
    p_avg: f64,
    d_max: f64,
) -> Result<MultiSuSolution, StoppingError> {
    if l == 0 {
        return Err(StoppingError::BadInput(
            "contention needs at least one user".into(),
        ));
    }
    let thinned: Vec<f64> = ens.theta().iter().map(|t| t / l as f64).collect();
    let shadow = ChannelEnsemble::new(
        thinned,
        ens.tau_over_t(),
        Density1D::gumbel(ens.gain().mean()),
    )?;
    let per_su = solve_overlay(&shadow, p_avg, d_max, None, SHADOW_GRID)?;
    let threshold_gaps = per_su
        .policy
        .thresholds
        .iter()
        .map(|g| g - per_su.policy.lambda_p)
        .collect();
    let approx_valid = l as usize >= 3 * ens.channels();
    Ok(MultiSuSolution {
        per_su,
        shadow,
        threshold_gaps,
        approx_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{no_osr, overlay_thresholds};
    use super::*;

    /// Ten channels with availabilities 0.05..0.50 and 5% probe overhead.
    fn reference() -> ChannelEnsemble {
        let theta: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
        ChannelEnsemble::new(theta, 0.05, Density1D::exponential(1.0)).unwrap()
    }

    #[test]
    fn shadow_solution_is_consistent() {
        let sol = solve_multi_su(&reference(), 30, 10.0, f64::INFINITY).unwrap();
        assert!(sol.approx_valid);
        assert_eq!(sol.per_su.policy.lambda_d, 0.0);
        let redo =
            overlay_thresholds(&sol.shadow, sol.per_su.policy.lambda_p, 0.0).unwrap();
        for (a, b) in sol.per_su.policy.thresholds.iter().zip(&redo) {
            assert!((a - b).abs() < 1e-12);
        }
        for (gap, th) in sol
            .threshold_gaps
            .iter()
            .zip(&sol.per_su.policy.thresholds)
        {
            assert!((gap - (th - sol.per_su.policy.lambda_p)).abs() < 1e-15);
            assert!(*gap >= 0.0);
        }
        // At 1/30th availability a win is rare.
        assert!(sol.per_su.stats.success_prob < 0.1);
    }

    #[test]
    fn contention_makes_delay_cap_cheap() {
        let ens = reference();
        let unc = solve_multi_su(&ens, 30, 10.0, f64::INFINITY).unwrap();
        let floor = no_osr(&unc.shadow, 10.0, None).unwrap();
        assert!(floor.stats.success_prob > unc.per_su.stats.success_prob);
        let d_max =
            0.5 * (unc.per_su.stats.expected_delay + floor.stats.expected_delay);
        let con = solve_multi_su(&ens, 30, 10.0, d_max).unwrap();
        assert!(con.per_su.policy.lambda_d > 0.0);
        assert!(con.per_su.stats.success_prob * d_max >= 1.0 - 1e-9);
        // Heavy contention already holds thresholds near the water level, so
        // capping the delay costs almost nothing.
        let rel = |a: f64, b: f64| (a - b).abs() / b;
        assert!(rel(con.per_su.stats.throughput, unc.per_su.stats.throughput) < 0.01);
        assert!(
            rel(
                con.per_su.stats.expected_delay,
                unc.per_su.stats.expected_delay
            ) < 0.01
        );
    }

    #[test]
    fn contention_tightens_thresholds() {
        let ens = reference();
        let mut prev: Option<Vec<f64>> = None;
        for l in [30, 100, 300] {
            let sol = solve_multi_su(&ens, l, 10.0, f64::INFINITY).unwrap();
            if let Some(before) = &prev {
                for (now, b) in sol.threshold_gaps.iter().zip(before) {
                    assert!(now <= &(b + 1e-12), "gap {now} above {b} at l = {l}");
                }
            }
            prev = Some(sol.threshold_gaps);
        }
    }

    #[test]
    fn contention_flags_and_infeasibility() {
        let ens = reference();
        assert!(matches!(
            solve_multi_su(&ens, 0, 10.0, f64::INFINITY),
            Err(StoppingError::BadInput(_))
        ));
        assert!(
            !solve_multi_su(&ens, 29, 10.0, f64::INFINITY)
                .unwrap()
                .approx_valid
        );
        assert!(
            solve_multi_su(&ens, 30, 10.0, f64::INFINITY)
                .unwrap()
                .approx_valid
        );

        let single =
            ChannelEnsemble::new(vec![0.5], 0.05, Density1D::exponential(1.0)).unwrap();
        match solve_multi_su(&single, 4, 1.0, 1.5) {
            Err(StoppingError::InfeasibleDelay(best)) => {
                assert!(best.stats.success_prob * 1.5 < 1.0);
            }
            other => panic!("expected infeasible delay, got {other:?}"),
        }
    }
}
