//! Principal branch of the Lambert W function.

use super::NumericsError;

const INV_E: f64 = 0.367_879_441_171_442_33; // 1/e

/// Solves `w * exp(w) = x` on the principal branch (`w >= -1`).
///
/// Defined for `x >= -1/e`. The seed has two regimes: a branch-point series
/// in `p = sqrt(2 (e x + 1))` close to `x = -1/e`, where the function has a
/// square-root singularity, and a logarithm-based guess elsewhere. Halley
/// iterations then converge to machine precision in a handful of steps.
///
/// Inputs a hair below `-1/e` from round-off (callers often form
/// `-exp(-a - 1)`) are clamped onto the branch point instead of rejected.
pub fn lambert_w0(x: f64) -> Result<f64, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::Domain(format!(
            "lambert_w0 needs finite x, got {x}"
        )));
    }
    if x < -INV_E {
        if x > -INV_E - 1e-12 {
            return Ok(-1.0);
        }
        return Err(NumericsError::Domain(format!(
            "lambert_w0 defined for x >= -1/e, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }

    let mut w = if x < -0.25 {
        // Branch-point expansion: W = -1 + p - p^2/3 + 11 p^3/72 - ...
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < std::f64::consts::E {
        // ln(1 + x) tracks W within ~10% on this range, enough for Halley.
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };

    for _ in 0..32 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 1e-15 * w.abs().max(0.1) {
            break;
        }
    }
    Ok(w.max(-1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: Newton iteration on `w e^w - x` from a coarse
    /// scan for the starting point.
    fn newton_oracle(x: f64) -> f64 {
        let mut best = -1.0_f64;
        let mut best_err = f64::INFINITY;
        let mut w = -1.0_f64;
        while w <= 12.0 {
            let err = (w * w.exp() - x).abs();
            if err < best_err {
                best_err = err;
                best = w;
            }
            w += 1e-3;
        }
        let mut w = best;
        for _ in 0..64 {
            let ew = w.exp();
            let f = w * ew - x;
            let d = ew * (w + 1.0);
            if d.abs() < 1e-300 {
                break;
            }
            let step = f / d;
            w -= step;
            if step.abs() < 1e-16 * w.abs().max(1e-3) {
                break;
            }
        }
        w
    }

    #[test]
    fn omega_constant() {
        // W(1) is the omega constant.
        let w = lambert_w0(1.0).unwrap();
        assert!((w - 0.567_143_290_409_783_8).abs() < 1e-12);
    }

    #[test]
    fn branch_point_exact() {
        assert_eq!(lambert_w0(-INV_E).unwrap(), -1.0);
        // Round-off just below the branch point clamps instead of erroring.
        assert_eq!(lambert_w0(-INV_E - 1e-14).unwrap(), -1.0);
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_left_of_branch() {
        assert!(lambert_w0(-0.5).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn matches_newton_oracle() {
        for &x in &[-0.3678, -0.36, -0.3, -0.1, -0.01, 0.5, 1.0, 2.5, 10.0] {
            let w = lambert_w0(x).unwrap();
            let oracle = newton_oracle(x);
            assert!(
                (w - oracle).abs() <= 1e-9 * oracle.abs().max(1.0),
                "x={x}: {w} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn round_trip_grid() {
        // Dense deterministic grid over the acceptance range.
        let n = 10_000;
        for k in 0..n {
            let x = -INV_E + (10.0 + INV_E) * (k as f64 + 0.5) / n as f64;
            let w = lambert_w0(x).unwrap();
            assert!(w >= -1.0);
            let back = w * w.exp();
            assert!(
                (back - x).abs() <= 1e-12 * x.abs().max(1.0),
                "x={x} w={w} back={back}"
            );
        }
    }
}
