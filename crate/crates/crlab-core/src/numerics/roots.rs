//! One-dimensional root bracketing and derivative-free minimization.

use super::NumericsError;

/// Bisection root finder on `[lo, hi]`.
///
/// Requires a sign change (or an exact root at an endpoint). Stops when
/// `|f(x)| <= tol` or the bracket width shrinks below `tol * max(1, |x|)`.
pub fn bisect(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: u32,
) -> Result<f64, NumericsError> {
    if !(tol > 0.0) || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(NumericsError::BadInput(format!(
            "bisect bracket [{lo}, {hi}], tol {tol}"
        )));
    }
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo.is_nan() {
        return Err(NumericsError::NonFinite { x: lo });
    }
    if fhi.is_nan() {
        return Err(NumericsError::NonFinite { x: hi });
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(NumericsError::NoBracket { lo, hi });
    }

    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.is_nan() {
            return Err(NumericsError::NonFinite { x: mid });
        }
        if fm.abs() <= tol || (hi - lo) <= tol * mid.abs().max(1.0) {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Err(NumericsError::ToleranceNotMet {
        achieved: hi - lo,
        requested: tol,
    })
}

/// Golden-section minimization with a fixed evaluation budget.
///
/// Returns `(argmin, min)` over `[lo, hi]`. `f` may return `+inf` to mark
/// infeasible points; the tracked best falls back to the finite region. The
/// budget counts interior evaluations, so the bracket shrinks by the golden
/// ratio `budget - 1` times regardless of the function.
pub fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, evals: u32) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    debug_assert!(lo <= hi && evals >= 2);
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 2..evals {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        let (xc, fc) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if fc < best.1 {
            best = (xc, fc);
        }
    }
    // Endpoints can win on monotone objectives.
    let fa = f(a);
    if fa < best.1 {
        best = (a, fa);
    }
    let fb = f(b);
    if fb < best.1 {
        best = (b, fb);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle for sqrt(2): coarse grid scan plus refinement.
    fn grid_root_oracle() -> f64 {
        let f = |x: f64| x * x - 2.0;
        let mut lo = 0.0;
        let mut hi = 2.0;
        for _ in 0..5 {
            let n = 64;
            let mut best_lo = lo;
            for k in 0..n {
                let a = lo + (hi - lo) * k as f64 / n as f64;
                let b = lo + (hi - lo) * (k + 1) as f64 / n as f64;
                if f(a) <= 0.0 && f(b) >= 0.0 {
                    best_lo = a;
                    break;
                }
            }
            let w = (hi - lo) / 64.0;
            lo = best_lo;
            hi = best_lo + w;
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn sqrt_two() {
        let x = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12, 200).unwrap();
        assert!((x - 1.414_213_562_4).abs() < 1e-10);
        assert!((x - grid_root_oracle()).abs() < 1e-7);
    }

    #[test]
    fn identity_root() {
        let x = bisect(|x| x, -1.0, 3.0, 1e-12, 200).unwrap();
        assert!(x.abs() < 1e-10);
    }

    #[test]
    fn endpoint_root_accepted() {
        let x = bisect(|x| x, 0.0, 2.0, 1e-12, 200).unwrap();
        assert_eq!(x, 0.0);
    }

    #[test]
    fn no_bracket_errors() {
        let err = bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10, 100).unwrap_err();
        assert!(matches!(err, NumericsError::NoBracket { .. }));
    }

    #[test]
    fn nan_evaluation_errors() {
        let err = bisect(|_| f64::NAN, 0.0, 1.0, 1e-10, 100).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { .. }));
    }

    #[test]
    fn golden_finds_parabola_min() {
        let (x, v) = golden_min(|x| (x - 1.25) * (x - 1.25) + 0.5, 0.0, 4.0, 64);
        assert!((x - 1.25).abs() < 1e-5);
        assert!((v - 0.5).abs() < 1e-9);
    }

    #[test]
    fn golden_monotone_picks_endpoint() {
        let (x, _) = golden_min(|x| -x, 0.0, 4.0, 64);
        assert!((x - 4.0).abs() < 1e-9);
    }

    #[test]
    fn golden_handles_infinite_plateau() {
        // Infeasible (infinite) region on the left half.
        let f = |x: f64| if x < 1.0 { f64::INFINITY } else { (x - 2.0).powi(2) };
        let (x, _) = golden_min(f, 0.0, 4.0, 64);
        assert!((x - 2.0).abs() < 1e-4);
    }
}
