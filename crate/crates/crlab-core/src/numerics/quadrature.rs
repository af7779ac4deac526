//! Adaptive Gauss-Kronrod quadrature against `Density1D` weights.

use super::density::Density1D;
use super::NumericsError;

/// Tolerances and budgets for `integrate`.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Residual density mass beyond the truncation point of an infinite
    /// upper support.
    pub tail_mass: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_subdivisions: 4000,
            tail_mass: 1e-12,
        }
    }
}

/// Computes `E[f(X); X >= lower] = integral of f(x) density(x) dx` from
/// `lower` to the top of the support.
///
/// Discrete densities reduce to a weighted sum over atoms at or above
/// `lower` (exact, no tolerance involved). Continuous densities integrate
/// adaptively; unbounded supports truncate at the `tail_mass` cutoff.
pub fn integrate(
    f: impl Fn(f64) -> f64,
    density: &Density1D,
    lower: f64,
    spec: QuadratureSpec,
) -> Result<f64, NumericsError> {
    if let Some(atoms) = density.atoms() {
        return Ok(atoms
            .iter()
            .filter(|&&(a, _)| a >= lower)
            .map(|&(a, w)| w * f(a))
            .sum());
    }
    let (lo, hi) = density.support();
    let a = lower.max(lo);
    let b = if hi.is_finite() {
        hi
    } else {
        density.cutoff(spec.tail_mass)?
    };
    if a >= b {
        return Ok(0.0);
    }
    adaptive_on_interval(
        &|x| f(x) * density.pdf_at(x),
        a,
        b,
        spec.abs_tol,
        spec.rel_tol,
        spec.max_subdivisions,
    )
}

/// Smallest `x` with `P(X >= x) = q`, to a CCDF residual of ~1e-10.
pub fn inverse_ccdf(density: &Density1D, q: f64) -> Result<f64, NumericsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(NumericsError::Domain(format!(
            "inverse_ccdf needs q in (0, 1), got {q}"
        )));
    }
    if let Some(atoms) = density.atoms() {
        let mut cum = 0.0;
        for &(a, w) in atoms.iter().rev() {
            cum += w;
            if cum >= q - 1e-15 {
                return Ok(a);
            }
        }
        return Ok(atoms[0].0);
    }
    let (lo, hi) = density.support();
    let b = if hi.is_finite() {
        hi
    } else {
        density.cutoff((q * 1e-4).min(1e-12))?
    };
    super::roots::bisect(
        |x| density.ccdf(x).unwrap_or(f64::NAN) - q,
        lo,
        b,
        1e-10,
        200,
    )
}

/// Composite 15-point Kronrod rule over `panels` uniform panels, applied to
/// a vector integrand. Non-adaptive: meant for smooth integrands whose
/// components share one expensive kernel, so all of them are accumulated in
/// a single pass. Nodes are strictly interior to `[a, b]`.
pub(crate) fn composite_gk15_vec<const K: usize, E>(
    mut f: impl FnMut(f64) -> Result<[f64; K], E>,
    a: f64,
    b: f64,
    panels: usize,
) -> Result<[f64; K], E> {
    debug_assert!(a.is_finite() && b.is_finite() && panels > 0);
    let mut total = [0.0; K];
    if a >= b {
        return Ok(total);
    }
    let width = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let c = lo + 0.5 * width;
        let h = 0.5 * width;
        let fc = f(c)?;
        for k in 0..K {
            total[k] += h * WGK[7] * fc[k];
        }
        for j in 0..7 {
            let x = h * XGK[j];
            let f1 = f(c - x)?;
            let f2 = f(c + x)?;
            for k in 0..K {
                total[k] += h * WGK[j] * (f1[k] + f2[k]);
            }
        }
    }
    Ok(total)
}

// --- Gauss-Kronrod 7-15 pair -----------------------------------------------

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_69,
    0.279_705_391_489_276_67,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// One Kronrod panel: `(integral, error_estimate)`.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64), NumericsError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if !fc.is_finite() {
        return Err(NumericsError::NonFinite { x: c });
    }
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        if !f1.is_finite() {
            return Err(NumericsError::NonFinite { x: c - x });
        }
        if !f2.is_finite() {
            return Err(NumericsError::NonFinite { x: c + x });
        }
        kron += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    kron *= h;
    gauss *= h;
    let err = (kron - gauss).abs();
    // QUADPACK-style sharpening of the raw difference.
    let err = if err > 0.0 {
        let scale = (200.0 * err / (kron.abs() + 1e-300)).min(1.0);
        (err * scale.powf(1.5)).max(err * 1e-6)
    } else {
        0.0
    };
    Ok((kron, err))
}

/// Adaptive subdivision over a finite interval: splits the worst panel until
/// the summed error estimate meets `max(abs_tol, rel_tol * |value|)`.
pub(super) fn adaptive_on_interval(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<f64, NumericsError> {
    debug_assert!(a.is_finite() && b.is_finite());
    if a >= b {
        return Ok(0.0);
    }
    struct Seg {
        a: f64,
        b: f64,
        val: f64,
        err: f64,
    }
    let (val, err) = gk15(f, a, b)?;
    let mut segs = vec![Seg { a, b, val, err }];
    loop {
        let total: f64 = segs.iter().map(|s| s.val).sum();
        let toterr: f64 = segs.iter().map(|s| s.err).sum();
        if toterr <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if segs.len() >= max_subdivisions {
            return Err(NumericsError::ToleranceNotMet {
                achieved: toterr,
                requested: abs_tol.max(rel_tol * total.abs()),
            });
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .unwrap();
        let Seg { a, b, .. } = segs.swap_remove(worst);
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            // Interval at floating-point resolution; keep its estimate.
            let (val, _) = gk15(f, a, b)?;
            segs.push(Seg {
                a,
                b,
                val,
                err: 0.0,
            });
            continue;
        }
        let (v1, e1) = gk15(f, a, m)?;
        let (v2, e2) = gk15(f, m, b)?;
        segs.push(Seg {
            a,
            b: m,
            val: v1,
            err: e1,
        });
        segs.push(Seg {
            a: m,
            b,
            val: v2,
            err: e2,
        });
    }
}
