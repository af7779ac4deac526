//! Shape-preserving cubic interpolation (Fritsch-Carlson).
//!
//! Used for cached curves that must stay monotone between nodes: service
//! rate as a function of power, inverse CDF tables. Evaluation clamps to the
//! grid ends, so extrapolation never overshoots the sampled range.

use super::NumericsError;

#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Node derivatives after the monotonicity limiter.
    ds: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<MonotoneCubic, NumericsError> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(NumericsError::BadInput(format!(
                "interpolation grid sizes {} / {}",
                n,
                ys.len()
            )));
        }
        for i in 1..n {
            if !(xs[i] > xs[i - 1]) {
                return Err(NumericsError::BadInput(format!(
                    "abscissae not strictly increasing at index {i}"
                )));
            }
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(NumericsError::BadInput("non-finite grid value".into()));
        }

        // Secant slopes, then Fritsch-Carlson limited node derivatives.
        let mut delta = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            delta.push((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]));
        }
        let mut ds = vec![0.0; n];
        ds[0] = delta[0];
        ds[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                ds[i] = 0.0;
            } else {
                // Weighted harmonic mean keeps the interpolant monotone.
                let w1 = 2.0 * (xs[i + 1] - xs[i]) + (xs[i] - xs[i - 1]);
                let w2 = (xs[i + 1] - xs[i]) + 2.0 * (xs[i] - xs[i - 1]);
                ds[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                ds[i] = 0.0;
                ds[i + 1] = 0.0;
            } else {
                let a = ds[i] / delta[i];
                let b = ds[i + 1] / delta[i];
                let s = a * a + b * b;
                if s > 9.0 {
                    let t = 3.0 / s.sqrt();
                    ds[i] = t * a * delta[i];
                    ds[i + 1] = t * b * delta[i];
                }
            }
        }
        Ok(MonotoneCubic { xs, ys, ds })
    }

    /// Hermite evaluation; clamps outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|probe| probe.total_cmp(&x))
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1, d0, d1) = (self.ys[i], self.ys[i + 1], self.ds[i], self.ds[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + d0 * h * (t3 - 2.0 * t2 + t)
            + y1 * (-2.0 * t3 + 3.0 * t2)
            + d1 * h * (t3 - t2)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes() {
        let xs = vec![0.0, 1.0, 2.5, 4.0];
        let ys = vec![1.0, 2.0, 2.2, 5.0];
        let m = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(ys.iter()) {
            assert!((m.eval(*x) - y).abs() < 1e-14);
        }
    }

    #[test]
    fn stays_monotone_between_nodes() {
        // Data with a sharp knee that plain cubic splines overshoot.
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = vec![0.0, 0.1, 0.2, 5.0, 5.1];
        let m = MonotoneCubic::new(xs, ys).unwrap();
        let mut prev = m.eval(0.0);
        let mut x = 0.0;
        while x < 4.0 {
            x += 1e-3;
            let y = m.eval(x);
            assert!(y + 1e-12 >= prev, "dip at x={x}");
            prev = y;
        }
    }

    #[test]
    fn clamps_outside_grid() {
        let m = MonotoneCubic::new(vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(m.eval(0.0), 3.0);
        assert_eq!(m.eval(9.0), 4.0);
    }

    #[test]
    fn rejects_unsorted_grid() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(MonotoneCubic::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn tracks_smooth_function() {
        // Limited slopes cost accuracy vs a free cubic spline; the error for
        // a smooth monotone function on n panels is still O(h^3).
        let n = 64;
        let h: f64 = 3.0 / n as f64;
        let xs: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (1.0 + x).ln()).collect();
        let m = MonotoneCubic::new(xs, ys).unwrap();
        let bound = 2.0 * h.powi(3);
        let mut x = 0.0;
        while x <= 3.0 {
            assert!((m.eval(x) - (1.0 + x).ln()).abs() < bound);
            x += 0.01;
        }
    }
}
