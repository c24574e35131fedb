use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{ComplexField, Grid};
use crate::error::{Error, Result};

/// Kernel support in standard deviations; the dropped tail is below e^{−50}.
const KERNEL_SIGMAS: f64 = 10.0;

/// Free-space convolution with the normalized Gaussian `(W²/2π)e^{−W²λ²/2}`.
///
/// Separable and direct: each axis is convolved with the sampled 1D kernel
/// truncated at ±10σ. Nothing wraps around, and rounding errors stay
/// relative to the local field size, which matters in the far tails.
#[derive(Debug, Clone)]
pub struct GaussianSmoother {
    grid: Grid,
    /// `taps[t]` is the weight at offset `±t`.
    taps: Vec<f64>,
}

impl GaussianSmoother {
    pub fn new(grid: &Grid, w: f64) -> Result<Self> {
        if (grid.w - w).abs() > 1e-12 * w {
            return Err(Error::GridMismatch {
                module: "field",
                detail: format!("grid built for W = {}, smoothing requested at W = {w}", grid.w),
            });
        }
        let h = grid.h;
        let half = ((KERNEL_SIGMAS / (w * h)).ceil() as usize).min(grid.n - 1);
        let amp = w / (2.0 * PI).sqrt() * h;
        let taps = (0..=half)
            .map(|t| {
                let x = t as f64 * h;
                amp * (-0.5 * w * w * x * x).exp()
            })
            .collect();
        Ok(Self { grid: *grid, taps })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// One-dimensional weights; `taps()[t]` multiplies offsets `±t`.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Applies δ* to a field on this smoother's grid.
    pub fn apply(&self, f: &ComplexField) -> Result<ComplexField> {
        self.grid.check(f.grid(), "field")?;
        Ok(self.apply_unchecked(f))
    }

    pub(crate) fn apply_unchecked(&self, f: &ComplexField) -> ComplexField {
        let n = self.grid.n;
        let src = f.values();
        let k = &self.taps;
        let r = k.len() - 1;
        // along λ₂ (within each row)
        let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
        tmp.par_chunks_mut(n).zip(src.par_chunks(n)).for_each(|(out, row)| {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = x * k[0];
            }
            for t in 1..=r.min(n - 1) {
                let kt = k[t];
                for (o, &x) in out[t..].iter_mut().zip(&row[..n - t]) {
                    *o += x * kt;
                }
                for (o, &x) in out[..n - t].iter_mut().zip(&row[t..]) {
                    *o += x * kt;
                }
            }
        });
        // along λ₁ (row combinations)
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, orow)| {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            for s in lo..=hi {
                let kt = k[i.abs_diff(s)];
                let srow = &tmp[s * n..(s + 1) * n];
                for (o, &x) in orow.iter_mut().zip(srow) {
                    *o += x * kt;
                }
            }
        });
        ComplexField {
            grid: self.grid,
            values: out,
        }
    }
}

/// One-shot `δ*_{W²} f`; prefer a cached [`GaussianSmoother`] in loops.
pub fn gaussian_smooth(f: &ComplexField, w: f64) -> Result<ComplexField> {
    GaussianSmoother::new(f.grid(), w)?.apply(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interior(g: &Grid, k: usize, margin: f64) -> bool {
        let (a, b) = g.lambda(k);
        a.abs() <= g.l - margin && b.abs() <= g.l - margin
    }

    #[test]
    fn constant_is_preserved_away_from_boundary() {
        let w = 8.0;
        let g = Grid::for_bandwidth(w).unwrap();
        let s = gaussian_smooth(&ComplexField::constant(&g, Complex64::new(1.0, 0.0)), w).unwrap();
        for (k, v) in s.values().iter().enumerate() {
            if interior(&g, k, 8.0 / w + 1e-12) {
                assert!((v - 1.0).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_closed_form() {
        let w = 8.0;
        let ctx = crate::energy::EnergyContext::new(1.0).unwrap();
        let a = ctx.alpha * w;
        let g = Grid::for_bandwidth(w).unwrap();
        let f = ComplexField::sample(&g, |x, y| (-a * (x * x + y * y)).exp()).unwrap();
        let s = gaussian_smooth(&f, w).unwrap();
        let w2 = w * w;
        let pref = w2 / (w2 + 2.0 * a);
        let rate = a * w2 / (w2 + 2.0 * a);
        for (k, v) in s.values().iter().enumerate() {
            if interior(&g, k, 8.0 / w) {
                let (x, y) = g.lambda(k);
                let exact = pref * (-rate * (x * x + y * y)).exp();
                if exact.norm() > 1e-8 {
                    assert!((v - exact).norm() < 1e-8 * exact.norm(), "{k}");
                }
            }
        }
    }

    #[test]
    fn linear_function_is_fixed() {
        let w = 4.0;
        let g = Grid::for_bandwidth(w).unwrap();
        let f = ComplexField::sample(&g, |x, _| Complex64::new(x, 0.0)).unwrap();
        let s = gaussian_smooth(&f, w).unwrap();
        for (k, v) in s.values().iter().enumerate() {
            if interior(&g, k, 10.0 / w) {
                assert!((v - f.values()[k]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn resolution_doubling_is_invisible() {
        let w = 4.0;
        let f = |x: f64, y: f64| {
            Complex64::new((-(x * x + 2.0 * y * y)).exp(), (x - y).sin() * (-(x * x + y * y)).exp())
        };
        let g3 = Grid::new(w, 3.0, 4.0).unwrap();
        let g6 = Grid::new(w, 6.0, 4.0).unwrap();
        let s3 = gaussian_smooth(&ComplexField::sample(&g3, f).unwrap(), w).unwrap();
        let s6 = gaussian_smooth(&ComplexField::sample(&g6, f).unwrap(), w).unwrap();
        let scale = s3.norm_inf();
        for i in 0..g3.n {
            for j in 0..g3.n {
                let v6 = s6.at(2 * i, 2 * j);
                assert!((s3.at(i, j) - v6).norm() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn wrong_bandwidth_is_rejected() {
        let g = Grid::for_bandwidth(8.0).unwrap();
        assert!(GaussianSmoother::new(&g, 9.0).is_err());
    }

    #[test]
    fn matches_dense_double_sum() {
        // oracle: the untruncated 2D kernel sum, node by node
        let w = 1.0;
        let g = Grid::new(w, 2.0, 4.0).unwrap();
        let f = ComplexField::sample(&g, |x, y| Complex64::new((x * 0.7).cos(), y) * (-(x * x + y * y) / 3.0).exp()).unwrap();
        let s = gaussian_smooth(&f, w).unwrap();
        let h2 = g.h * g.h;
        for k in (0..g.len()).step_by(37) {
            let (a, b) = g.lambda(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for (q, v) in f.values().iter().enumerate() {
                let (c, d) = g.lambda(q);
                let r2 = (a - c).powi(2) + (b - d).powi(2);
                acc += v * (w * w / (2.0 * PI) * (-0.5 * w * w * r2).exp() * h2);
            }
            assert!((acc - s.values()[k]).norm() < 1e-13);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn contraction_in_lp(p in 1.0f64..8.0, shift in -1.0f64..1.0, freq in 0.5f64..6.0) {
            let w = 4.0;
            let g = Grid::for_bandwidth(w).unwrap();
            let f = ComplexField::sample(&g, |x, y| {
                Complex64::new((freq * x).cos(), (freq * (y - shift)).sin()) * (-(x * x + y * y) / 2.0).exp()
            }).unwrap();
            let s = gaussian_smooth(&f, w).unwrap();
            prop_assert!(s.lp_norm(p) <= f.lp_norm(p) * (1.0 + 1e-8));
            prop_assert!(s.norm_inf() <= f.norm_inf() * (1.0 + 1e-8));
        }

        #[test]
        fn smoothing_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let w = 2.0;
            let g = Grid::for_bandwidth(w).unwrap();
            let sm = GaussianSmoother::new(&g, w).unwrap();
            let f = ComplexField::sample(&g, |x, y| Complex64::new((-(x * x)).exp(), y * (-(y * y)).exp())).unwrap();
            let h = ComplexField::sample(&g, |x, y| Complex64::new((x * y).cos() * (-(x * x + y * y)).exp(), 0.0)).unwrap();
            let mut comb = f.scale(Complex64::new(a, 0.0));
            comb.axpy(Complex64::new(b, 0.0), &h);
            let lhs = sm.apply(&comb).unwrap();
            let mut rhs = sm.apply(&f).unwrap().scale(Complex64::new(a, 0.0));
            rhs.axpy(Complex64::new(b, 0.0), &sm.apply(&h).unwrap());
            prop_assert!(lhs.sub(&rhs).norm_inf() < 1e-12);
        }

        #[test]
        fn nonnegative_stays_nonnegative(c0 in 0.1f64..3.0) {
            let w = 2.0;
            let g = Grid::for_bandwidth(w).unwrap();
            let f = ComplexField::sample(&g, |x, y| Complex64::new((-(c0 * (x * x + y * y))).exp(), 0.0)).unwrap();
            let s = gaussian_smooth(&f, w).unwrap();
            for v in s.values() {
                prop_assert!(v.re >= 0.0 && v.im == 0.0);
            }
        }
    }
}
