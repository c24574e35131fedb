//! Complex functions sampled on a centred square λ-grid.
//!
//! A [`ComplexField`] stores one value per node in row-major order: the
//! first index runs over `λ₁`, the second over `λ₂`. The origin `λ = 0` is
//! always a node.

mod origin;
mod smooth;

pub use origin::{lattice_constant, lattice_constant_table, OriginRule, OriginTaylor, CORRECTION_ORDERS};
pub use smooth::{gaussian_smooth, GaussianSmoother};

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default node cap (4096² nodes).
pub const DEFAULT_NODE_CAP: usize = 4096 * 4096;
pub const DEFAULT_POINTS_PER_SIGMA: f64 = 3.0;
pub const DEFAULT_HALF_WIDTH: f64 = 4.0;

/// Square grid `[−L, L]²` with spacing `h = 1/(pps·W)` and `n = 2⌊L/h⌋+1` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub l: f64,
    pub h: f64,
    pub n: usize,
    /// Bandwidth the grid was built for; the smoothing kernel has σ = 1/w.
    pub w: f64,
}

impl Grid {
    pub fn new(w: f64, points_per_sigma: f64, l: f64) -> Result<Self> {
        Self::with_cap(w, points_per_sigma, l, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(w: f64, points_per_sigma: f64, l: f64, cap: usize) -> Result<Self> {
        if !(w >= 1.0) || !w.is_finite() {
            return Err(crate::error::invalid("field", format!("bandwidth W = {w} must be >= 1")));
        }
        if !(points_per_sigma >= 1.0) {
            return Err(crate::error::invalid(
                "field",
                format!("points_per_sigma = {points_per_sigma} must be >= 1"),
            ));
        }
        if !(l >= 4.0) {
            return Err(crate::error::invalid("field", format!("half-width L = {l} must be >= 4")));
        }
        let h = 1.0 / (points_per_sigma * w);
        let m = (l / h + 1e-9).floor();
        let n = 2.0 * m + 1.0;
        if n * n > cap as f64 {
            return Err(Error::Resource { n: n as usize, cap });
        }
        Ok(Self { l, h, n: n as usize, w })
    }

    /// Default grid for bandwidth `w` (3 nodes per σ, L = 4).
    pub fn for_bandwidth(w: f64) -> Result<Self> {
        Self::new(w, DEFAULT_POINTS_PER_SIGMA, DEFAULT_HALF_WIDTH)
    }

    /// `⌊n/2⌋`, the index of `λ = 0` along each axis.
    pub fn half(&self) -> usize {
        self.n / 2
    }

    pub fn origin_index(&self) -> (usize, usize) {
        (self.half(), self.half())
    }

    pub fn origin_flat(&self) -> usize {
        self.half() * self.n + self.half()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.half() as f64) * self.h
    }

    pub fn lambda(&self, k: usize) -> (f64, f64) {
        (self.coord(k / self.n), self.coord(k % self.n))
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && self.h == other.h && self.w == other.w
    }

    pub(crate) fn check(&self, other: &Grid, module: &'static str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                module,
                detail: format!("n = {} / {}, h = {} / {}", self.n, other.n, self.h, other.h),
            })
        }
    }
}

/// A complex value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn constant(grid: &Grid, c: Complex64) -> Self {
        Self {
            grid: *grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                module: "field",
                detail: format!("{} values for {} nodes", values.len(), grid.len()),
            });
        }
        Ok(Self { grid: *grid, values })
    }

    /// Samples `f(λ₁, λ₂)` at every node; fails on the first non-finite value.
    pub fn sample(grid: &Grid, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let n = grid.n;
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            let l1 = grid.coord(i);
            for j in 0..n {
                let l2 = grid.coord(j);
                let v = f(l1, l2);
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::NonFinite { i, j, l1, l2 });
                }
                values.push(v);
            }
        }
        Ok(Self { grid: *grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.grid.n + j]
    }

    pub fn at_origin(&self) -> Complex64 {
        self.values[self.grid.origin_flat()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_with_lambda(&self, f: impl Fn(f64, f64, Complex64) -> Complex64) -> Self {
        let n = self.grid.n;
        let g = self.grid;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(g.coord(k / n), g.coord(k % n), v))
            .collect();
        Self { grid: self.grid, values }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    /// `self += c·other`.
    pub fn axpy(&mut self, c: Complex64, other: &Self) {
        debug_assert!(self.grid.same_as(&other.grid));
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.grid.same_as(&other.grid));
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    /// Node sum times `h²`.
    pub fn integrate(&self) -> Complex64 {
        let n = self.grid.n;
        let total: Complex64 = self.values.chunks(n).map(|row| row.iter().sum::<Complex64>()).sum();
        total * self.grid.h * self.grid.h
    }

    /// `(∫|f|^p)^{1/p}` by the node rule; `p = ∞` gives the max modulus.
    pub fn lp_norm(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "lp_norm needs p >= 1");
        if p.is_infinite() {
            return self.norm_inf();
        }
        let n = self.grid.n;
        let s: f64 = self
            .values
            .chunks(n)
            .map(|row| row.iter().map(|v| v.norm().powf(p)).sum::<f64>())
            .sum();
        (s * self.grid.h * self.grid.h).powf(1.0 / p)
    }

    pub fn norm2(&self) -> f64 {
        let n = self.grid.n;
        let s: f64 = self
            .values
            .chunks(n)
            .map(|row| row.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        (s * self.grid.h * self.grid.h).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Pointwise `Λ·f` with `Λ = λ₁ − iλ₂`.
    pub fn lambda_multiply(&self) -> Self {
        self.map_with_lambda(|l1, l2, v| v * Complex64::new(l1, -l2))
    }

    /// Pointwise `f/Λ`; the origin node is assigned 0.
    pub fn lambda_divide(&self) -> Self {
        let mut out = self.map_with_lambda(|l1, l2, v| {
            if l1 == 0.0 && l2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                v / Complex64::new(l1, -l2)
            }
        });
        let o = self.grid.origin_flat();
        out.values[o] = Complex64::new(0.0, 0.0);
        out
    }

    /// Text dump: `# lambda1 lambda2 re im`, one node per line, row-major.
    pub fn dump(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# lambda1 lambda2 re im")?;
        for (k, v) in self.values.iter().enumerate() {
            let (l1, l2) = self.grid.lambda(k);
            writeln!(out, "{l1:.12e} {l2:.12e} {:.16e} {:.16e}", v.re, v.im)?;
        }
        Ok(())
    }
}

/// Convenience wrapper for [`ComplexField::sample`].
pub fn sample_field(grid: &Grid, f: impl Fn(f64, f64) -> Complex64) -> Result<ComplexField> {
    ComplexField::sample(grid, f)
}
