//! Monte Carlo for the Gaussian band-matrix ensembles.
//!
//! Samples are drawn with ChaCha8 seeded by `seed ^ index`, so every sample is
//! reproducible on its own and the statistics do not depend on the thread
//! count.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Variance profile of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// `(−W²Δ_N + 𝟙)⁻¹` with the Neumann Laplacian.
    #[default]
    Laplacian,
    /// `𝟙_{|x−y| ≤ W}/W`.
    Uniform,
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplacian" => Ok(Self::Laplacian),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::Config(format!("unknown covariance kind '{s}'"))),
        }
    }
}

impl std::fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Laplacian => "laplacian",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandCovariance {
    pub n: usize,
    pub w: f64,
    pub kind: CovarianceKind,
    /// Entry variances, row-major `n × n`.
    pub var: Vec<f64>,
}

impl BandCovariance {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.var[x * self.n + y]
    }

    pub fn row_sum(&self, x: usize) -> f64 {
        self.var[x * self.n..(x + 1) * self.n].iter().sum()
    }
}

/// Solves the symmetric tridiagonal system with constant off-diagonal `off`.
fn thomas(diag: &[f64], off: f64, rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut b = diag[0];
    c[0] = off / b;
    rhs[0] /= b;
    for i in 1..n {
        b = diag[i] - off * c[i - 1];
        c[i] = off / b;
        rhs[i] = (rhs[i] - off * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

pub fn build_covariance(n: usize, w: f64, kind: CovarianceKind) -> Result<BandCovariance> {
    if n < 2 || !(w >= 1.0) {
        return Err(invalid("ensemble", format!("need N >= 2 and W >= 1, got N = {n}, W = {w}")));
    }
    let mut var = vec![0.0; n * n];
    match kind {
        CovarianceKind::Laplacian => {
            let w2 = w * w;
            let diag: Vec<f64> = (0..n)
                .map(|i| if i == 0 || i == n - 1 { 1.0 + w2 } else { 1.0 + 2.0 * w2 })
                .collect();
            for k in 0..n {
                let mut col = vec![0.0; n];
                col[k] = 1.0;
                thomas(&diag, -w2, &mut col);
                for (x, v) in col.into_iter().enumerate() {
                    var[x * n + k] = v.max(0.0);
                }
            }
            // the inverse is symmetric; average away round-off
            for x in 0..n {
                for y in x + 1..n {
                    let m = 0.5 * (var[x * n + y] + var[y * n + x]);
                    var[x * n + y] = m;
                    var[y * n + x] = m;
                }
            }
        }
        CovarianceKind::Uniform => {
            for x in 0..n {
                for y in 0..n {
                    if (x as f64 - y as f64).abs() <= w {
                        var[x * n + y] = 1.0 / w;
                    }
                }
            }
        }
    }
    Ok(BandCovariance { n, w, kind, var })
}

/// Draws one Hermitian matrix of the ensemble.
pub fn sample_hamiltonian(cov: &BandCovariance, seed: u64) -> DMatrix<Complex64> {
    let n = cov.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    for x in 0..n {
        let g: f64 = StandardNormal.sample(&mut rng);
        h[(x, x)] = Complex64::new(g * cov.get(x, x).sqrt(), 0.0);
        for y in x + 1..n {
            let s = (0.5 * cov.get(x, y)).sqrt();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let z = Complex64::new(re * s, im * s);
            h[(x, y)] = z;
            h[(y, x)] = z.conj();
        }
    }
    h
}

/// Eigenvalues of a Hermitian matrix through its real symmetric embedding
/// `[[A, −B], [B, A]]`, whose spectrum is that of `A + iB` with every value doubled.
pub fn hermitian_eigenvalues(h: &DMatrix<Complex64>) -> Option<Vec<f64>> {
    let n = h.nrows();
    let emb = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let ev = nalgebra::SymmetricEigen::try_new(emb, f64::EPSILON, 10_000)?.eigenvalues;
    let mut v: Vec<f64> = ev.iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.into_iter().step_by(2).collect())
}

/// How eigenvalues are turned into a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// `−(1/πN) Im tr(E + iε − H)⁻¹`.
    Epsilon(f64),
    /// Gaussian kernel of this standard deviation on the eigenvalue histogram.
    KernelWidth(f64),
}

impl Smoothing {
    /// Gaussian kernel of width `3·(4/N)`.
    pub fn default_for(n: usize) -> Self {
        Self::KernelWidth(12.0 / n as f64)
    }

    fn scale(&self) -> f64 {
        match *self {
            Self::Epsilon(s) | Self::KernelWidth(s) => s,
        }
    }

    /// Smoothed density and its second energy derivative for one spectrum.
    fn density(&self, eig: &[f64], e: f64) -> (f64, f64) {
        let n = eig.len() as f64;
        match *self {
            Self::KernelWidth(s) => {
                let mut r = 0.0;
                let mut d2 = 0.0;
                for &l in eig {
                    let z = (e - l) / s;
                    let phi = (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt());
                    r += phi;
                    d2 += phi * (z * z - 1.0) / (s * s);
                }
                (r / n, d2 / n)
            }
            Self::Epsilon(eps) => {
                let mut r = 0.0;
                let mut d2 = 0.0;
                for &l in eig {
                    let g = Complex64::new(1.0, 0.0) / Complex64::new(e - l, eps);
                    r += -g.im;
                    d2 += -(2.0 * g * g * g).im;
                }
                (r / (PI * n), d2 / (PI * n))
            }
        }
    }
}

impl std::fmt::Display for Smoothing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Epsilon(e) => write!(f, "epsilon={e}"),
            Self::KernelWidth(s) => write!(f, "kernel={s}"),
        }
    }
}

/// Per-energy mean and standard error over samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub energies: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Sample mean of `∂²_E` of the smoothed density.
    pub d2_mean: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub smoothing: Smoothing,
    /// Fraction of eigenvalues outside `[−2.5, 2.5]`.
    pub outside_fraction: f64,
}

impl EnsembleStats {
    /// Bias of the smoothing against the unsmoothed density, `scale²·max|∂²ρ̂|/2`
    /// over the energy grid.
    pub fn smoothing_bias_budget(&self) -> f64 {
        let s = self.smoothing.scale();
        let m = self.d2_mean.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        s * s * m / 2.0
    }
}

/// Mean and standard error of a sample.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Averaged smoothed density of states.
pub fn empirical_dos(
    cov: &BandCovariance,
    samples: usize,
    seed: u64,
    energies: &[f64],
    smoothing: Smoothing,
) -> Result<EnsembleStats> {
    if samples < 2 {
        return Err(invalid("ensemble", "need at least 2 samples"));
    }
    if !(smoothing.scale() > 0.0) {
        return Err(invalid("ensemble", "smoothing scale must be positive"));
    }
    let spectra: Vec<Result<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let h = sample_hamiltonian(cov, seed ^ k as u64);
            hermitian_eigenvalues(&h).ok_or(Error::Eigensolver(k))
        })
        .collect();
    let spectra = spectra.into_iter().collect::<Result<Vec<_>>>()?;
    let outside = spectra.iter().flatten().filter(|l| l.abs() > 2.5).count() as f64;
    let outside_fraction = outside / (samples * cov.n) as f64;

    let mut mean = Vec::with_capacity(energies.len());
    let mut se = Vec::with_capacity(energies.len());
    let mut d2_mean = Vec::with_capacity(energies.len());
    for &e in energies {
        let (r, d2): (Vec<f64>, Vec<f64>) = spectra.iter().map(|s| smoothing.density(s, e)).unzip();
        let (m, s) = mean_se(&r);
        mean.push(m);
        se.push(s);
        d2_mean.push(mean_se(&d2).0);
    }
    Ok(EnsembleStats {
        energies: energies.to_vec(),
        mean,
        se,
        d2_mean,
        samples,
        seed,
        smoothing,
        outside_fraction,
    })
}

/// Complex mean with component-wise standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexEstimate {
    pub mean: Complex64,
    pub se_re: f64,
    pub se_im: f64,
}

impl ComplexEstimate {
    fn from_samples(z: &[Complex64]) -> Self {
        let re: Vec<f64> = z.iter().map(|z| z.re).collect();
        let im: Vec<f64> = z.iter().map(|z| z.im).collect();
        let (mr, sr) = mean_se(&re);
        let (mi, si) = mean_se(&im);
        Self {
            mean: Complex64::new(mr, mi),
            se_re: sr,
            se_im: si,
        }
    }

    /// Standard error of `|mean|` to first order.
    pub fn se_abs(&self) -> f64 {
        let a = self.mean.norm();
        if a == 0.0 {
            return self.se_re.hypot(self.se_im);
        }
        ((self.mean.re * self.se_re).powi(2) + (self.mean.im * self.se_im).powi(2)).sqrt() / a
    }
}

/// `⟨G_{yy′}G_{y′y}⟩` at `E + iε` for one pair of sites (0-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenPairEstimate {
    pub y: usize,
    pub yp: usize,
    pub epsilon: f64,
    pub at_epsilon: ComplexEstimate,
    pub at_half_epsilon: ComplexEstimate,
    /// `2·f(ε/2) − f(ε)`.
    pub richardson: Complex64,
}

/// Per-sample `G_{yy′}G_{y′y}` for every pair, at `ε` and `ε/2`.
pub fn empirical_green_pair(
    cov: &BandCovariance,
    e: f64,
    epsilon: f64,
    samples: usize,
    seed: u64,
    pairs: &[(usize, usize)],
) -> Result<Vec<GreenPairEstimate>> {
    if samples < 2 || !(epsilon > 0.0) {
        return Err(invalid("ensemble", "need samples >= 2 and epsilon > 0"));
    }
    let n = cov.n;
    if pairs.iter().any(|&(y, yp)| y >= n || yp >= n) {
        return Err(invalid("ensemble", format!("site outside 0..{n}")));
    }
    let mut cols: Vec<usize> = pairs.iter().flat_map(|&(y, yp)| [y, yp]).collect();
    cols.sort_unstable();
    cols.dedup();

    let per_sample: Vec<Result<Vec<[Complex64; 2]>>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let h = sample_hamiltonian(cov, seed ^ k as u64);
            let mut out = vec![[Complex64::new(0.0, 0.0); 2]; pairs.len()];
            for (slot, eps) in [epsilon, epsilon / 2.0].into_iter().enumerate() {
                let z = Complex64::new(e, eps);
                let a = DMatrix::<Complex64>::identity(n, n) * z - &h;
                let lu = a.lu();
                let mut g = std::collections::HashMap::new();
                for &c in &cols {
                    let mut rhs = DVector::<Complex64>::zeros(n);
                    rhs[c] = Complex64::new(1.0, 0.0);
                    let col = lu.solve(&rhs).ok_or(Error::Eigensolver(k))?;
                    g.insert(c, col);
                }
                for (i, &(y, yp)) in pairs.iter().enumerate() {
                    out[i][slot] = g[&yp][y] * g[&y][yp];
                }
            }
            Ok(out)
        })
        .collect();
    let per_sample = per_sample.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, &(y, yp))| {
            let a: Vec<Complex64> = per_sample.iter().map(|s| s[i][0]).collect();
            let b: Vec<Complex64> = per_sample.iter().map(|s| s[i][1]).collect();
            let at_epsilon = ComplexEstimate::from_samples(&a);
            let at_half_epsilon = ComplexEstimate::from_samples(&b);
            GreenPairEstimate {
                y,
                yp,
                epsilon,
                at_epsilon,
                at_half_epsilon,
                richardson: 2.0 * at_half_epsilon.mean - at_epsilon.mean,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_inverse() {
        let c = build_covariance(2, 1.0, CovarianceKind::Laplacian).unwrap();
        let want = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        for (a, b) in c.var.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn laplacian_matches_dense_inverse() {
        let (n, w) = (30, 4.0);
        let c = build_covariance(n, w, CovarianceKind::Laplacian).unwrap();
        let j = DMatrix::<f64>::from_fn(n, n, |x, y| {
            let w2 = w * w;
            if x == y {
                1.0 + w2 * (usize::from(x > 0) + usize::from(x < n - 1)) as f64
            } else if x.abs_diff(y) == 1 {
                -w2
            } else {
                0.0
            }
        });
        let inv = j.try_inverse().unwrap();
        for x in 0..n {
            for y in 0..n {
                assert!((c.get(x, y) - inv[(x, y)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_decays_at_rate_of_order_one_over_w() {
        let c = build_covariance(256, 8.0, CovarianceKind::Laplacian).unwrap();
        let x = 100;
        let pts: Vec<(f64, f64)> = (8..=40).map(|d| (d as f64, c.get(x, x + d).ln())).collect();
        let slope = crate::observables::linear_fit(&pts).0;
        // continuum rate is 1/W
        assert!(slope < 0.0 && (slope * 8.0 + 1.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn uniform_row_sums() {
        let c = build_covariance(40, 4.0, CovarianceKind::Uniform).unwrap();
        assert!((c.row_sum(20) - 9.0 / 4.0).abs() < 1e-14);
        for x in 0..40 {
            let s = c.row_sum(x);
            assert!((1.0..=2.0 + 0.25 + 1e-12).contains(&s));
        }
    }

    #[test]
    fn sampler_is_hermitian_and_deterministic() {
        let c = build_covariance(12, 2.0, CovarianceKind::Laplacian).unwrap();
        let a = sample_hamiltonian(&c, 5);
        assert_eq!(a, a.adjoint());
        assert_eq!(a, sample_hamiltonian(&c, 5));
        assert_ne!(a, sample_hamiltonian(&c, 6));
    }

    #[test]
    fn embedding_reproduces_complex_spectrum() {
        let c = build_covariance(10, 2.0, CovarianceKind::Uniform).unwrap();
        let h = sample_hamiltonian(&c, 3);
        let ev = hermitian_eigenvalues(&h).unwrap();
        assert_eq!(ev.len(), 10);
        let direct = nalgebra::SymmetricEigen::new(h.clone()).eigenvalues;
        let mut d: Vec<f64> = direct.iter().copied().collect();
        d.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&d) {
            assert!((a - b).abs() < 1e-10);
        }
        let trace: f64 = (0..10).map(|i| h[(i, i)].re).sum();
        assert!((ev.iter().sum::<f64>() - trace).abs() < 1e-10);
    }

    #[test]
    fn kernel_density_is_normalized() {
        let eig = [-1.0, 0.2, 0.3, 1.5];
        let s = Smoothing::KernelWidth(0.1);
        let h = 1e-3;
        let total: f64 = (-4000..=4000).map(|k| s.density(&eig, k as f64 * h).0 * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn standard_error_shrinks_with_samples() {
        let c = build_covariance(48, 4.0, CovarianceKind::Laplacian).unwrap();
        let e = [0.0, 1.0];
        let a = empirical_dos(&c, 200, 1, &e, Smoothing::default_for(48)).unwrap();
        let b = empirical_dos(&c, 800, 1 << 40, &e, Smoothing::default_for(48)).unwrap();
        for i in 0..2 {
            let r = a.se[i] / b.se[i];
            assert!((r / 2.0 - 1.0).abs() < 0.2, "ratio {r}");
        }
        assert_eq!(a, empirical_dos(&c, 200, 1, &e, Smoothing::default_for(48)).unwrap());
    }

    #[test]
    fn resolvent_and_kernel_agree_roughly() {
        let c = build_covariance(64, 4.0, CovarianceKind::Laplacian).unwrap();
        let e = [0.0];
        let k = empirical_dos(&c, 40, 9, &e, Smoothing::KernelWidth(0.05)).unwrap();
        let r = empirical_dos(&c, 40, 9, &e, Smoothing::Epsilon(0.05)).unwrap();
        assert!((k.mean[0] - r.mean[0]).abs() < 0.05);
        assert!((k.mean[0] - 1.0 / PI).abs() < 0.05);
    }

    #[test]
    fn green_pair_diagonal_and_symmetry() {
        let c = build_covariance(20, 2.0, CovarianceKind::Laplacian).unwrap();
        let g = empirical_green_pair(&c, 0.5, 0.2, 2, 4, &[(3, 3), (3, 7), (7, 3)]).unwrap();
        assert_eq!(g[1].at_epsilon.mean, g[2].at_epsilon.mean);
        let mut want = Complex64::new(0.0, 0.0);
        for s in [4, 5] {
            let h = sample_hamiltonian(&c, s);
            let a = DMatrix::<Complex64>::identity(20, 20) * Complex64::new(0.5, 0.2) - h;
            let inv = a.try_inverse().unwrap();
            want += inv[(3, 3)] * inv[(3, 3)] / 2.0;
        }
        assert!((g[0].at_epsilon.mean - want).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn laplacian_rows_sum_to_one(n in 2usize..60, w in 1.0f64..20.0) {
            let c = build_covariance(n, w, CovarianceKind::Laplacian).unwrap();
            for x in 0..n {
                prop_assert!((c.row_sum(x) - 1.0).abs() < 1e-10);
                for y in 0..n {
                    prop_assert!(c.get(x, y) >= 0.0);
                    prop_assert_eq!(c.get(x, y), c.get(y, x));
                }
            }
        }
    }
}
