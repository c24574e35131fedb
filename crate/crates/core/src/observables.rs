//! Density of states, Green-function correlators and energy derivatives
//! assembled from the top eigenfunction and the defect sequence.
//!
//! With `G_k = 𝒯ᵏe^{−V} = u + A_k`, `A_k = Tᵏ(e^{−V} − u)`, and the peeled
//! `Ĝ_k = e^{V}G_k = w + P_k`, every integral has the form
//! `(1/2π)∫Λ⁻¹ f g` with exactly one factor peeled, so `e^{+V}` never appears.
//!
//! Index convention: `I₂[j]` and `A_j` count applications of `T`, so `I₂[j]`
//! is `I₂(j+1)` in the one-based convention.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::ComplexField;
use crate::transfer::TransferContext;
use crate::wkb::Eigenfunction;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default memory budget for cached fields (bytes).
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

/// Largest number of distinct insertion sites in a chain.
pub const MAX_INSERTIONS: usize = 3;

/// Settings of [`build_defect_cache`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CacheOptions {
    /// Stop once `‖A_j‖₂ < rel_tol·‖A₀‖₂`.
    pub rel_tol: f64,
    /// Never store beyond this index (typically `N − 1`).
    pub j_cap: Option<usize>,
    /// Hard iteration limit; `None` means `400·W`.
    pub j_limit: Option<usize>,
    pub memory_budget: usize,
}

impl Default for CacheOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-14,
            j_cap: None,
            j_limit: None,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// The peeled defect sequence `P_j = e^{V}A_j`, `j = 0…j_max`.
#[derive(Debug, Clone)]
pub struct DefectCache {
    pub w: f64,
    a0: ComplexField,
    p: Vec<ComplexField>,
    /// `‖A_j‖₂` for `j = 0…j_max`.
    pub norms: Vec<f64>,
    /// Fitted per-step decay factor of `‖A_j‖₂`.
    pub measured_rate: f64,
    /// Whether the sequence was cut by `j_cap` rather than by decay.
    pub capped: bool,
}

/// Builds `P₀ = 1 − w` and `P_j = m_T(A_{j−1})` until `A_j` is negligible.
pub fn build_defect_cache(tc: &TransferContext, eig: &Eigenfunction, opts: CacheOptions) -> Result<DefectCache> {
    let limit = opts.j_limit.unwrap_or((400.0 * tc.w).ceil() as usize);
    let field_bytes = tc.grid.len() * std::mem::size_of::<Complex64>();
    let max_fields = (opts.memory_budget / field_bytes).max(2);

    let a0 = tc.exp_minus_v.sub(&eig.u);
    let p0 = eig.w.map(|x| ONE - x);
    let n0 = a0.norm2();
    let mut norms = vec![n0];
    let mut p = vec![p0];
    let mut a = a0.clone();
    let mut capped = false;
    loop {
        let j = p.len();
        if norms[j - 1] < opts.rel_tol * n0 || n0 == 0.0 {
            break;
        }
        if opts.j_cap.is_some_and(|c| j > c) {
            capped = true;
            break;
        }
        if j > limit {
            return Err(Error::NoConvergence {
                module: "observables",
                iterations: j,
                detail: format!("‖A_j‖₂ = {:.3e} has not decayed below {:.1e}·‖A₀‖₂", norms[j - 1], opts.rel_tol),
            });
        }
        if j >= max_fields {
            return Err(Error::Memory {
                module: "observables",
                what: format!("defect cache beyond j = {j}"),
                bytes: (j + 1) * field_bytes,
                budget: opts.memory_budget,
            });
        }
        let pj = tc.bare_image_t(&a)?;
        a = tc.exp_minus_v.mul(&pj);
        norms.push(a.norm2());
        p.push(pj);
    }
    let measured_rate = decay_rate(&norms, 3);
    Ok(DefectCache {
        w: tc.w,
        a0,
        p,
        norms,
        measured_rate,
        capped,
    })
}

/// `exp` of the least-squares slope of `log x_j` over `j ≥ from`.
pub fn decay_rate(x: &[f64], from: usize) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(_, v)| **v > 0.0)
        .map(|(j, v)| (j as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    linear_fit(&pts).0.exp()
}

/// Least-squares `(slope, intercept)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

impl DefectCache {
    pub fn j_max(&self) -> usize {
        self.p.len() - 1
    }

    /// `P_j`, or `None` beyond the cache.
    pub fn p(&self, j: usize) -> Option<&ComplexField> {
        self.p.get(j)
    }

    /// `A_j = e^{−V}P_j` (stored for `j = 0`).
    pub fn a(&self, tc: &TransferContext, j: usize) -> Option<ComplexField> {
        match j {
            0 => Some(self.a0.clone()),
            _ => self.p.get(j).map(|p| tc.exp_minus_v.mul(p)),
        }
    }

    /// Bound on `|I₂[j]|` for `j` past the cache.
    pub fn i2_tail_bound(&self, eig: &Eigenfunction, j: usize) -> f64 {
        let jm = self.j_max();
        if j <= jm || self.capped {
            return 0.0;
        }
        let rate = self.measured_rate.min(1.0);
        eig.u.norm2() * self.p[jm].norm2() * rate.powi((j - jm) as i32) / (2.0 * PI)
    }
}

/// `I₁ = (1/2π)∫Λ⁻¹ u w`.
pub fn compute_i1(tc: &TransferContext, eig: &Eigenfunction) -> Complex64 {
    tc.pairing(&eig.u.mul(&eig.w))
}

/// `I₂[j] = (1/2π)∫Λ⁻¹ u P_j`; zero past the cache (see [`DefectCache::i2_tail_bound`]).
pub fn compute_i2(tc: &TransferContext, eig: &Eigenfunction, cache: &DefectCache, j: usize) -> Complex64 {
    match cache.p(j) {
        Some(p) => tc.pairing(&eig.u.mul(p)),
        None => ZERO,
    }
}

/// `I₃[j, j′] = (1/2π)∫Λ⁻¹ P_j A_{j′}`, symmetric in its arguments.
pub fn compute_i3(tc: &TransferContext, cache: &DefectCache, j: usize, jp: usize) -> Result<Complex64> {
    if j == 0 && jp == 0 {
        return Err(invalid("observables", "I3[0, 0] needs N >= 2"));
    }
    let (lo, hi) = (j.min(jp), j.max(jp));
    let (Some(p), Some(a)) = (cache.p(lo), cache.a(tc, hi)) else {
        return Ok(ZERO);
    };
    Ok(tc.pairing(&p.mul(&a)))
}

/// `ρ(E) = −Im(ℰ + I₁)/π`.
pub fn rho_infinite(tc: &TransferContext, eig: &Eigenfunction) -> f64 {
    -(tc.ctx.script_e + compute_i1(tc, eig)).im / PI
}

/// Finite-volume density of states with its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DosReport {
    pub e: f64,
    pub w: f64,
    pub n: usize,
    pub rho_sc: f64,
    pub rho_inf: f64,
    pub rho_n: f64,
    pub i1: Complex64,
    /// `I₂[j]` for `j = 0…N−1`.
    pub i2: Vec<Complex64>,
    /// `I₃[y−1, N−y]` for `y = 1…N`.
    pub i3_used: Vec<Complex64>,
    /// `I_N(y)` for `y = 1…N`.
    pub site_profile: Vec<Complex64>,
    pub j_max: usize,
    /// Bound on everything dropped past the cache, in units of `ρ_N`.
    pub tail_bound: f64,
}

/// Tridiagonal `J = −W²Δ_N + 𝟙` with Neumann ends; returns `(x, J_yx)` for row `y`.
pub fn j_row(w: f64, n: usize, y: usize) -> Vec<(usize, f64)> {
    let w2 = w * w;
    let mut row = Vec::with_capacity(3);
    if y > 1 {
        row.push((y - 1, -w2));
    }
    let neighbours = usize::from(y > 1) + usize::from(y < n);
    row.push((y, 1.0 + w2 * neighbours as f64));
    if y < n {
        row.push((y + 1, -w2));
    }
    row
}

/// Observables of the chain of length `N`.
pub struct FiniteChain<'a> {
    pub tc: &'a TransferContext,
    pub eig: &'a Eigenfunction,
    pub cache: &'a DefectCache,
    pub n: usize,
}

impl<'a> FiniteChain<'a> {
    pub fn new(tc: &'a TransferContext, eig: &'a Eigenfunction, cache: &'a DefectCache, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("observables", format!("chain length N = {n}; need N >= 2")));
        }
        if cache.capped && cache.j_max() + 1 < n {
            return Err(invalid(
                "observables",
                format!("defect cache capped at j = {}, chain needs N - 1 = {}", cache.j_max(), n - 1),
            ));
        }
        Ok(Self { tc, eig, cache, n })
    }

    fn site(&self, y: usize) -> Result<()> {
        if y == 0 || y > self.n {
            return Err(invalid("observables", format!("site {y} outside 1..={}", self.n)));
        }
        Ok(())
    }

    /// `G_k = u + A_k`.
    fn g(&self, k: usize) -> ComplexField {
        match self.cache.a(self.tc, k) {
            Some(a) => self.eig.u.add(&a),
            None => self.eig.u.clone(),
        }
    }

    /// `Ĝ_k = w + P_k`.
    fn g_hat(&self, k: usize) -> ComplexField {
        match self.cache.p(k) {
            Some(p) => self.eig.w.add(p),
            None => self.eig.w.clone(),
        }
    }

    /// `I_N(y) = I₁ + I₂[y−1] + I₂[N−y] + I₃[y−1, N−y]`.
    pub fn site_term(&self, y: usize) -> Result<Complex64> {
        self.site(y)?;
        let (tc, eig, c) = (self.tc, self.eig, self.cache);
        Ok(compute_i1(tc, eig)
            + compute_i2(tc, eig, c, y - 1)
            + compute_i2(tc, eig, c, self.n - y)
            + compute_i3(tc, c, y - 1, self.n - y)?)
    }

    /// `ρ_N = −Im(ℰ + (1/N)Σ_y I_N(y))/π`.
    pub fn rho_finite(&self) -> Result<DosReport> {
        let (tc, eig, c, n) = (self.tc, self.eig, self.cache, self.n);
        let i1 = compute_i1(tc, eig);
        let i2: Vec<Complex64> = (0..n).map(|j| compute_i2(tc, eig, c, j)).collect();
        let mut i3_used = Vec::with_capacity(n);
        let mut profile = Vec::with_capacity(n);
        for y in 1..=n {
            // I₃ is symmetric, so only half the sites need an integral.
            let i3 = if 2 * y > n + 1 { i3_used[n - y] } else { compute_i3(tc, c, y - 1, n - y)? };
            i3_used.push(i3);
            profile.push(i1 + i2[y - 1] + i2[n - y] + i3);
        }
        let mean: Complex64 = profile.iter().sum::<Complex64>() / n as f64;
        let tail: f64 = (0..n).map(|j| 2.0 * c.i2_tail_bound(eig, j)).sum::<f64>() / (n as f64 * PI);
        Ok(DosReport {
            e: tc.ctx.e,
            w: tc.w,
            n,
            rho_sc: tc.ctx.rho_sc,
            rho_inf: -(tc.ctx.script_e + i1).im / PI,
            rho_n: -(tc.ctx.script_e + mean).im / PI,
            i1,
            i2,
            i3_used,
            site_profile: profile,
            j_max: c.j_max(),
            tail_bound: tail,
        })
    }

    /// `⟨G_yy⟩ = ℰ + Σ_x J_yx I_N(x)`.
    pub fn green_diag(&self, y: usize) -> Result<Complex64> {
        self.site(y)?;
        let mut g = self.tc.ctx.script_e;
        for (x, j) in j_row(self.tc.w, self.n, y) {
            g += j * self.site_term(x)?;
        }
        Ok(g)
    }

    /// `I_{xx′}`; for `x′ < x` the reflected pair is used.
    pub fn correlator(&self, x: usize, xp: usize) -> Result<Complex64> {
        self.site(x)?;
        self.site(xp)?;
        if xp < x {
            return self.correlator(self.n - x + 1, self.n - xp + 1);
        }
        if x == xp {
            // Λ cancels: (1/2π)∫Ĝ_{x−1} G_{N−x}
            return Ok(self.g_hat(x - 1).mul(&self.g(self.n - x)).integrate() / (2.0 * PI));
        }
        let mut s = self.g(self.n - xp).lambda_multiply();
        for _ in 0..(xp - x - 1) {
            s = self.tc.apply_t(&s)?;
        }
        let right = self.tc.bare_image_t(&s)?;
        Ok(self.tc.pairing(&self.g(x - 1).mul(&right)))
    }

    /// `⟨G_{yy′}G_{y′y}⟩ = −J_{yy′} + Σ_{x,x′} J_yx J_{y′x′} I_{xx′}`.
    pub fn green_pair(&self, y: usize, yp: usize) -> Result<Complex64> {
        self.site(y)?;
        self.site(yp)?;
        let w = self.tc.w;
        let ry = j_row(w, self.n, y);
        let ryp = j_row(w, self.n, yp);
        let jyy = ry.iter().find(|(x, _)| *x == yp).map_or(0.0, |e| e.1);
        let mut sum = Complex64::new(-jyy, 0.0);
        for &(x, a) in &ry {
            for &(xp, b) in &ryp {
                sum += a * b * self.correlator(x, xp)?;
            }
        }
        Ok(sum)
    }

    /// One term of the multi-insertion expansion: `Λ^{n_i}` inserted at
    /// `sites[i]`, the `a`-insertion at `x`, and `sites[..m] ≤ x < sites[m..]`.
    pub fn insertion_chain(&self, x: usize, sites: &[usize], powers: &[usize], m: usize) -> Result<Complex64> {
        let q = sites.len();
        if q == 0 || q > MAX_INSERTIONS {
            return Err(invalid("observables", format!("{q} insertion sites; supported 1..={MAX_INSERTIONS}")));
        }
        if powers.len() != q || powers.contains(&0) {
            return Err(invalid("observables", "need one power >= 1 per site"));
        }
        self.site(x)?;
        for s in sites {
            self.site(*s)?;
        }
        if sites.windows(2).any(|p| p[0] >= p[1]) {
            return Err(invalid("observables", "insertion sites must increase strictly"));
        }
        let lower = if m == 0 { 1 } else { sites[m - 1] };
        let upper = if m == q { self.n + 1 } else { sites[m] };
        if m > q || x < lower || x >= upper {
            return Err(invalid("observables", format!("split m = {m} inconsistent with x = {x}")));
        }
        let tc = self.tc;
        let lam_pow = |f: &ComplexField, p: usize| {
            let mut f = f.clone();
            for _ in 0..p {
                f = f.lambda_multiply();
            }
            f
        };
        let t_pow = |f: ComplexField, k: usize| -> Result<ComplexField> {
            let mut f = f;
            for _ in 0..k {
                f = tc.apply_t(&f)?;
            }
            Ok(f)
        };

        let left = if m == 0 {
            self.g(x - 1)
        } else {
            let mut f = lam_pow(&self.g(sites[0] - 1), powers[0]);
            for i in 1..m {
                f = lam_pow(&t_pow(f, sites[i] - sites[i - 1])?, powers[i]);
            }
            t_pow(f, x - sites[m - 1])?
        };
        let right = if m == q {
            self.g_hat(self.n - x)
        } else {
            let mut f = lam_pow(&self.g(self.n - sites[q - 1]), powers[q - 1]);
            for i in (m..q - 1).rev() {
                f = lam_pow(&t_pow(f, sites[i + 1] - sites[i])?, powers[i]);
            }
            tc.bare_image_t(&t_pow(f, sites[m] - x - 1)?)?
        };
        Ok(tc.pairing(&left.mul(&right)))
    }

    /// `Σ_{x,x′} I_{xx′}` by one backward sweep.
    pub fn correlator_sum(&self) -> Result<Complex64> {
        let (tc, n) = (self.tc, self.n);
        let mut diag = ZERO;
        for x in 1..=n {
            diag += self.g_hat(x - 1).mul(&self.g(n - x)).integrate() / (2.0 * PI);
        }
        // R_x = Σ_{x′>x} T^{x′−x−1}(Λ G_{N−x′}) obeys R_x = ΛG_{N−x−1} + T R_{x+1}.
        let mut off = ZERO;
        let mut r = self.g(0).lambda_multiply();
        for x in (1..n).rev() {
            let mr = tc.bare_image_t(&r)?;
            off += tc.pairing(&self.g(x - 1).mul(&mr));
            if x > 1 {
                r = self.g(n - x).lambda_multiply().add(&tc.exp_minus_v.mul(&mr));
            }
        }
        Ok(diag + 2.0 * off)
    }

    /// `∂ⁿ_E ρ_N` for `n ∈ {1, 2, 3}`.
    ///
    /// Uses `∂_E⟨tr G⟩ = N − Σ_{x,x′} I_{xx′}` for `n = 1` (from
    /// `∂_E tr G = −tr G²` and the pair representation) and the generic chain
    /// evaluator otherwise.
    pub fn trace_derivative(&self, n: usize) -> Result<f64> {
        match n {
            1 => Ok(self.correlator_sum()?.im / (PI * self.n as f64)),
            2 | 3 => Ok(self.trace_derivative_generic(n)?),
            _ => Err(invalid("observables", format!("derivative order {n}; supported 1..=3"))),
        }
    }

    /// `∂ⁿ_E ρ_N = −(−1)ⁿ Im S_n/(πN)` with `S_n = Σ_x⟨a_x (Σ_y Λ_y)ⁿ⟩`.
    ///
    /// `S_n = n!·[tⁿ]` of the pairing of two chains carrying `e^{tΛ}` at
    /// every site; each chain is a polynomial in `t` truncated at degree `n`.
    /// The left chain is replayed from checkpoints to bound memory.
    pub fn trace_derivative_generic(&self, n: usize) -> Result<f64> {
        if n == 0 || n > 6 {
            return Err(invalid("observables", format!("derivative order {n}; supported 1..=6")));
        }
        let s = self.insertion_sum(n)?;
        let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        Ok(-sign * s.im / (PI * self.n as f64))
    }

    /// `S_n` of [`Self::trace_derivative_generic`].
    pub fn insertion_sum(&self, order: usize) -> Result<Complex64> {
        let (tc, n) = (self.tc, self.n);
        let deg = order;
        // Λᵏ/k!
        let lam = ComplexField::constant(&tc.grid, ONE).lambda_multiply();
        let mut lam_pows = vec![ComplexField::constant(&tc.grid, ONE)];
        for k in 1..=deg {
            let next = lam_pows[k - 1].mul(&lam).scale(Complex64::new(1.0 / k as f64, 0.0));
            lam_pows.push(next);
        }
        let insert = |f: &[ComplexField]| -> Vec<ComplexField> {
            (0..=deg)
                .map(|k| {
                    let mut acc = f[k].clone();
                    for j in 0..k {
                        acc.add_assign(&f[j].mul(&lam_pows[k - j]));
                    }
                    acc
                })
                .collect()
        };
        // Peeled 𝒯 coefficientwise: only the t⁰ part can be nonzero at the origin.
        let peel = |f: &[ComplexField]| -> Result<Vec<ComplexField>> {
            f.iter()
                .enumerate()
                .map(|(k, c)| if k == 0 { tc.bare_image(c, c.at_origin()) } else { tc.bare_image_t(c) })
                .collect()
        };
        let tcal = |f: &[ComplexField]| -> Result<Vec<ComplexField>> {
            Ok(peel(f)?.iter().map(|m| tc.exp_minus_v.mul(m)).collect())
        };
        let mut base = vec![tc.exp_minus_v.clone()];
        base.extend((0..deg).map(|_| ComplexField::zeros(&tc.grid)));

        let block = (n as f64).sqrt().ceil() as usize;
        let mut checkpoints: Vec<Vec<ComplexField>> = Vec::new();
        let mut left = insert(&base);
        for x in 1..=n {
            if (x - 1) % block == 0 {
                checkpoints.push(left.clone());
            }
            if x < n {
                left = insert(&tcal(&left)?);
            }
        }
        drop(left);

        let mut total = ZERO;
        let mut right = insert(&base); // R_N
        let mut peeled_right: Option<Vec<ComplexField>> = None; // m(R_{x+1}); None means the constant 1
        for b in (0..checkpoints.len()).rev() {
            let start = b * block + 1;
            let end = ((b + 1) * block).min(n);
            let mut lefts = vec![checkpoints[b].clone()];
            for _ in start..end {
                let next = insert(&tcal(lefts.last().expect("nonempty"))?);
                lefts.push(next);
            }
            for x in (start..=end).rev() {
                let f = &lefts[x - start];
                let mut c = ZERO;
                match &peeled_right {
                    None => c += tc.pairing(&f[deg]),
                    Some(pr) => {
                        for k in 0..=deg {
                            c += tc.pairing(&f[k].mul(&pr[deg - k]));
                        }
                    }
                }
                total += c;
                if x > 1 {
                    // R_x from R_{x+1}; at x = N it is the initial R_N
                    if x < n {
                        let pr = peeled_right.as_ref().expect("set for x < N");
                        right = insert(&pr.iter().map(|m| tc.exp_minus_v.mul(m)).collect::<Vec<_>>());
                    }
                    peeled_right = Some(peel(&right)?);
                }
            }
            checkpoints.truncate(b);
        }
        Ok(total * factorial(order))
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}
