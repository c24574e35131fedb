//! Approximate top eigenfunctions of 𝒯 and their upgrade to the exact one.
//!
//! The ansatz is `u₀ = e^{−αWλ²}(1 + W Σ_j q^{(j)})` with polynomial
//! corrections built from the supertraces
//! `s_n = λ₁ⁿ − (iλ₂)ⁿ` and `Λ = λ₁ − iλ₂`. The defect `v = 𝒯u₀ − u₀`
//! vanishes at the origin, so `u = u₀ + Σ_n Tⁿv` solves `𝒯u = u`, `u(0) = 1`.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::energy::EnergyContext;
use crate::error::{invalid, Error, Result};
use crate::field::{ComplexField, Grid};
use crate::transfer::TransferContext;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Exponents `p` at which defect norms are reported.
pub const DEFECT_NORM_EXPONENTS: [f64; 4] = [1.5, 2.0, 4.0, f64::INFINITY];

/// The 13 constants of the ansatz: `c₃`, `c₄⁰…c₄³`, `c₅⁰…c₅⁷`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WkbCoefficients {
    pub c3: Complex64,
    pub c4: [Complex64; 4],
    pub c5: [Complex64; 8],
}

impl WkbCoefficients {
    /// Terms of each equation of `system` written as `Σ terms = 0`, in solve order.
    fn equations(&self, ctx: &EnergyContext, system: CoefficientSystem) -> Vec<(&'static str, Vec<Complex64>)> {
        let a = ctx.alpha;
        let a2 = 2.0 * a;
        let e = ctx.script_e;
        let e3 = e.powu(3) / 3.0;
        let e4 = e.powu(4) / 4.0;
        let (c3, c4, c5) = (self.c3, self.c4, self.c5);
        let corrected = system == CoefficientSystem::Corrected;
        let mut c51 = vec![5.0 * a2 * c5[1], -e3 * c4[1]];
        let mut c56 = vec![7.0 * a2 * c5[6], -27.0 * c5[7], -e3 * c4[0]];
        let (c53_partner, c54_partner) = if corrected { (c5[2], c5[1]) } else { (c5[1], c5[2]) };
        if corrected {
            c51.push(4.0 * a * a * a * c3);
            c56.push(-e4 * c3);
        }
        vec![
            ("c3", vec![3.0 * a2 * c3, -e3]),
            ("c4_3", vec![6.0 * a2 * c4[3], -e3 * c3]),
            ("c4_0", vec![4.0 * a2 * c4[0], -9.0 * c4[3], -e4]),
            ("c4_1", vec![c4[1], a * a]),
            ("c4_2", vec![a2 * c4[2], -c4[0]]),
            ("c5_7", vec![9.0 * a2 * c5[7], -e3 * c4[3]]),
            ("c5_6", c56),
            ("c5_0", vec![5.0 * a2 * c5[0], -e.powu(5) / 5.0, -12.0 * c5[6]]),
            ("c5_1", c51),
            ("c5_2", vec![5.0 * a2 * c5[2], -2.0 * c5[6], -e3 * c4[2]]),
            ("c5_3", vec![3.0 * a2 * c5[3], -5.0 * c5[0], -6.0 * c53_partner]),
            ("c5_4", vec![a2 * c5[4], -2.0 * c54_partner, -2.0 * a2 * a2 * c3]),
            ("c5_5", vec![a2 * c5[5], -2.0 * c5[3]]),
        ]
    }

    /// Residual of each equation of the corrected system relative to its largest term.
    pub fn residuals(&self, ctx: &EnergyContext) -> Vec<(&'static str, f64)> {
        self.residuals_in(ctx, CoefficientSystem::Corrected)
    }

    pub fn residuals_in(&self, ctx: &EnergyContext, system: CoefficientSystem) -> Vec<(&'static str, f64)> {
        self.equations(ctx, system)
            .into_iter()
            .map(|(name, terms)| {
                let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.norm()));
                let sum: Complex64 = terms.iter().sum();
                (name, if scale > 0.0 { sum.norm() / scale } else { 0.0 })
            })
            .collect()
    }

    pub fn max_residual(&self, ctx: &EnergyContext) -> f64 {
        self.residuals(ctx).iter().fold(0.0, |m, (_, r)| m.max(*r))
    }

    /// `(name, value)` pairs in storage order.
    pub fn table(&self) -> Vec<(String, Complex64)> {
        let mut out = vec![("c3".to_string(), self.c3)];
        out.extend(self.c4.iter().enumerate().map(|(j, c)| (format!("c4_{j}"), *c)));
        out.extend(self.c5.iter().enumerate().map(|(j, c)| (format!("c5_{j}"), *c)));
        out
    }

    /// One line per coefficient: `name re im`.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        for (name, c) in self.table() {
            writeln!(out, "{name} {:.17e} {:.17e}", c.re, c.im)?;
        }
        Ok(())
    }
}

/// Which form of the fifth-order equations to solve.
///
/// In `Corrected`, the `s₃s₂` and `s₃s₄` equations carry the cross terms of
/// the quartic part of the potential with `c₃ s₃`, and the equations for `c₅³` (`Λs₂`) and `c₅⁴` (`s₃`) take
/// their contraction input from `c₅²` and `c₅¹` respectively, matching
/// `½Δ(s₃Λ²) = 6Λs₂` and `½Δ(s₃s₂) = 6s₃`. Only the corrected constants make
/// the fifth-order defect `O(W^{−3})`. `Uncorrected` drops the cross terms and
/// swaps the two contraction inputs. Orders up to four agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum CoefficientSystem {
    #[default]
    Corrected,
    Uncorrected,
}

/// Solves the triangular coefficient system (corrected form).
pub fn solve_coefficients(ctx: &EnergyContext) -> WkbCoefficients {
    solve_coefficients_in(ctx, CoefficientSystem::Corrected)
}

pub fn solve_coefficients_in(ctx: &EnergyContext, system: CoefficientSystem) -> WkbCoefficients {
    let a = ctx.alpha;
    let a2 = 2.0 * a;
    let e = ctx.script_e;
    let e3 = e.powu(3) / 3.0;
    let e4 = e.powu(4) / 4.0;
    let zero = Complex64::new(0.0, 0.0);
    let corrected = system == CoefficientSystem::Corrected;

    let c3 = e3 / (3.0 * a2);
    let mut c4 = [zero; 4];
    c4[3] = e3 * c3 / (6.0 * a2);
    c4[0] = (e4 + 9.0 * c4[3]) / (4.0 * a2);
    c4[1] = -a * a;
    c4[2] = c4[0] / a2;

    let mut c5 = [zero; 8];
    c5[7] = e3 * c4[3] / (9.0 * a2);
    let extra6 = if corrected { e4 * c3 } else { zero };
    c5[6] = (e3 * c4[0] + extra6 + 27.0 * c5[7]) / (7.0 * a2);
    c5[0] = (e.powu(5) / 5.0 + 12.0 * c5[6]) / (5.0 * a2);
    let extra1 = if corrected { -4.0 * a * a * a * c3 } else { zero };
    c5[1] = (e3 * c4[1] + extra1) / (5.0 * a2);
    c5[2] = (e3 * c4[2] + 2.0 * c5[6]) / (5.0 * a2);
    let (p3, p4) = if corrected { (c5[2], c5[1]) } else { (c5[1], c5[2]) };
    c5[3] = (5.0 * c5[0] + 6.0 * p3) / (3.0 * a2);
    c5[4] = (2.0 * p4 + 2.0 * a2 * a2 * c3) / a2;
    c5[5] = 2.0 * c5[3] / a2;

    WkbCoefficients { c3, c4, c5 }
}

fn check_order(m: usize) -> Result<()> {
    match m {
        0 | 3 | 4 | 5 => Ok(()),
        _ => Err(invalid("wkb", format!("ansatz order M = {m}; supported orders are 0, 3, 4, 5"))),
    }
}

/// `W·Σ_{j≤M} q^{(j)}(λ)`.
fn correction(c: &WkbCoefficients, w: f64, m: usize, l1: f64, l2: f64) -> Complex64 {
    if m < 3 {
        return Complex64::new(0.0, 0.0);
    }
    let lam = Complex64::new(l1, -l2);
    let s2 = Complex64::new(l1 * l1 + l2 * l2, 0.0);
    let s3 = Complex64::new(l1.powi(3), l2.powi(3));
    let s4 = Complex64::new(l1.powi(4) - l2.powi(4), 0.0);
    let s5 = Complex64::new(l1.powi(5), -l2.powi(5));
    let lam2 = lam * lam;
    let wi = 1.0 / w;

    let mut q = c.c3 * s3;
    if m >= 4 {
        let c4 = &c.c4;
        q += c4[0] * s4 + c4[1] * wi * s2 + c4[2] * wi * lam2 + c4[3] * w * s3 * s3;
    }
    if m >= 5 {
        let c5 = &c.c5;
        q += c5[0] * s5
            + c5[1] * s3 * s2
            + c5[2] * s3 * lam2
            + c5[3] * wi * lam * s2
            + c5[4] * wi * s3
            + c5[5] * wi * wi * lam
            + c5[6] * w * s3 * s4
            + c5[7] * w * w * s3 * s3 * s3;
    }
    w * q
}

/// `u₀^{(M)}` on `grid`.
pub fn build_ansatz(ctx: &EnergyContext, w: f64, m: usize, grid: &Grid) -> Result<ComplexField> {
    build_ansatz_with(&solve_coefficients(ctx), ctx, w, m, grid)
}

/// `u₀^{(M)}` from given constants.
pub fn build_ansatz_with(
    c: &WkbCoefficients,
    ctx: &EnergyContext,
    w: f64,
    m: usize,
    grid: &Grid,
) -> Result<ComplexField> {
    check_order(m)?;
    let aw = ctx.alpha * w;
    ComplexField::sample(grid, |l1, l2| {
        let g = (-aw * (l1 * l1 + l2 * l2)).exp();
        g * (ONE + correction(c, w, m, l1, l2))
    })
}

/// `‖v‖_p` and `‖Λ⁻¹v‖_p` for each reported exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectNorms {
    pub entries: Vec<DefectNorm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefectNorm {
    pub p: f64,
    pub v: f64,
    pub v_over_lambda: f64,
}

impl DefectNorms {
    fn of(v: &ComplexField) -> Self {
        let vl = v.lambda_divide();
        let entries = DEFECT_NORM_EXPONENTS
            .iter()
            .map(|&p| DefectNorm {
                p,
                v: v.lp_norm(p),
                v_over_lambda: vl.lp_norm(p),
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, p: f64) -> Option<DefectNorm> {
        self.entries.iter().copied().find(|e| e.p == p)
    }
}

/// `v = 𝒯u₀ − u₀` with its norms.
pub fn defect(tc: &TransferContext, u0: &ComplexField) -> Result<(ComplexField, DefectNorms)> {
    let u00 = u0.at_origin();
    if (u00 - ONE).norm() > 1e-10 {
        return Err(invalid("wkb", format!("ansatz must equal 1 at the origin, got {u00}")));
    }
    let mut v = tc.apply_tcal(u0, u00)?;
    v.axpy(-ONE, u0);
    let norms = DefectNorms::of(&v);
    Ok((v, norms))
}

/// Settings of the eigenfunction solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenOptions {
    /// Ansatz order `M`.
    pub order: usize,
    pub tol: f64,
    /// Iteration cap; `None` means `40·W`.
    pub n_max: Option<usize>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            order: 3,
            tol: 1e-10,
            n_max: None,
        }
    }
}

/// The fixed point `𝒯u = u`, `u(0) = 1`, with its peeled image `w = e^{V}u`.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    pub u: ComplexField,
    pub w: ComplexField,
    pub u0: ComplexField,
    pub u0_order: usize,
    /// `‖𝒯u − u‖₂ / ‖u‖₂` of the returned `u`.
    pub residual: f64,
    pub iterations: usize,
    /// `‖Tⁿv‖₂` for each term of the series.
    pub tail: Vec<f64>,
    pub defect_norms: DefectNorms,
}

impl Eigenfunction {
    /// Mean ratio `‖Tⁿ⁺¹v‖₂/‖Tⁿv‖₂` over the second half of the series.
    pub fn contraction(&self) -> Option<f64> {
        let n = self.tail.len();
        if n < 6 {
            return None;
        }
        let (a, b) = (n / 2, n - 1);
        Some((self.tail[b] / self.tail[a]).powf(1.0 / (b - a) as f64))
    }
}

/// Sums `u = u₀ + Σ Tⁿv` until the terms drop below `tol·‖u₀‖₂`.
pub fn solve_eigenfunction(tc: &TransferContext, opts: EigenOptions) -> Result<Eigenfunction> {
    let u0 = build_ansatz(&tc.ctx, tc.w, opts.order, &tc.grid)?;
    let (v, defect_norms) = defect(tc, &u0)?;
    let n_max = opts.n_max.unwrap_or((40.0 * tc.w).ceil() as usize);
    let threshold = opts.tol * u0.norm2();

    let mut sum = u0.clone();
    let mut term = v;
    let mut tail = Vec::new();
    let mut iterations = 0;
    loop {
        let a = term.norm2();
        tail.push(a);
        sum.add_assign(&term);
        if a < threshold {
            break;
        }
        if iterations >= n_max {
            return Err(Error::NoConvergence {
                module: "wkb",
                iterations,
                detail: format!("series term {a:.3e} above {threshold:.3e}"),
            });
        }
        term = tc.apply_t(&term)?;
        iterations += 1;
    }

    // One more application makes u = e^{−V}·w hold exactly.
    let w = tc.bare_image(&sum, ONE)?;
    let u = tc.exp_minus_v.mul(&w);
    let again = tc.apply_tcal(&u, u.at_origin())?;
    let residual = again.sub(&u).norm2() / u.norm2();

    Ok(Eigenfunction {
        u,
        w,
        u0,
        u0_order: opts.order,
        residual,
        iterations,
        tail,
        defect_norms,
    })
}

/// Relative `L²` change of `u` when the grid spacing is halved.
pub fn grid_refinement_change(e: f64, w: f64, opts: EigenOptions) -> Result<f64> {
    let ctx = EnergyContext::new(e)?;
    let coarse = Grid::for_bandwidth(w)?;
    let fine = Grid::new(w, 2.0 * crate::field::DEFAULT_POINTS_PER_SIGMA, coarse.l)?;
    let uc = solve_eigenfunction(&TransferContext::new(ctx, w, &coarse)?, opts)?.u;
    let uf = solve_eigenfunction(&TransferContext::new(ctx, w, &fine)?, opts)?.u;
    if fine.half() != 2 * coarse.half() {
        return Err(invalid("wkb", "refined grid does not nest the coarse one"));
    }
    let (nc, nf) = (coarse.n, fine.n);
    let mut diff = 0.0;
    let mut norm = 0.0;
    for i in 0..nc {
        for j in 0..nc {
            let a = uc.values()[i * nc + j];
            let b = uf.values()[(2 * i) * nf + 2 * j];
            diff += (a - b).norm_sqr();
            norm += b.norm_sqr();
        }
    }
    Ok((diff / norm).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn closed_forms_at_zero_energy() {
        let ctx = EnergyContext::new(0.0).unwrap();
        let c = solve_coefficients(&ctx);
        let s2 = 2f64.sqrt();
        assert!(close(c.c3, Complex64::new(0.0, s2 / 18.0), 1e-12), "{}", c.c3);
        assert!(close(c.c4[1], Complex64::new(-0.5, 0.0), 1e-12));
        assert!(close(c.c4[3], Complex64::new(-1.0 / 324.0, 0.0), 1e-12), "{}", c.c4[3]);
    }

    #[test]
    fn system_residuals_vanish() {
        for k in 0..20 {
            let e = -1.8 + 3.6 * k as f64 / 19.0;
            let ctx = EnergyContext::new(e).unwrap();
            let c = solve_coefficients(&ctx);
            assert!(c.max_residual(&ctx) < 1e-12, "E = {e}: {:?}", c.residuals(&ctx));
        }
    }

    #[test]
    fn uncorrected_and_corrected_systems() {
        let ctx = EnergyContext::new(1.0).unwrap();
        let p = solve_coefficients_in(&ctx, CoefficientSystem::Uncorrected);
        let c = solve_coefficients(&ctx);
        let pr = p.residuals_in(&ctx, CoefficientSystem::Uncorrected);
        assert!(pr.iter().all(|(_, r)| *r < 1e-12), "{pr:?}");
        // orders three and four do not change
        assert_eq!(p.c3, c.c3);
        assert_eq!(p.c4, c.c4);
        assert!(p.max_residual(&ctx) > 1e-3);
        assert!((p.c5[7] - c.c5[7]).norm() < 1e-15);
    }

    #[test]
    fn fifth_order_defect_beats_uncorrected_constants() {
        let tc = TransferContext::with_defaults(1.0, 16.0).unwrap();
        let pub5 = solve_coefficients_in(&tc.ctx, CoefficientSystem::Uncorrected);
        let u_pub = build_ansatz_with(&pub5, &tc.ctx, 16.0, 5, &tc.grid).unwrap();
        let u_cor = build_ansatz(&tc.ctx, 16.0, 5, &tc.grid).unwrap();
        let d_pub = defect(&tc, &u_pub).unwrap().0.norm_inf();
        let d_cor = defect(&tc, &u_cor).unwrap().0.norm_inf();
        assert!(d_cor < 0.5 * d_pub, "{d_cor} vs {d_pub}");
    }

    #[test]
    fn residual_detects_a_perturbed_coefficient() {
        let ctx = EnergyContext::new(1.0).unwrap();
        let mut c = solve_coefficients(&ctx);
        c.c5[4] += 1e-6;
        assert!(c.max_residual(&ctx) > 1e-8);
    }

    #[test]
    fn table_format() {
        let ctx = EnergyContext::new(0.5).unwrap();
        let mut buf = Vec::new();
        solve_coefficients(&ctx).write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 13);
        assert!(lines[0].starts_with("c3 "));
        assert!(lines[12].starts_with("c5_7 "));
        assert_eq!(lines[5].split_whitespace().count(), 3);
    }

    #[test]
    fn ansatz_shapes() {
        let ctx = EnergyContext::new(0.0).unwrap();
        let g = Grid::for_bandwidth(8.0).unwrap();
        for m in [0, 3, 4, 5] {
            let u = build_ansatz(&ctx, 8.0, m, &g).unwrap();
            assert!(close(u.at_origin(), ONE, 1e-15));
        }
        let u = build_ansatz(&ctx, 8.0, 0, &g).unwrap();
        let a = 8.0 / 2f64.sqrt();
        for k in (0..g.len()).step_by(997) {
            let (l1, l2) = g.lambda(k);
            let want = (-a * (l1 * l1 + l2 * l2)).exp();
            assert!((u.values()[k] - want).norm() < 1e-14);
        }
        assert!(build_ansatz(&ctx, 8.0, 2, &g).is_err());
    }

    #[test]
    fn third_order_correction_is_the_cubic_term() {
        let ctx = EnergyContext::new(1.0).unwrap();
        let g = Grid::for_bandwidth(8.0).unwrap();
        let c = solve_coefficients(&ctx);
        let d = build_ansatz(&ctx, 8.0, 3, &g)
            .unwrap()
            .sub(&build_ansatz(&ctx, 8.0, 0, &g).unwrap());
        let aw = ctx.alpha * 8.0;
        let want = ComplexField::sample(&g, |l1, l2| {
            (-aw * (l1 * l1 + l2 * l2)).exp() * 8.0 * c.c3 * Complex64::new(l1.powi(3), l2.powi(3))
        })
        .unwrap();
        assert!(d.sub(&want).norm_inf() < 1e-14);
    }

    #[test]
    fn defect_vanishes_at_origin() {
        let tc = TransferContext::with_defaults(1.0, 8.0).unwrap();
        for m in [0, 3, 5] {
            let u0 = build_ansatz(&tc.ctx, 8.0, m, &tc.grid).unwrap();
            let (v, norms) = defect(&tc, &u0).unwrap();
            assert!(v.at_origin().norm() < 1e-10);
            assert_eq!(norms.entries.len(), 4);
        }
    }

    #[test]
    fn higher_orders_shrink_the_defect() {
        let tc = TransferContext::with_defaults(1.0, 16.0).unwrap();
        let mut prev = f64::INFINITY;
        for m in [0, 3, 4, 5] {
            let u0 = build_ansatz(&tc.ctx, 16.0, m, &tc.grid).unwrap();
            let (v, _) = defect(&tc, &u0).unwrap();
            let n = v.norm_inf();
            assert!(n < prev, "M = {m}: {n} vs {prev}");
            prev = n;
        }
    }

    #[test]
    fn eigenfunction_is_a_fixed_point() {
        let tc = TransferContext::with_defaults(1.0, 8.0).unwrap();
        let eig = solve_eigenfunction(&tc, EigenOptions::default()).unwrap();
        assert!(eig.residual < 1e-8, "{}", eig.residual);
        assert!(close(eig.u.at_origin(), ONE, 1e-10));
        assert!(eig.iterations < 320);
        let back = tc.exp_minus_v.mul(&eig.w);
        assert!(back.sub(&eig.u).norm_inf() < 1e-10);
        let r = eig.contraction().unwrap();
        assert!(r < 1.0 && r > 0.5, "{r}");
    }

    #[test]
    fn solution_does_not_depend_on_the_start() {
        let tc = TransferContext::with_defaults(1.0, 8.0).unwrap();
        let a = solve_eigenfunction(&tc, EigenOptions { order: 0, ..Default::default() }).unwrap();
        let b = solve_eigenfunction(&tc, EigenOptions { order: 5, ..Default::default() }).unwrap();
        let rel = a.u.sub(&b.u).norm2() / a.u.norm2();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn divergent_budget_is_reported() {
        let tc = TransferContext::with_defaults(1.0, 8.0).unwrap();
        let err = solve_eigenfunction(&tc, EigenOptions { n_max: Some(3), ..Default::default() });
        assert!(matches!(err, Err(Error::NoConvergence { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn coefficients_solve_the_system(e in -1.95f64..1.95) {
            let ctx = EnergyContext::new(e).unwrap();
            let c = solve_coefficients(&ctx);
            prop_assert!(c.max_residual(&ctx) < 1e-12);
        }

        #[test]
        fn coefficients_reflect_with_energy(e in 0.0f64..1.9) {
            // ℰ(−E) = −conj ℰ(E), α(−E) = conj α(E): every constant maps to ±conj
            let a = solve_coefficients(&EnergyContext::new(e).unwrap());
            let b = solve_coefficients(&EnergyContext::new(-e).unwrap());
            prop_assert!((a.c4[1] - b.c4[1].conj()).norm() < 1e-12);
            prop_assert!((a.c3 + b.c3.conj()).norm() < 1e-12);
        }
    }
}
