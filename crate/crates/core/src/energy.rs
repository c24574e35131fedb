//! Energy-dependent constants of the saddle-point reduction.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// All scalars that depend only on the energy `E`.
///
/// Computed once; downstream modules read these fields instead of
/// recomputing, so every stage sees bit-identical constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyContext {
    pub e: f64,
    /// Saddle point `ℰ = E/2 − i√(1−E²/4)`.
    pub script_e: Complex64,
    /// `ℰ̄`, the complex conjugate of `ℰ`.
    pub script_e_bar: Complex64,
    /// Principal `√((1−ℰ²)/4)`; `Re α > 0` on the whole band.
    pub alpha: Complex64,
    pub rho_sc: f64,
}

impl EnergyContext {
    pub fn new(e: f64) -> Result<Self> {
        if !(e.abs() < 2.0) {
            return Err(Error::Domain(e));
        }
        let s = (1.0 - e * e / 4.0).sqrt();
        let script_e = Complex64::new(e / 2.0, -s);
        let alpha = ((Complex64::new(1.0, 0.0) - script_e * script_e) / 4.0).sqrt();
        // Re((1-ℰ²)/4) = (2 - E²/2)/4 > 0, so the principal root already has Re α > 0.
        debug_assert!(alpha.re > 0.0);
        Ok(Self {
            e,
            script_e,
            script_e_bar: script_e.conj(),
            alpha,
            rho_sc: rho_semicircle(e),
        })
    }

    /// `μ = W/(W+2α)` for this energy.
    pub fn mu(&self, w: f64) -> Complex64 {
        mu_of(w, self.alpha)
    }
}

/// Shorthand for [`EnergyContext::new`].
pub fn make_energy_context(e: f64) -> Result<EnergyContext> {
    EnergyContext::new(e)
}

/// `μ = W/(W+2α)`: the eigenvalue ratio of the Gaussian ansatz under 𝒯.
pub fn mu_of(w: f64, alpha: Complex64) -> Complex64 {
    Complex64::new(w, 0.0) / (w + 2.0 * alpha)
}

/// Semicircle density `√(4−E²)/(2π)` on `[−2, 2]`, zero outside.
pub fn rho_semicircle(e: f64) -> f64 {
    if e.abs() >= 2.0 {
        0.0
    } else {
        (4.0 - e * e).sqrt() / (2.0 * std::f64::consts::PI)
    }
}
