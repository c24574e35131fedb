//! Monte Carlo density of states of the Gaussian band-matrix ensemble.
//!
//! Run: cargo run --release --example montecarlo -- [W] [N] [samples]

use banddos::energy::rho_semicircle;
use banddos::ensemble::{build_covariance, empirical_dos, CovarianceKind, Smoothing};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let w = args.first().copied().unwrap_or(8.0);
    let n = args.get(1).map_or(128, |n| *n as usize);
    let samples = args.get(2).map_or(100, |s| *s as usize);

    let energies: Vec<f64> = (-8..=8).map(|k| 0.25 * k as f64).collect();
    let cov = build_covariance(n, w, CovarianceKind::Laplacian)?;
    let st = empirical_dos(&cov, samples, 7, &energies, Smoothing::default_for(n))?;
    println!("{:>6} {:>10} {:>10} {:>10}", "E", "mean", "se", "semicircle");
    for i in 0..energies.len() {
        let e = energies[i];
        let sc = if e.abs() < 2.0 { rho_semicircle(e) } else { 0.0 };
        println!("{e:>6.2} {:>10.5} {:>10.5} {sc:>10.5}", st.mean[i], st.se[i]);
    }
    println!("eigenvalues outside [-2.5, 2.5]: {:.2e}", st.outside_fraction);
    Ok(())
}
