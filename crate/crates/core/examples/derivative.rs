//! Energy derivatives of ρ_N from insertion chains, checked by finite differences.
//!
//! Run: cargo run --release --example derivative -- [E] [W] [N]

use banddos::observables::{build_defect_cache, CacheOptions, FiniteChain};
use banddos::transfer::TransferContext;
use banddos::wkb::{solve_eigenfunction, EigenOptions};

fn at(e: f64, w: f64, n: usize, orders: &[usize]) -> Result<(f64, Vec<f64>), banddos::error::Error> {
    let tc = TransferContext::with_defaults(e, w)?;
    let eig = solve_eigenfunction(&tc, EigenOptions::default())?;
    let cache = build_defect_cache(&tc, &eig, CacheOptions::default())?;
    let chain = FiniteChain::new(&tc, &eig, &cache, n)?;
    let d = orders.iter().map(|&k| chain.trace_derivative(k)).collect::<Result<_, _>>()?;
    Ok((chain.rho_finite()?.rho_n, d))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let e = args.first().copied().unwrap_or(1.0);
    let w = args.get(1).copied().unwrap_or(8.0);
    let n = args.get(2).map_or(40, |n| *n as usize);
    let h = 1e-3;

    let (_, d) = at(e, w, n, &[1, 2, 3])?;
    let (rp, dp) = at(e + h, w, n, &[1, 2])?;
    let (rm, dm) = at(e - h, w, n, &[1, 2])?;
    println!("d rho_N/dE     = {:+.8e}   finite difference {:+.8e}", d[0], (rp - rm) / (2.0 * h));
    println!("d^2 rho_N/dE^2 = {:+.8e}   finite difference {:+.8e}", d[1], (dp[0] - dm[0]) / (2.0 * h));
    println!("d^3 rho_N/dE^3 = {:+.8e}   finite difference {:+.8e}", d[2], (dp[1] - dm[1]) / (2.0 * h));
    Ok(())
}
