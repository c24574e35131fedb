//! Density of states: semicircle, infinite volume and a finite chain.
//!
//! Run: cargo run --release --example dos -- [E] [W] [N]

use banddos::observables::{build_defect_cache, CacheOptions, FiniteChain};
use banddos::transfer::TransferContext;
use banddos::wkb::{solve_eigenfunction, EigenOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let e = args.first().copied().unwrap_or(1.0);
    let w = args.get(1).copied().unwrap_or(8.0);
    let n = args.get(2).map_or(256, |n| *n as usize);

    let tc = TransferContext::with_defaults(e, w)?;
    let eig = solve_eigenfunction(&tc, EigenOptions::default())?;
    let cache = build_defect_cache(&tc, &eig, CacheOptions::default())?;
    let r = FiniteChain::new(&tc, &eig, &cache, n)?.rho_finite()?;
    println!("E = {e}, W = {w}, N = {n}");
    println!("rho_sc  = {:.10}", r.rho_sc);
    println!("rho     = {:.10}  (rho - rho_sc)*W^2 = {:.5}", r.rho_inf, (r.rho_inf - r.rho_sc) * w * w);
    println!("rho_N   = {:.10}  (rho_N - rho)*N = {:.5}", r.rho_n, (r.rho_n - r.rho_inf) * n as f64);
    println!("defect sequence: j_max = {}, decay per step {:.5}", r.j_max, cache.measured_rate);
    println!("local density at the edge and in the bulk:");
    for y in [1, 2, n / 4, n / 2] {
        println!("  y = {y:>4}: {:.8}", -(tc.ctx.script_e + r.site_profile[y - 1]).im / std::f64::consts::PI);
    }
    Ok(())
}
