//! Transfer-operator ρ_N and ⟨G_{yy′}G_{y′y}⟩ against Monte Carlo.
//!
//! Run: cargo run --release --example compare -- [W] [N] [samples]

use banddos::cli::{compare_green_pair, CommandKind, RunConfig};
use banddos::ensemble::{build_covariance, empirical_dos, CovarianceKind, Smoothing};
use banddos::observables::{build_defect_cache, CacheOptions, FiniteChain};
use banddos::transfer::TransferContext;
use banddos::wkb::{solve_eigenfunction, EigenOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let w = args.first().copied().unwrap_or(8.0);
    let n = args.get(1).map_or(256, |n| *n as usize);
    let samples = args.get(2).map_or(200, |s| *s as usize);

    let energies = [0.0, 0.5, 1.0, 1.5];
    let cov = build_covariance(n, w, CovarianceKind::Laplacian)?;
    let st = empirical_dos(&cov, samples, 7, &energies, Smoothing::default_for(n))?;
    let budget = st.smoothing_bias_budget();
    println!("smoothing bias budget {budget:.2e}");
    for (i, &e) in energies.iter().enumerate() {
        let tc = TransferContext::with_defaults(e, w)?;
        let eig = solve_eigenfunction(&tc, EigenOptions::default())?;
        let cache = build_defect_cache(&tc, &eig, CacheOptions::default())?;
        let r = FiniteChain::new(&tc, &eig, &cache, n)?.rho_finite()?;
        let z = (r.rho_n - st.mean[i]) / st.se[i];
        println!("E = {e:.1}: transfer {:.5}  MC {:.5} ± {:.5}  z = {z:+.2}", r.rho_n, st.mean[i], st.se[i]);
    }

    let mut cfg = RunConfig::defaults(CommandKind::Compare);
    cfg.n = n;
    cfg.samples = samples;
    for c in compare_green_pair(&cfg, 1.0, w, &[0, w as usize, 2 * w as usize])? {
        println!(
            "d = {:>2}: transfer {:.4}  MC {:.4} (±{:.3}, ±{:.3})  pass {}",
            c.d, c.transfer, c.mc.mean, c.mc.se_re, c.mc.se_im, c.pass
        );
    }
    Ok(())
}
