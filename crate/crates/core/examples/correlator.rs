//! Decay of `⟨G_{yy′}G_{y′y}⟩` with the distance `|y − y′|`.
//!
//! Run: cargo run --release --example correlator -- [E] [W] [N]

use banddos::observables::{build_defect_cache, linear_fit, CacheOptions, FiniteChain};
use banddos::transfer::TransferContext;
use banddos::wkb::{solve_eigenfunction, EigenOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let e = args.first().copied().unwrap_or(1.0);
    let w = args.get(1).copied().unwrap_or(8.0);
    let n = args.get(2).map_or(128, |n| *n as usize);

    let tc = TransferContext::with_defaults(e, w)?;
    let eig = solve_eigenfunction(&tc, EigenOptions::default())?;
    let cache = build_defect_cache(&tc, &eig, CacheOptions::default())?;
    let chain = FiniteChain::new(&tc, &eig, &cache, n)?;
    let y = n / 2;
    let step = (w as usize / 2).max(1);
    let mut pts = Vec::new();
    for d in (0..=(4 * w as usize).min(n - y)).step_by(step) {
        let g = chain.green_pair(y, y + d)?;
        println!("d = {d:>3}: {:+.6e} {:+.6e}i  |.| = {:.3e}", g.re, g.im, g.norm());
        if d as f64 >= w {
            pts.push((d as f64, g.norm().ln()));
        }
    }
    println!("decay rate per site {:.4} (x W = {:.3})", -linear_fit(&pts).0, -linear_fit(&pts).0 * w);
    Ok(())
}
