//! Spectral gap of `K = e^{−V/2} δ* e^{−V/2}` as W grows.
//!
//! Run: cargo run --release --example gap_scan -- [E]

use banddos::observables::linear_fit;
use banddos::transfer::TransferContext;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let e: f64 = std::env::args().nth(1).map_or(Ok(1.0), |a| a.parse())?;
    let mut pts = Vec::new();
    println!("{:>4} {:>12} {:>10} {:>14}", "W", "sigma2", "gap*W", "(1-|K|inf)W^2");
    for w in [8.0, 16.0, 32.0] {
        let r = TransferContext::with_defaults(e, w)?.kernel_norms(2000, 1e-10)?;
        println!("{w:>4} {:>12.9} {:>10.5} {:>14.5}", r.sigma2, r.gap * w, (1.0 - r.norm_inf) * w * w);
        pts.push((w.ln(), r.gap.ln()));
    }
    println!("slope of log gap vs log W: {:.3}", linear_fit(&pts).0);
    Ok(())
}
