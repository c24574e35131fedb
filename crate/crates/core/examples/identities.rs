//! Exact-identity check of the discretized transfer operator.
//!
//! Run: cargo run --example identities -- [E] [W]

use banddos::energy::EnergyContext;
use banddos::field::Grid;
use banddos::transfer::TransferContext;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let e = args.first().copied().unwrap_or(1.0);
    let w = args.get(1).copied().unwrap_or(8.0);
    let ctx = EnergyContext::new(e)?;
    for pps in [3.0, 6.0] {
        let grid = Grid::new(w, pps, 4.0)?;
        let tc = TransferContext::new(ctx, w, &grid)?;
        let report = tc.verify_exact_identities()?;
        println!("E = {e}, W = {w}, h = 1/{}", 1.0 / grid.h);
        for (name, err) in &report.errors {
            println!("  {name:<16} {err:.3e}");
        }
    }
    Ok(())
}
