//! How the WKB defect `v = 𝒯u₀ − u₀` shrinks with W for each ansatz order.
//!
//! Run: cargo run --release --example defect_scaling -- [E] [W_max]

use banddos::observables::linear_fit;
use banddos::transfer::TransferContext;
use banddos::wkb::{build_ansatz, defect};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let e = args.first().copied().unwrap_or(1.0);
    let w_max = args.get(1).copied().unwrap_or(32.0);
    let ws: Vec<f64> = [8.0, 16.0, 32.0, 64.0].into_iter().filter(|w| *w <= w_max).collect();
    let orders = [0, 3, 4, 5];
    let mut table = vec![Vec::new(); orders.len()];
    for &w in &ws {
        let tc = TransferContext::with_defaults(e, w)?;
        for (k, &m) in orders.iter().enumerate() {
            let u0 = build_ansatz(&tc.ctx, w, m, &tc.grid)?;
            let (v, _) = defect(&tc, &u0)?;
            table[k].push(v.norm_inf());
        }
    }
    for (k, &m) in orders.iter().enumerate() {
        let pts: Vec<(f64, f64)> = ws.iter().zip(&table[k]).map(|(w, v)| (w.ln(), v.ln())).collect();
        let cells: Vec<String> = table[k].iter().map(|v| format!("{v:.3e}")).collect();
        println!("M = {m}: {}  slope {:.2}", cells.join(" "), linear_fit(&pts).0);
    }
    Ok(())
}
