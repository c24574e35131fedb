//! Top eigenfunction of 𝒯 from the WKB ansatz and its defect series.
//!
//! Run: cargo run --release --example eigenfunction -- [E] [W]

use banddos::transfer::TransferContext;
use banddos::wkb::{solve_coefficients, solve_eigenfunction, EigenOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let e = args.first().copied().unwrap_or(1.0);
    let w = args.get(1).copied().unwrap_or(8.0);
    let tc = TransferContext::with_defaults(e, w)?;

    let coeffs = solve_coefficients(&tc.ctx);
    println!("WKB coefficients (max system residual {:.1e}):", coeffs.max_residual(&tc.ctx));
    coeffs.write_table(std::io::stdout())?;

    for order in [0, 3, 5] {
        let eig = solve_eigenfunction(&tc, EigenOptions { order, ..Default::default() })?;
        let v = eig.defect_norms.get(f64::INFINITY).map_or(f64::NAN, |d| d.v);
        println!(
            "M = {order}: |v|_inf = {v:.3e}, {} terms, contraction {:.4}, residual {:.1e}, u(0) = {:.12}",
            eig.iterations,
            eig.contraction().unwrap_or(f64::NAN),
            eig.residual,
            eig.u.at_origin()
        );
    }
    Ok(())
}
