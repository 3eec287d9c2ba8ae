//! Normalized closed-form errors of G (at the HRIS) and H (at the BS) as the
//! reflected fraction ρ grows, one curve per random phase configuration.
//!
//! cargo run --release --example rho_tradeoff

use hris::experiments::{run_tradeoff, ExperimentSpec, Study};

fn main() -> hris::Result<()> {
    let spec = ExperimentSpec::defaults(Study::Tradeoff);
    let table = run_tradeoff(&spec)?;
    for p in 0..spec.phase_seeds {
        println!("phase configuration {p}");
        println!("  {:>4} {:>12} {:>12}", "rho", "E_G/Tr(R_g)", "E_H/Tr(R_h)");
        let e_h = table.series(&format!("e_h_norm_phase{p}"));
        for ((rho, g), (_, h)) in table.series(&format!("e_g_norm_phase{p}")).into_iter().zip(e_h) {
            println!("  {rho:>4} {g:>12.4e} {h:>12.4e}");
        }
    }
    Ok(())
}
