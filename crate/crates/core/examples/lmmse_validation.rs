//! Empirical LMMSE error of G and H against the closed-form traces on a small
//! configuration.
//!
//! cargo run --release --example lmmse_validation [trials]

use hris::experiments::{run_closed_form_validation, ExperimentSpec, Study};
use hris::scenario::SystemDims;

fn main() -> hris::Result<()> {
    let mut spec = ExperimentSpec::defaults(Study::Validate);
    spec.dims = SystemDims::new(4, 8, 2, 2, 16)?;
    spec.trials = std::env::args().nth(1).map(|t| t.parse().expect("trial count")).unwrap_or(2000);
    let table = run_closed_form_validation(&spec)?;
    println!("{:>6} {:>12} {:>12} {:>8} {:>12} {:>12} {:>8}", "SNR", "emp E_G", "E_G", "ratio", "emp E_H", "E_H", "ratio");
    for (snr, emp_g) in table.series("mse_g_empirical") {
        let get = |m: &str| table.get(m, snr).map(|r| r.mean).unwrap_or(f64::NAN);
        println!(
            "{snr:>6} {emp_g:>12.4e} {:>12.4e} {:>8.4} {:>12.4e} {:>12.4e} {:>8.4}",
            get("mse_g_closed"),
            get("mse_g_ratio"),
            get("mse_h_empirical"),
            get("mse_h_closed"),
            get("mse_h_ratio")
        );
    }
    Ok(())
}
