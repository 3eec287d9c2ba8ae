//! Cascaded-channel NMSE versus transmit SNR for the HRIS pipeline and for a
//! purely reflective RIS, plus the horizontal SNR gain at NMSE = 1e-2.
//!
//! cargo run --release --example snr_sweep [trials]

use hris::experiments::{hris_metric, run_snr_sweep, ExperimentSpec, Study, BASELINE_METRIC};

fn main() -> hris::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut spec = ExperimentSpec::defaults(Study::SnrSweep);
    spec.trials = std::env::args().nth(1).map(|t| t.parse().expect("trial count")).unwrap_or(200);
    spec.drops = spec.drops.min(spec.trials);
    let table = run_snr_sweep(&spec)?;
    let hris = hris_metric(spec.rho[0]);
    println!("{:>6} {:>12} {:>12}", "SNR", "HRIS", "reflective");
    for (snr, h) in table.series(&hris) {
        let b = table.get(BASELINE_METRIC, snr).map(|r| r.mean).unwrap_or(f64::NAN);
        println!("{snr:>6} {h:>12.4e} {b:>12.4e}");
    }
    for row in table.rows().iter().filter(|r| r.sweep_var == "nmse_ref") {
        println!("{} at NMSE {}: {:.2}", row.metric, row.sweep_value, row.mean);
    }
    Ok(())
}
