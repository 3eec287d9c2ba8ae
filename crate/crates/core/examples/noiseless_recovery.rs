//! Noiseless recovery of G and H at the reference dimensions (M = 16, N = 64, N_r = 8, K = 8), one pilot short of
//! the bound, at the bound, and above it.
//!
//! cargo run --release --example noiseless_recovery [seeds]

use hris::experiments::{run_prop1_check, ExperimentSpec, Study};

fn main() -> hris::Result<()> {
    let mut spec = ExperimentSpec::defaults(Study::Prop1);
    if let Some(seeds) = std::env::args().nth(1) {
        spec.trials = seeds.parse().expect("seed count");
    }
    let table = run_prop1_check(&spec)?;
    println!("{:>5} {:>8} {:>10} {:>10} {:>8}", "tau", "ident", "max err G", "max err H", "rank_rc");
    for (tau, rate) in table.series("identifiable_rate") {
        let get = |m: &str| table.get(m, tau).map(|r| r.mean).unwrap_or(f64::NAN);
        println!(
            "{tau:>5} {rate:>8.2} {:>10.2e} {:>10.2e} {:>4}/{}",
            get("max_rel_err_g"),
            get("max_rel_err_h"),
            get("max_rank_rc"),
            get("rank_target_rc")
        );
    }
    Ok(())
}
