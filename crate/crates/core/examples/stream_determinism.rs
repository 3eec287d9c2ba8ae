//! Same seed, different thread counts: the studies reduce per-trial results in
//! trial order, so the tables match bit for bit.
//!
//! cargo run --release --example stream_determinism

use hris::cli::{render, OutputFormat};
use hris::experiments::{run_closed_form_validation, ExperimentSpec, Parallelism, Study};
use hris::scenario::SystemDims;

fn main() -> hris::Result<()> {
    let mut spec = ExperimentSpec::defaults(Study::Validate);
    spec.dims = SystemDims::new(4, 8, 2, 2, 16)?;
    spec.trials = 400;
    spec.drops = 4;
    let mut outputs = Vec::new();
    for par in [Parallelism::Strict, Parallelism::Threads(2), Parallelism::Auto] {
        spec.parallelism = par;
        let text = render(&run_closed_form_validation(&spec)?, OutputFormat::Csv)?;
        println!("{par:>6}: {} bytes", text.len());
        outputs.push(text);
    }
    println!("identical: {}", outputs.windows(2).all(|w| w[0] == w[1]));
    Ok(())
}
