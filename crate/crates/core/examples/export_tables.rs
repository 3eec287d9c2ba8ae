//! Loads a TOML configuration, runs the study it names, and writes the table as
//! CSV and JSON with metadata sidecars.
//!
//! cargo run --release --example export_tables [out-dir]

use std::path::PathBuf;

use hris::cli::{execute, parse_config_str, OutputFormat, Overrides};
use hris::experiments::Study;

const CONFIG: &str = r#"
study = "tradeoff"
seed = 11
phase_seeds = 2
rho = [0.2, 0.5, 0.8]

[dims]
tau = 70
"#;

fn main() -> hris::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    for (format, ext) in [(OutputFormat::Csv, "csv"), (OutputFormat::Json, "json")] {
        let flags = Overrides {
            out: Some(dir.join(format!("tradeoff.{ext}"))),
            format: Some(format),
            no_timestamp: true,
            ..Default::default()
        };
        let cfg = parse_config_str(Study::Tradeoff, CONFIG, &flags)?;
        let table = execute(&cfg, &mut std::io::stdout())?;
        println!("wrote {} rows to {}", table.len(), cfg.out.as_ref().unwrap().display());
    }
    Ok(())
}
