use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hris::cli::{parse_config, Overrides, OutputFormat};
use hris::experiments::{Parallelism, Study};

/// HRIS uplink channel-estimation studies.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    study: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Noiseless identifiability around the minimum pilot length.
    Prop1,
    /// Empirical LMMSE error against the closed forms.
    Validate,
    /// Closed-form error tradeoff across the reflection fraction ρ.
    Tradeoff,
    /// Cascaded-channel NMSE versus SNR, HRIS against a reflective RIS.
    SnrSweep,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output table; a `<out>.meta.json` sidecar is written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    drops: Option<usize>,
    /// Pilot length τ.
    #[arg(long, global = true)]
    tau: Option<usize>,
    /// `auto`, a thread count, or `strict` for a sequential run.
    #[arg(long, global = true)]
    parallelism: Option<String>,
    /// Print the merged configuration and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,
    /// Leave the timestamp out of the metadata sidecar.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

fn run(cli: Cli) -> hris::Result<()> {
    let study = match cli.study {
        Command::Prop1 => Study::Prop1,
        Command::Validate => Study::Validate,
        Command::Tradeoff => Study::Tradeoff,
        Command::SnrSweep => Study::SnrSweep,
    };
    let c = cli.common;
    let flags = Overrides {
        out: c.out,
        format: c.format.as_deref().map(str::parse::<OutputFormat>).transpose()?,
        seed: c.seed,
        trials: c.trials,
        drops: c.drops,
        tau: c.tau,
        parallelism: c.parallelism.as_deref().map(str::parse::<Parallelism>).transpose()?,
        no_timestamp: c.no_timestamp,
    };
    let cfg = parse_config(study, c.config.as_deref(), &flags)?;
    if c.print_effective_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    hris::cli::execute(&cfg, &mut std::io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
