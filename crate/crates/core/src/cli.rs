//! Run configuration and result files for the `hris-sim` front end.
//!
//! Configuration is layered: study defaults, then a TOML file, then flags.
//! Unknown keys are rejected with the offending key path.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{self, CurveRow, CurveTable, ExperimentSpec, Parallelism, Study};
use crate::hris_model::{Connectivity, ScheduleMode};
use crate::scenario::{GainNormalization, SystemGeometry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::config("format", format!("expected `csv` or `json`, got `{s}`"))),
        }
    }
}

/// Partial dimensions as they may appear in a file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsFile {
    m: Option<usize>,
    n: Option<usize>,
    n_r: Option<usize>,
    k: Option<usize>,
    tau: Option<usize>,
}

/// Every key accepted in a configuration file; all optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    study: Option<Study>,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
    seed: Option<u64>,
    trials: Option<usize>,
    drops: Option<usize>,
    parallelism: Option<Parallelism>,
    dims: Option<DimsFile>,
    geometry: Option<SystemGeometry>,
    gain_normalization: Option<GainNormalization>,
    snr_db: Option<Vec<f64>>,
    rho: Option<Vec<f64>>,
    schedule_mode: Option<ScheduleMode>,
    connectivity: Option<Connectivity>,
    phase_seeds: Option<usize>,
    taus: Option<Vec<usize>>,
    reference_nmse: Option<Vec<f64>>,
    empirical_overlay: Option<bool>,
}

/// Values given on the command line; these win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub drops: Option<usize>,
    pub tau: Option<usize>,
    pub parallelism: Option<Parallelism>,
    pub no_timestamp: bool,
}

/// Fully merged and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    #[serde(skip)]
    pub no_timestamp: bool,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

impl RunConfig {
    pub fn defaults(study: Study) -> Self {
        RunConfig {
            out: None,
            format: OutputFormat::default(),
            no_timestamp: false,
            spec: ExperimentSpec::defaults(study),
        }
    }

    /// The merged configuration as TOML, loadable again with [`parse_config_str`].
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Merges a TOML document and flags over the study defaults.
pub fn parse_config_str(study: Study, text: &str, flags: &Overrides) -> Result<RunConfig> {
    let de = toml::Deserializer::new(text);
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "<root>".to_string() } else { path };
        Error::config(key, e.into_inner().message().trim().to_string())
    })?;
    merge(study, file, flags)
}

/// Reads an optional configuration file and merges flags over it.
pub fn parse_config(study: Study, path: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            parse_config_str(study, &text, flags)
        }
        None => merge(study, ConfigFile::default(), flags),
    }
}

fn merge(study: Study, file: ConfigFile, flags: &Overrides) -> Result<RunConfig> {
    if let Some(s) = file.study {
        if s != study {
            return Err(Error::config("study", format!("file is for `{s}` but `{study}` was requested")));
        }
    }
    let mut cfg = RunConfig::defaults(study);
    let spec = &mut cfg.spec;
    if let Some(d) = file.dims {
        spec.dims.m = d.m.unwrap_or(spec.dims.m);
        spec.dims.n = d.n.unwrap_or(spec.dims.n);
        spec.dims.n_r = d.n_r.unwrap_or(spec.dims.n_r);
        spec.dims.k = d.k.unwrap_or(spec.dims.k);
        spec.dims.tau = d.tau.unwrap_or(spec.dims.tau);
    }
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = file.$field { spec.$field = v; } )* };
    }
    take!(seed, trials, drops, parallelism, geometry, gain_normalization, snr_db, rho, schedule_mode, connectivity, phase_seeds, taus, reference_nmse, empirical_overlay);
    cfg.out = file.out;
    cfg.format = file.format.unwrap_or_default();

    let spec = &mut cfg.spec;
    if let Some(v) = flags.seed {
        spec.seed = v;
    }
    if let Some(v) = flags.trials {
        spec.trials = v;
        // A flag that shrinks the trial count below the drop count keeps
        // one trial per drop rather than failing.
        if flags.drops.is_none() && spec.drops > v {
            spec.drops = v.max(1);
        }
    }
    if let Some(v) = flags.drops {
        spec.drops = v;
    }
    if let Some(v) = flags.tau {
        spec.dims.tau = v;
    }
    if let Some(v) = flags.parallelism {
        spec.parallelism = v;
    }
    if flags.out.is_some() {
        cfg.out = flags.out.clone();
    }
    if let Some(v) = flags.format {
        cfg.format = v;
    }
    cfg.no_timestamp = flags.no_timestamp;
    cfg.spec.validate()?;
    Ok(cfg)
}

/// Table in the requested format.
pub fn render(table: &CurveTable, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if table.is_empty() {
                w.write_record(CSV_HEADER)
                    .map_err(|e| Error::Serialization(e.to_string()))?;
            }
            for row in table.rows() {
                w.serialize(row).map_err(|e| Error::Serialization(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
        }
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(table.rows()).map_err(|e| Error::Serialization(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
    }
}

pub const CSV_HEADER: [&str; 8] = ["study", "sweep_var", "sweep_value", "metric", "mean", "stderr", "trials", "seed"];

/// Parses a CSV or JSON table written by [`render`].
pub fn parse_table(text: &str, format: OutputFormat) -> Result<CurveTable> {
    let rows: Vec<CurveRow> = match format {
        OutputFormat::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Serialization(e.to_string()))?,
        OutputFormat::Json => serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?,
    };
    CurveTable::from_rows(rows)
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    artifact: &'static str,
    version: &'static str,
    study: Study,
    rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
    config: &'a RunConfig,
}

/// Path of the metadata file written next to `out`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Writes the table to `cfg.out` plus a metadata sidecar, or the table alone
/// to `stdout` when no output path is configured.
pub fn emit(table: &CurveTable, cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let body = render(table, cfg.format)?;
    let Some(out) = &cfg.out else {
        stdout.write_all(body.as_bytes())?;
        return Ok(());
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, body)?;
    let meta = Metadata {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        study: cfg.spec.study,
        rows: table.len(),
        timestamp_unix: (!cfg.no_timestamp)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)),
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    fs::write(sidecar_path(out), text)?;
    Ok(())
}

/// Runs the configured study and emits its table.
pub fn execute(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<CurveTable> {
    let table = experiments::run(&cfg.spec)?;
    emit(&table, cfg, stdout)?;
    Ok(table)
}
