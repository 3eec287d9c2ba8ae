//! Monte Carlo studies: noiseless identifiability, closed-form validation, the
//! ρ tradeoff between sensing and reflection, and the SNR sweep against a
//! purely reflective RIS.
//!
//! Every random quantity is drawn from a substream addressed by
//! `(seed, purpose, group, index)`, and per-trial results are collected in
//! trial order before being reduced sequentially. Output therefore does not
//! depend on the thread count; [`Parallelism::Strict`] additionally avoids
//! the thread pool altogether.

use std::collections::HashSet;
use std::fmt;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    a_bs_from, baseline_reflective_cascaded, cascaded_from_individual, closed_mse_g, closed_mse_h, error_energy,
    lmmse_h_from, min_pilots, recover_noiseless, true_cascaded, BaselinePlan, GFilter, PriorCovariances,
};
use crate::hris_model::{make_schedule, Connectivity, HrisSchedule, RhoPolicy, ScheduleMode};
use crate::numkernel::{frob_sq, rel_err, CMatrix};
use crate::scenario::{
    draw_channels, sample_geometry, ChannelRealization, GainNormalization, LinkGains, SeededRng, StreamPurpose,
    SystemDims, SystemGeometry,
};
use crate::sounding::{assemble_a_bs, assemble_a_rc, db_to_linear, gen_pilots, observe_with, simulate, NoiseModel, ScheduleMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Prop1,
    Validate,
    Tradeoff,
    SnrSweep,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Prop1 => "prop1",
            Study::Validate => "validate",
            Study::Tradeoff => "tradeoff",
            Study::SnrSweep => "snr-sweep",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How trials are spread over threads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Parallelism {
    /// Rayon's global pool.
    #[default]
    Auto,
    /// A dedicated pool with this many threads.
    Threads(usize),
    /// Plain sequential loop on the calling thread.
    Strict,
}

impl std::str::FromStr for Parallelism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Parallelism::Auto),
            "strict" | "sequential" | "sequential-strict" => Ok(Parallelism::Strict),
            n => match n.parse::<usize>() {
                Ok(t) if t >= 1 => Ok(Parallelism::Threads(t)),
                _ => Err(Error::config(
                    "parallelism",
                    format!("expected `auto`, `strict` or a positive thread count, got `{s}`"),
                )),
            },
        }
    }
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parallelism::Auto => f.write_str("auto"),
            Parallelism::Threads(n) => write!(f, "{n}"),
            Parallelism::Strict => f.write_str("strict"),
        }
    }
}

impl Serialize for Parallelism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Parallelism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => n.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Full description of one study run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub study: Study,
    pub dims: SystemDims,
    pub geometry: SystemGeometry,
    pub gain_normalization: GainNormalization,
    /// Transmit SNR grid `Γ` in dB.
    pub snr_db: Vec<f64>,
    /// Reflection fractions ρ.
    pub rho: Vec<f64>,
    pub schedule_mode: ScheduleMode,
    pub connectivity: Connectivity,
    /// Trials per grid point (seeds, for the noiseless check).
    pub trials: usize,
    /// User drops; trials are split evenly across them.
    pub drops: usize,
    /// Independent phase configurations in the tradeoff study.
    pub phase_seeds: usize,
    /// Pilot lengths for the noiseless check; empty means
    /// `{min − 1, min, min + 8}`.
    pub taus: Vec<usize>,
    /// NMSE levels at which the SNR sweep reports a horizontal gain.
    pub reference_nmse: Vec<f64>,
    /// Add Monte Carlo NMSEs next to the closed forms in the tradeoff study.
    pub empirical_overlay: bool,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl ExperimentSpec {
    /// Defaults for a study at the reference dimensions (M = 16, N = 64, N_r = 8, K = 8).
    pub fn defaults(study: Study) -> Self {
        let base = ExperimentSpec {
            study,
            dims: SystemDims::reference(100),
            geometry: SystemGeometry::default(),
            gain_normalization: GainNormalization::default(),
            snr_db: vec![0.0, 10.0, 20.0],
            rho: vec![0.5],
            schedule_mode: ScheduleMode::default(),
            connectivity: Connectivity::default(),
            trials: 2000,
            drops: 10,
            phase_seeds: 5,
            taus: Vec::new(),
            reference_nmse: vec![1e-2],
            empirical_overlay: false,
            seed: 1,
            parallelism: Parallelism::default(),
        };
        match study {
            Study::Prop1 => ExperimentSpec {
                dims: SystemDims::reference(64),
                snr_db: Vec::new(),
                trials: 20,
                drops: 1,
                ..base
            },
            Study::Validate => base,
            Study::Tradeoff => ExperimentSpec {
                dims: SystemDims::reference(70),
                snr_db: vec![30.0],
                rho: (1..=9).map(|i| i as f64 / 10.0).collect(),
                trials: 200,
                drops: 1,
                ..base
            },
            Study::SnrSweep => ExperimentSpec {
                snr_db: (0..=15).map(|i| 2.0 * i as f64).collect(),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.geometry.validate()?;
        if self.trials == 0 {
            return Err(Error::config("trials", "need at least one trial"));
        }
        if self.drops == 0 || self.drops > self.trials {
            return Err(Error::config(
                "drops",
                format!("need 1 ≤ drops ≤ trials, got {} drops for {} trials", self.drops, self.trials),
            ));
        }
        if self.drops >= 1 << 16 {
            return Err(Error::config("drops", "at most 65535 drops are supported"));
        }
        if self.study != Study::Prop1 {
            if self.snr_db.is_empty() {
                return Err(Error::config("snr_db", "SNR grid is empty"));
            }
            if self.snr_db.iter().any(|s| !s.is_finite()) {
                return Err(Error::config("snr_db", "SNR values must be finite"));
            }
            if self.snr_db.len() > 255 {
                return Err(Error::config("snr_db", "at most 255 SNR points are supported"));
            }
        }
        if self.rho.is_empty() {
            return Err(Error::config("rho", "ρ grid is empty"));
        }
        if self.rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("rho", "ρ values must lie in [0, 1]"));
        }
        if self.dims.tau < self.dims.k {
            return Err(Error::config(
                "dims.tau",
                format!("orthogonal pilots need τ ≥ K, got τ = {} < K = {}", self.dims.tau, self.dims.k),
            ));
        }
        match self.study {
            Study::Prop1 => {
                if self.taus.iter().any(|&t| t < self.dims.k) {
                    return Err(Error::config("taus", "every pilot length must be at least K"));
                }
            }
            Study::Validate => {
                if self.dims.k * self.dims.n > 256 {
                    warn!(
                        "closed-form validation at K·N = {} is slow; small dimensions are recommended",
                        self.dims.k * self.dims.n
                    );
                }
            }
            Study::Tradeoff => {
                if self.snr_db.len() != 1 {
                    return Err(Error::config("snr_db", "the tradeoff study takes a single SNR"));
                }
                if self.phase_seeds == 0 {
                    return Err(Error::config("phase_seeds", "need at least one phase configuration"));
                }
                if self.rho.len() * self.phase_seeds >= 1 << 24 {
                    return Err(Error::config("rho", "grid too large"));
                }
            }
            Study::SnrSweep => {
                let min = BaselinePlan::min_pilots(self.dims.n, self.dims.m, self.dims.k);
                if self.dims.tau < min {
                    return Err(Error::config(
                        "dims.tau",
                        format!("the reflective baseline needs τ ≥ {min} at these dimensions"),
                    ));
                }
                if self.reference_nmse.iter().any(|r| !(*r > 0.0)) {
                    return Err(Error::config("reference_nmse", "reference levels must be positive"));
                }
                if self.rho.len() * self.snr_db.len() * self.drops >= 1 << 24 {
                    return Err(Error::config("snr_db", "grid too large"));
                }
            }
        }
        Ok(())
    }

    fn effective_taus(&self) -> Vec<usize> {
        if self.taus.is_empty() {
            let min = min_pilots(&self.dims);
            vec![min - 1, min, min + 8]
        } else {
            self.taus.clone()
        }
    }

    /// Trials assigned to `drop`: an even split with the remainder going to the
    /// first drops.
    pub fn trials_in_drop(&self, drop: usize) -> usize {
        self.trials / self.drops + usize::from(drop < self.trials % self.drops)
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub study: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Rows keyed uniquely by `(study, sweep_value, metric)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CurveTable {
    rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<CurveRow>) -> Result<Self> {
        let mut t = Self::new();
        for r in rows {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, row: CurveRow) -> Result<()> {
        if !row.mean.is_finite() || !row.stderr.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value for `{}` at {} = {}",
                row.metric, row.sweep_var, row.sweep_value
            )));
        }
        if self
            .rows
            .iter()
            .any(|r| r.study == row.study && r.sweep_value.to_bits() == row.sweep_value.to_bits() && r.metric == row.metric)
        {
            return Err(Error::invalid(format!(
                "duplicate row for `{}` at {} = {}",
                row.metric, row.sweep_var, row.sweep_value
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, metric: &str, sweep_value: f64) -> Option<&CurveRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.sweep_value.to_bits() == sweep_value.to_bits())
    }

    /// `(sweep_value, mean)` pairs for one metric, in insertion order.
    pub fn series(&self, metric: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.sweep_value, r.mean))
            .collect()
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.metric.clone()))
            .map(|r| r.metric.clone())
            .collect()
    }
}

struct RowSink<'a> {
    table: CurveTable,
    spec: &'a ExperimentSpec,
    sweep_var: &'static str,
}

impl<'a> RowSink<'a> {
    fn new(spec: &'a ExperimentSpec, sweep_var: &'static str) -> Self {
        RowSink { table: CurveTable::new(), spec, sweep_var }
    }

    fn add(&mut self, sweep_value: f64, metric: impl Into<String>, mean: f64, stderr: f64, trials: usize) -> Result<()> {
        self.table.push(CurveRow {
            study: self.spec.study.name().to_string(),
            sweep_var: self.sweep_var.to_string(),
            sweep_value,
            metric: metric.into(),
            mean,
            stderr,
            trials,
            seed: self.spec.seed,
        })
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStats {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStats {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
        } else {
            0.0
        };
        MeanStats { mean, stderr, n }
    }
}

/// Ratio of means `Σ e_i / Σ r_i` with a delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioStats {
    pub ratio: f64,
    pub stderr: f64,
    pub n: usize,
}

impl RatioStats {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let n = pairs.len();
        let num: f64 = pairs.iter().map(|p| p.0).sum();
        let den: f64 = pairs.iter().map(|p| p.1).sum();
        if n == 0 || den == 0.0 {
            return Err(Error::Numerical("ratio of means with a zero denominator".into()));
        }
        let ratio = num / den;
        let stderr = if n > 1 {
            let mean_den = den / n as f64;
            let ss: f64 = pairs.iter().map(|(e, r)| (e - ratio * r).powi(2)).sum();
            (ss / ((n - 1) * n) as f64).sqrt() / mean_den
        } else {
            0.0
        };
        Ok(RatioStats { ratio, stderr, n })
    }
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Runs `f(0..n)` under the requested parallelism and returns results in index order.
pub fn map_trials<T, F>(par: Parallelism, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match par {
        Parallelism::Strict => (0..n).map(f).collect(),
        Parallelism::Auto => (0..n).into_par_iter().map(f).collect(),
        Parallelism::Threads(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build a {t}-thread pool: {e}")))?
            .install(|| (0..n).into_par_iter().map(f).collect()),
    }
}

fn rng(spec: &ExperimentSpec, purpose: StreamPurpose, group: usize, index: usize) -> SeededRng {
    SeededRng::substream(spec.seed, purpose, group as u64, index as u64)
}

/// Geometry, gains and the ρ-free schedule phases of one user drop.
struct DropSetup {
    gains: LinkGains,
    schedule: HrisSchedule,
}

fn setup_drop(spec: &ExperimentSpec, dims: &SystemDims, group: usize, drop: usize) -> Result<DropSetup> {
    let layout = sample_geometry(dims, &spec.geometry, &mut rng(spec, StreamPurpose::Geometry, group, drop));
    let gains = LinkGains::from_drop(&layout, &spec.geometry, spec.gain_normalization)?;
    let schedule = make_schedule(
        dims,
        spec.schedule_mode,
        &RhoPolicy::Uniform(spec.rho[0]),
        spec.connectivity,
        &mut rng(spec, StreamPurpose::Schedule, group, drop),
    )?;
    Ok(DropSetup { gains, schedule })
}

fn ensure_study(spec: &ExperimentSpec, study: Study) -> Result<()> {
    if spec.study != study {
        return Err(Error::invalid(format!("spec is for `{}`, not `{}`", spec.study, study)));
    }
    spec.validate()
}

/// Noiseless recovery at `τ ∈ {min − 1, min, min + 8}` (or `spec.taus`), one
/// independent drop, channel and schedule per seed.
pub fn run_prop1_check(spec: &ExperimentSpec) -> Result<CurveTable> {
    ensure_study(spec, Study::Prop1)?;
    let mut sink = RowSink::new(spec, "tau");
    for (ti, &tau) in spec.effective_taus().iter().enumerate() {
        let dims = spec.dims.with_tau(tau);
        info!("prop1: τ = {tau}, {} seeds", spec.trials);
        let pilots = gen_pilots(dims.k, tau)?;
        let outcomes = map_trials(spec.parallelism, spec.trials, |s| {
            let setup = setup_drop(spec, &dims, 0, s)?;
            let schedule = make_schedule(
                &dims,
                spec.schedule_mode,
                &RhoPolicy::Uniform(spec.rho[0]),
                spec.connectivity,
                &mut rng(spec, StreamPurpose::Schedule, 1 + ti, s),
            )?;
            let ch = draw_channels(&dims, &setup.gains, &mut rng(spec, StreamPurpose::Channels, 0, s))?;
            let rec = simulate(&schedule, &pilots, &ch, &NoiseModel::noiseless(), &mut rng(spec, StreamPurpose::Noise, 0, s))?;
            let out = recover_noiseless(&rec, &dims)?;
            Ok((
                out.identifiable,
                rel_err(out.g_hat.as_ref(), ch.g.as_ref()),
                rel_err(out.h_hat.as_ref(), ch.h.as_ref()),
                out.rank_rc,
                out.rank_bs,
            ))
        })?;
        let n = outcomes.len();
        let x = tau as f64;
        let rate = outcomes.iter().filter(|o| o.0).count() as f64 / n as f64;
        sink.add(x, "identifiable_rate", rate, (rate * (1.0 - rate) / n as f64).sqrt(), n)?;
        for (name, vals) in [
            ("g", outcomes.iter().map(|o| o.1).collect::<Vec<_>>()),
            ("h", outcomes.iter().map(|o| o.2).collect::<Vec<_>>()),
        ] {
            // Asymptotic standard error of a sample median under normality.
            let se = 1.2533 * MeanStats::from_samples(&vals).stderr;
            let max = vals.iter().cloned().fold(0.0, f64::max);
            sink.add(x, format!("median_rel_err_{name}"), median(vals), se, n)?;
            sink.add(x, format!("max_rel_err_{name}"), max, 0.0, n)?;
        }
        let rc: Vec<f64> = outcomes.iter().map(|o| o.3 as f64).collect();
        let bs: Vec<f64> = outcomes.iter().map(|o| o.4 as f64).collect();
        sink.add(x, "min_rank_rc", rc.iter().cloned().fold(f64::INFINITY, f64::min), 0.0, n)?;
        sink.add(x, "max_rank_rc", rc.iter().cloned().fold(0.0, f64::max), 0.0, n)?;
        sink.add(x, "min_rank_bs", bs.iter().cloned().fold(f64::INFINITY, f64::min), 0.0, n)?;
        sink.add(x, "max_rank_bs", bs.iter().cloned().fold(0.0, f64::max), 0.0, n)?;
        sink.add(x, "rank_target_rc", (dims.k * dims.n) as f64, 0.0, n)?;
    }
    Ok(sink.table)
}

/// Empirical LMMSE error against the closed forms over the SNR grid.
///
/// `E_G` depends only on the drop's schedule, `E_H` (true-G mode) also on the
/// drawn `G`, so both are averaged over the same trials as the empirical errors.
pub fn run_closed_form_validation(spec: &ExperimentSpec) -> Result<CurveTable> {
    ensure_study(spec, Study::Validate)?;
    let dims = spec.dims;
    let rho = RhoPolicy::Uniform(spec.rho[0]);
    let pilots = gen_pilots(dims.k, dims.tau)?;
    let drops: Vec<(DropSetup, ScheduleMatrices, CMatrix, CMatrix)> = (0..spec.drops)
        .map(|d| {
            let setup = setup_drop(spec, &dims, 0, d)?;
            let schedule = setup.schedule.with_rho(&rho)?;
            let a_rc = assemble_a_rc(&schedule, &pilots)?;
            let gram = a_rc.adjoint() * &a_rc;
            Ok((setup, ScheduleMatrices::new(&schedule), a_rc, gram))
        })
        .collect::<Result<_>>()?;

    let mut sink = RowSink::new(spec, "snr_db");
    for (si, &snr_db) in spec.snr_db.iter().enumerate() {
        let snr = db_to_linear(snr_db);
        let noise = NoiseModel::from_snr_db(snr_db);
        info!("validate: Γ = {snr_db} dB, {} trials", spec.trials);
        let mut samples: Vec<[f64; 6]> = Vec::with_capacity(spec.trials);
        for (d, (setup, mats, a_rc, gram)) in drops.iter().enumerate() {
            let priors = PriorCovariances::new(setup.gains.gamma.clone(), setup.gains.beta, snr)?;
            let filter = GFilter::from_gram(a_rc, gram, &priors)?;
            let e_g = closed_mse_g(a_rc, &priors)?.mse;
            let group = d + spec.drops * si;
            let out = map_trials(spec.parallelism, spec.trials_in_drop(d), |t| {
                let ch = draw_channels(&dims, &setup.gains, &mut rng(spec, StreamPurpose::Channels, d, t))?;
                let obs = observe_with(mats, &pilots, &ch, &noise, &mut rng(spec, StreamPurpose::Noise, group, t))?;
                let g_hat = filter.estimate(&obs.y_rc, &noise)?;
                let a_bs = a_bs_from(mats, &pilots, &ch.g)?;
                let y = bs_matrix(&obs.y_bs, dims.m, noise.pt);
                let h_hat = lmmse_h_from(&y, &a_bs, ch.beta, snr)?;
                let e_h = closed_mse_h(&a_bs, dims.m, &priors)?.mse;
                Ok([
                    error_energy(g_hat.as_ref(), ch.g.as_ref())?,
                    e_g,
                    error_energy(h_hat.as_ref(), ch.h.as_ref())?,
                    e_h,
                    frob_sq(ch.g.as_ref()),
                    priors.trace_r_g(dims.n),
                ])
            })?;
            samples.extend(out);
        }
        let n = samples.len();
        let col = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<_>>();
        let pair = |a: usize, b: usize| samples.iter().map(|s| (s[a], s[b])).collect::<Vec<_>>();
        let emp_g = MeanStats::from_samples(&col(0));
        let cf_g = MeanStats::from_samples(&col(1));
        let emp_h = MeanStats::from_samples(&col(2));
        let cf_h = MeanStats::from_samples(&col(3));
        let ratio_g = RatioStats::from_pairs(&pair(0, 1))?;
        let ratio_h = RatioStats::from_pairs(&pair(2, 3))?;
        let nmse_g = RatioStats::from_pairs(&pair(0, 4))?;
        let norm_g = RatioStats::from_pairs(&pair(1, 5))?;
        sink.add(snr_db, "mse_g_empirical", emp_g.mean, emp_g.stderr, n)?;
        sink.add(snr_db, "mse_g_closed", cf_g.mean, cf_g.stderr, n)?;
        sink.add(snr_db, "mse_g_ratio", ratio_g.ratio, ratio_g.stderr, n)?;
        sink.add(snr_db, "mse_h_empirical", emp_h.mean, emp_h.stderr, n)?;
        sink.add(snr_db, "mse_h_closed", cf_h.mean, cf_h.stderr, n)?;
        sink.add(snr_db, "mse_h_ratio", ratio_h.ratio, ratio_h.stderr, n)?;
        sink.add(snr_db, "nmse_g_empirical", nmse_g.ratio, nmse_g.stderr, n)?;
        sink.add(snr_db, "nmse_g_closed", norm_g.ratio, norm_g.stderr, n)?;
    }
    Ok(sink.table)
}

/// BS samples reshaped to `M × τ` and divided by `√P_t`.
fn bs_matrix(y_bs: &crate::numkernel::CVector, m: usize, pt: f64) -> CMatrix {
    let amp = pt.sqrt();
    CMatrix::from_fn(m, y_bs.nrows() / m, |i, t| y_bs[t * m + i] / amp)
}

/// Closed-form normalized `E_G` and `E_H` across the ρ grid, one curve per phase
/// configuration. Each configuration fixes one drop, one set of phases and one
/// channel draw; only ρ varies along a curve.
pub fn run_tradeoff(spec: &ExperimentSpec) -> Result<CurveTable> {
    ensure_study(spec, Study::Tradeoff)?;
    let dims = spec.dims;
    let snr_db = spec.snr_db[0];
    let snr = db_to_linear(snr_db);
    let noise = NoiseModel::from_snr_db(snr_db);
    let pilots = gen_pilots(dims.k, dims.tau)?;
    let mut sink = RowSink::new(spec, "rho");
    let configs = map_trials(spec.parallelism, spec.phase_seeds, |p| {
        let setup = setup_drop(spec, &dims, 0, p)?;
        let ch = draw_channels(&dims, &setup.gains, &mut rng(spec, StreamPurpose::Channels, 0, p))?;
        let priors = PriorCovariances::for_channels(&ch, snr)?;
        spec.rho
            .iter()
            .map(|&rho| {
                let schedule = setup.schedule.with_rho(&RhoPolicy::Uniform(rho))?;
                let a_rc = assemble_a_rc(&schedule, &pilots)?;
                let a_bs = assemble_a_bs(&schedule, &pilots, &ch.g)?;
                Ok((
                    closed_mse_g(&a_rc, &priors)?.normalized,
                    closed_mse_h(&a_bs, dims.m, &priors)?.normalized,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (p, curve) in configs.iter().enumerate() {
        info!("tradeoff: phase configuration {p} done");
        for (&rho, &(e_g, e_h)) in spec.rho.iter().zip(curve) {
            sink.add(rho, format!("e_g_norm_phase{p}"), e_g, 0.0, 1)?;
            sink.add(rho, format!("e_h_norm_phase{p}"), e_h, 0.0, 1)?;
        }
    }
    if spec.empirical_overlay {
        for p in 0..spec.phase_seeds {
            let setup = setup_drop(spec, &dims, 0, p)?;
            for (ri, &rho) in spec.rho.iter().enumerate() {
                let schedule = setup.schedule.with_rho(&RhoPolicy::Uniform(rho))?;
                let mats = ScheduleMatrices::new(&schedule);
                let a_rc = assemble_a_rc(&schedule, &pilots)?;
                let priors = PriorCovariances::new(setup.gains.gamma.clone(), setup.gains.beta, snr)?;
                let filter = GFilter::new(&a_rc, &priors, Default::default())?;
                let group = 1 + p * spec.rho.len() + ri;
                let out = map_trials(spec.parallelism, spec.trials, |t| {
                    let ch = draw_channels(&dims, &setup.gains, &mut rng(spec, StreamPurpose::Channels, group, t))?;
                    let obs = observe_with(&mats, &pilots, &ch, &noise, &mut rng(spec, StreamPurpose::Noise, group, t))?;
                    let g_hat = filter.estimate(&obs.y_rc, &noise)?;
                    let a_bs = a_bs_from(&mats, &pilots, &ch.g)?;
                    let h_hat = lmmse_h_from(&bs_matrix(&obs.y_bs, dims.m, noise.pt), &a_bs, ch.beta, snr)?;
                    Ok((
                        (error_energy(g_hat.as_ref(), ch.g.as_ref())?, priors.trace_r_g(dims.n)),
                        (error_energy(h_hat.as_ref(), ch.h.as_ref())?, priors.trace_r_h(dims.m, dims.n)),
                    ))
                })?;
                let g = RatioStats::from_pairs(&out.iter().map(|o| o.0).collect::<Vec<_>>())?;
                let h = RatioStats::from_pairs(&out.iter().map(|o| o.1).collect::<Vec<_>>())?;
                sink.add(rho, format!("e_g_norm_empirical_phase{p}"), g.ratio, g.stderr, out.len())?;
                sink.add(rho, format!("e_h_norm_empirical_phase{p}"), h.ratio, h.stderr, out.len())?;
            }
        }
    }
    Ok(sink.table)
}

/// Where an NMSE curve crosses a reference level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// Interpolated inside the grid.
    Within(f64),
    /// Already below the level at the first grid point; the crossing is at or
    /// before `bound`, with an extrapolated estimate when the trend allows one.
    BeforeGrid { bound: f64, estimate: Option<f64> },
    /// Still above the level at the last grid point; the crossing is beyond
    /// `bound`, with an extrapolated estimate when the trend allows one.
    AfterGrid { bound: f64, estimate: Option<f64> },
}

impl Crossing {
    pub fn estimate(&self) -> Option<f64> {
        match *self {
            Crossing::Within(x) => Some(x),
            Crossing::BeforeGrid { estimate, .. } | Crossing::AfterGrid { estimate, .. } => estimate,
        }
    }

    pub fn is_censored(&self) -> bool {
        !matches!(self, Crossing::Within(_))
    }
}

/// Least-squares line through `(x, log10 y)`; returns `(intercept, slope)`.
fn loglin_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 || pts.iter().any(|p| !(p.1 > 0.0)) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.log10()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1.log10() - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// SNR (dB) at which a decreasing NMSE curve reaches `level`, interpolating
/// `log10(NMSE)` linearly in dB between grid points. Outside the grid, the
/// last (or first) three points are extrapolated with a least-squares line.
pub fn snr_at_level(snr_db: &[f64], nmse: &[f64], level: f64) -> Result<Crossing> {
    if snr_db.len() != nmse.len() || snr_db.len() < 2 {
        return Err(Error::invalid("need at least two matching grid points"));
    }
    if snr_db.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("SNR grid must be strictly increasing"));
    }
    if nmse.iter().any(|v| !(*v > 0.0)) || !(level > 0.0) {
        return Err(Error::invalid("NMSE values and level must be positive"));
    }
    let extrapolate = |pts: &[(f64, f64)]| {
        loglin_fit(pts)
            .filter(|&(_, slope)| slope < 0.0)
            .map(|(b, slope)| (level.log10() - b) / slope)
    };
    let pts: Vec<(f64, f64)> = snr_db.iter().cloned().zip(nmse.iter().cloned()).collect();
    if nmse[0] <= level {
        return Ok(Crossing::BeforeGrid {
            bound: snr_db[0],
            estimate: extrapolate(&pts[..pts.len().min(3)]).map(|x| x.min(snr_db[0])),
        });
    }
    for i in 0..pts.len() - 1 {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[i + 1];
        if y0 > level && y1 <= level {
            let (l0, l1) = (y0.log10(), y1.log10());
            return Ok(Crossing::Within(x0 + (level.log10() - l0) / (l1 - l0) * (x1 - x0)));
        }
    }
    let last = *snr_db.last().expect("non-empty grid");
    Ok(Crossing::AfterGrid {
        bound: last,
        estimate: extrapolate(&pts[pts.len().saturating_sub(3)..]).map(|x| x.max(last)),
    })
}

/// Horizontal SNR gain of curve `a` over curve `b` at one NMSE level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizontalGain {
    /// Guaranteed lower bound on `x_b − x_a` given the grid (equal to the
    /// interpolated gain when neither crossing is censored).
    pub lower_bound: f64,
    /// Point estimate using extrapolated crossings where needed.
    pub estimate: Option<f64>,
    pub censored: bool,
}

/// `None` when curve `a` never reaches the level, so no lower bound exists.
pub fn horizontal_gain(a: Crossing, b: Crossing) -> Option<HorizontalGain> {
    let a_upper = match a {
        Crossing::Within(x) => x,
        Crossing::BeforeGrid { bound, .. } => bound,
        Crossing::AfterGrid { .. } => return None,
    };
    let b_lower = match b {
        Crossing::Within(x) => x,
        Crossing::BeforeGrid { estimate, .. } => estimate?,
        Crossing::AfterGrid { bound, .. } => bound,
    };
    let lower_bound = b_lower - a_upper;
    let estimate = match (a.estimate(), b.estimate()) {
        (Some(xa), Some(xb)) => Some(xb - xa),
        _ => None,
    };
    Some(HorizontalGain {
        lower_bound,
        estimate,
        censored: a.is_censored() || b.is_censored(),
    })
}

/// Metric name of the HRIS cascaded-NMSE curve at reflection fraction `rho`.
pub fn hris_metric(rho: f64) -> String {
    format!("nmse_cascaded_hris_rho{rho}")
}

pub const BASELINE_METRIC: &str = "nmse_cascaded_baseline";

/// Ensemble cascaded-channel NMSE of the HRIS pipeline (LMMSE `G` at the HRIS,
/// LMMSE `H` at the BS from `Ĝ`, then `Ĥ diag(ĝ_k)`) and of the reflective
/// baseline over the SNR grid, followed by horizontal gains at the reference
/// NMSE levels. Drops, channels and schedules are shared by all SNR points and
/// both arms.
pub fn run_snr_sweep(spec: &ExperimentSpec) -> Result<CurveTable> {
    ensure_study(spec, Study::SnrSweep)?;
    let dims = spec.dims;
    let pilots = gen_pilots(dims.k, dims.tau)?;

    struct Arm {
        mats: ScheduleMatrices,
        a_rc: CMatrix,
        gram: CMatrix,
    }
    let drops: Vec<(DropSetup, Vec<Arm>)> = (0..spec.drops)
        .map(|d| {
            let setup = setup_drop(spec, &dims, 0, d)?;
            let arms = spec
                .rho
                .iter()
                .map(|&rho| {
                    let schedule = setup.schedule.with_rho(&RhoPolicy::Uniform(rho))?;
                    let a_rc = assemble_a_rc(&schedule, &pilots)?;
                    let gram = a_rc.adjoint() * &a_rc;
                    Ok(Arm { mats: ScheduleMatrices::new(&schedule), a_rc, gram })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((setup, arms))
        })
        .collect::<Result<_>>()?;

    let n_rho = spec.rho.len();
    let mut sink = RowSink::new(spec, "snr_db");
    let mut curves: Vec<Vec<f64>> = vec![Vec::new(); n_rho + 1];
    for (si, &snr_db) in spec.snr_db.iter().enumerate() {
        let snr = db_to_linear(snr_db);
        let noise = NoiseModel::from_snr_db(snr_db);
        info!("snr-sweep: Γ = {snr_db} dB, {} trials", spec.trials);
        // Per trial: (cascaded error per HRIS arm..., baseline error, reference energy).
        let mut samples: Vec<Vec<f64>> = Vec::with_capacity(spec.trials);
        let mut flagged = 0usize;
        for (d, (setup, arms)) in drops.iter().enumerate() {
            let priors = PriorCovariances::new(setup.gains.gamma.clone(), setup.gains.beta, snr)?;
            let filters = arms
                .iter()
                .map(|a| GFilter::from_gram(&a.a_rc, &a.gram, &priors))
                .collect::<Result<Vec<_>>>()?;
            let out = map_trials(spec.parallelism, spec.trials_in_drop(d), |t| {
                let ch = draw_channels(&dims, &setup.gains, &mut rng(spec, StreamPurpose::Channels, d, t))?;
                let truth = true_cascaded(&ch);
                let reference: f64 = truth.iter().map(|c| frob_sq(c.as_ref())).sum();
                let mut row = Vec::with_capacity(n_rho + 2);
                for (ri, (arm, filter)) in arms.iter().zip(&filters).enumerate() {
                    let group = d + spec.drops * (si + spec.snr_db.len() * ri);
                    let c_hat = hris_cascaded(&arm.mats, filter, &pilots, &ch, &noise, snr, &mut rng(spec, StreamPurpose::Noise, group, t))?;
                    row.push(cascaded_error(&c_hat, &truth)?);
                }
                let group = d + spec.drops * si;
                let base = baseline_reflective_cascaded(&ch, &pilots, dims.tau, &mut rng(spec, StreamPurpose::Baseline, group, t), &noise)?;
                row.push(cascaded_error(&base.c_hat, &truth)?);
                row.push(reference);
                Ok((row, !base.flagged.is_empty()))
            })?;
            for (row, f) in out {
                flagged += usize::from(f);
                samples.push(row);
            }
        }
        if flagged > 0 {
            warn!("snr-sweep: Γ = {snr_db} dB, {flagged} baseline trials needed diagonal loading");
        }
        let n = samples.len();
        for (ri, &rho) in spec.rho.iter().enumerate() {
            let s = RatioStats::from_pairs(&samples.iter().map(|r| (r[ri], r[n_rho + 1])).collect::<Vec<_>>())?;
            sink.add(snr_db, hris_metric(rho), s.ratio, s.stderr, n)?;
            curves[ri].push(s.ratio);
        }
        let s = RatioStats::from_pairs(&samples.iter().map(|r| (r[n_rho], r[n_rho + 1])).collect::<Vec<_>>())?;
        sink.add(snr_db, BASELINE_METRIC, s.ratio, s.stderr, n)?;
        sink.add(snr_db, "baseline_loaded_fraction", flagged as f64 / n as f64, 0.0, n)?;
        curves[n_rho].push(s.ratio);
    }

    if spec.snr_db.len() >= 2 {
        let mut gains = RowSink { table: CurveTable::new(), spec, sweep_var: "nmse_ref" };
        for &level in &spec.reference_nmse {
            let base = snr_at_level(&spec.snr_db, &curves[n_rho], level)?;
            if let Some(x) = base.estimate() {
                gains.add(level, "crossing_db_baseline", x, 0.0, spec.trials)?;
            }
            for (ri, &rho) in spec.rho.iter().enumerate() {
                let hris = snr_at_level(&spec.snr_db, &curves[ri], level)?;
                if let Some(x) = hris.estimate() {
                    gains.add(level, format!("crossing_db_hris_rho{rho}"), x, 0.0, spec.trials)?;
                }
                match horizontal_gain(hris, base) {
                    Some(g) => {
                        gains.add(level, format!("gain_db_lower_bound_rho{rho}"), g.lower_bound, 0.0, spec.trials)?;
                        if let Some(e) = g.estimate {
                            gains.add(level, format!("gain_db_estimate_rho{rho}"), e, 0.0, spec.trials)?;
                        }
                        gains.add(level, format!("gain_censored_rho{rho}"), f64::from(u8::from(g.censored)), 0.0, spec.trials)?;
                    }
                    None => warn!("snr-sweep: HRIS at ρ = {rho} never reaches NMSE {level} on this grid"),
                }
            }
        }
        for row in gains.table.rows {
            sink.table.push(row)?;
        }
    }
    Ok(sink.table)
}

fn hris_cascaded(
    mats: &ScheduleMatrices,
    filter: &GFilter,
    pilots: &crate::sounding::PilotBook,
    ch: &ChannelRealization,
    noise: &NoiseModel,
    snr: f64,
    rng: &mut SeededRng,
) -> Result<Vec<CMatrix>> {
    let obs = observe_with(mats, pilots, ch, noise, rng)?;
    let g_hat = filter.estimate(&obs.y_rc, noise)?;
    let a_bs = a_bs_from(mats, pilots, &g_hat)?;
    let h_hat = lmmse_h_from(&bs_matrix(&obs.y_bs, ch.h.nrows(), noise.pt), &a_bs, ch.beta, snr)?;
    cascaded_from_individual(&h_hat, &g_hat)
}

fn cascaded_error(est: &[CMatrix], truth: &[CMatrix]) -> Result<f64> {
    est.iter()
        .zip(truth)
        .map(|(e, t)| error_energy(e.as_ref(), t.as_ref()))
        .sum()
}

/// Dispatches on `spec.study`.
pub fn run(spec: &ExperimentSpec) -> Result<CurveTable> {
    match spec.study {
        Study::Prop1 => run_prop1_check(spec),
        Study::Validate => run_closed_form_validation(spec),
        Study::Tradeoff => run_tradeoff(spec),
        Study::SnrSweep => run_snr_sweep(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(metric: &str, x: f64) -> CurveRow {
        CurveRow {
            study: "validate".into(),
            sweep_var: "snr_db".into(),
            sweep_value: x,
            metric: metric.into(),
            mean: 1.0,
            stderr: 0.0,
            trials: 1,
            seed: 0,
        }
    }

    #[test]
    fn table_rejects_duplicates_and_non_finite() {
        let mut t = CurveTable::new();
        t.push(row("a", 0.0)).unwrap();
        t.push(row("a", 1.0)).unwrap();
        t.push(row("b", 0.0)).unwrap();
        assert!(t.push(row("a", 0.0)).is_err());
        assert!(t.push(CurveRow { mean: f64::NAN, ..row("c", 0.0) }).is_err());
        assert_eq!(t.series("a"), vec![(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(t.metrics(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn mean_and_ratio_stats() {
        let m = MeanStats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStats::from_samples(&[7.0]).stderr, 0.0);

        let r = RatioStats::from_pairs(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]).unwrap();
        assert_eq!(r.ratio, 0.5);
        assert!(r.stderr < 1e-15);
        assert!(RatioStats::from_pairs(&[(1.0, 0.0)]).is_err());
        assert!(RatioStats::from_pairs(&[]).is_err());
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn parallelism_parsing() {
        assert_eq!("auto".parse::<Parallelism>().unwrap(), Parallelism::Auto);
        assert_eq!("strict".parse::<Parallelism>().unwrap(), Parallelism::Strict);
        assert_eq!("4".parse::<Parallelism>().unwrap(), Parallelism::Threads(4));
        assert!("0".parse::<Parallelism>().is_err());
        assert!("many".parse::<Parallelism>().is_err());
    }

    #[test]
    fn map_trials_keeps_order() {
        for par in [Parallelism::Strict, Parallelism::Auto, Parallelism::Threads(3)] {
            let v = map_trials(par, 50, |i| Ok(i * i)).unwrap();
            assert_eq!(v, (0..50).map(|i| i * i).collect::<Vec<_>>());
        }
        let err = map_trials(Parallelism::Strict, 5, |i| if i == 3 { Err(Error::Numerical("x".into())) } else { Ok(i) });
        assert!(err.is_err());
    }

    #[test]
    fn trial_split_covers_all() {
        let mut spec = ExperimentSpec::defaults(Study::Validate);
        spec.trials = 23;
        spec.drops = 5;
        let split: Vec<usize> = (0..5).map(|d| spec.trials_in_drop(d)).collect();
        assert_eq!(split, vec![5, 5, 5, 4, 4]);
    }

    #[test]
    fn crossing_interpolation_is_exact_for_loglinear_curves() {
        let snr: Vec<f64> = (0..=10).map(|i| 3.0 * i as f64).collect();
        let curve: Vec<f64> = snr.iter().map(|s| 10f64.powf(-s / 10.0)).collect();
        match snr_at_level(&snr, &curve, 1e-2).unwrap() {
            Crossing::Within(x) => assert!((x - 20.0).abs() < 1e-12),
            c => panic!("{c:?}"),
        }
        // Beyond the grid: bound at the last point, estimate by extrapolation.
        let short = &snr[..5];
        match snr_at_level(short, &curve[..5], 1e-2).unwrap() {
            Crossing::AfterGrid { bound, estimate } => {
                assert_eq!(bound, 12.0);
                assert!((estimate.unwrap() - 20.0).abs() < 1e-9);
            }
            c => panic!("{c:?}"),
        }
        match snr_at_level(&snr[7..], &curve[7..], 1e-2).unwrap() {
            Crossing::BeforeGrid { bound, estimate } => {
                assert_eq!(bound, 21.0);
                assert!((estimate.unwrap() - 20.0).abs() < 1e-9);
            }
            c => panic!("{c:?}"),
        }
        // A flat curve cannot be extrapolated.
        let flat = vec![1.0; 4];
        assert_eq!(
            snr_at_level(&snr[..4], &flat, 1e-2).unwrap(),
            Crossing::AfterGrid { bound: 9.0, estimate: None }
        );
        assert!(snr_at_level(&[1.0, 0.0], &[1.0, 0.1], 0.5).is_err());
        assert!(snr_at_level(&[0.0, 1.0], &[1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn gain_bounds() {
        let g = horizontal_gain(Crossing::Within(7.0), Crossing::Within(25.0)).unwrap();
        assert_eq!((g.lower_bound, g.estimate, g.censored), (18.0, Some(18.0), false));
        let g = horizontal_gain(Crossing::Within(7.0), Crossing::AfterGrid { bound: 30.0, estimate: Some(40.0) }).unwrap();
        assert_eq!((g.lower_bound, g.estimate, g.censored), (23.0, Some(33.0), true));
        let g = horizontal_gain(Crossing::BeforeGrid { bound: 0.0, estimate: None }, Crossing::Within(12.0)).unwrap();
        assert_eq!((g.lower_bound, g.estimate, g.censored), (12.0, None, true));
        assert!(horizontal_gain(Crossing::AfterGrid { bound: 30.0, estimate: None }, Crossing::Within(1.0)).is_none());
    }

    #[test]
    fn spec_validation() {
        for study in [Study::Prop1, Study::Validate, Study::Tradeoff, Study::SnrSweep] {
            ExperimentSpec::defaults(study).validate().unwrap();
        }
        let base = ExperimentSpec::defaults(Study::SnrSweep);
        let bad = [
            ExperimentSpec { trials: 0, ..base.clone() },
            ExperimentSpec { drops: 0, ..base.clone() },
            ExperimentSpec { trials: 3, drops: 4, ..base.clone() },
            ExperimentSpec { rho: vec![1.5], ..base.clone() },
            ExperimentSpec { rho: vec![], ..base.clone() },
            ExperimentSpec { snr_db: vec![], ..base.clone() },
            ExperimentSpec { snr_db: vec![f64::NAN], ..base.clone() },
            ExperimentSpec { dims: SystemDims::reference(91), ..base.clone() },
            ExperimentSpec { reference_nmse: vec![0.0], ..base.clone() },
            ExperimentSpec { study: Study::Tradeoff, snr_db: vec![10.0, 20.0], ..base.clone() },
            ExperimentSpec { study: Study::Tradeoff, phase_seeds: 0, ..base.clone() },
            ExperimentSpec { study: Study::Prop1, taus: vec![4], ..base.clone() },
        ];
        for spec in bad {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }

    #[test]
    fn wrong_study_rejected() {
        assert!(run_tradeoff(&ExperimentSpec::defaults(Study::Validate)).is_err());
    }
}
