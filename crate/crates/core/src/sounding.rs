//! Uplink pilot sounding: pilot book, stacked measurement operators, and noisy
//! observations at the HRIS receive chains and at the BS.

use faer::{c64, Col, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hris_model::HrisSchedule;
use crate::numkernel::{cis, CMatrix, CVector};
use crate::scenario::{ChannelRealization, SeededRng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotFamily {
    /// Rows of the τ-point DFT matrix.
    #[default]
    Dft,
}

/// `K × τ` matrix of unit-modulus pilots `s_k(n)` with `S Sᴴ = τ I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    pub s: CMatrix,
}

impl PilotBook {
    pub fn k(&self) -> usize {
        self.s.nrows()
    }

    pub fn tau(&self) -> usize {
        self.s.ncols()
    }

    /// Pilot vector `s(n)` across users.
    pub fn at(&self, n: usize) -> CVector {
        self.s.col(n).to_owned()
    }
}

/// `s_k(n) = exp(−j 2π k n / τ)` for zero-based `k`, `n`.
pub fn gen_pilots(k: usize, tau: usize) -> Result<PilotBook> {
    gen_pilots_with(PilotFamily::Dft, k, tau)
}

pub fn gen_pilots_with(family: PilotFamily, k: usize, tau: usize) -> Result<PilotBook> {
    if tau < k {
        return Err(Error::invalid(format!(
            "{k} orthogonal pilots need at least {k} instances, got tau = {tau}"
        )));
    }
    let s = match family {
        PilotFamily::Dft => Mat::from_fn(k, tau, |kk, n| {
            // Reduce the product mod τ before scaling to keep the phase exact.
            let idx = (kk * n) % tau;
            cis(-std::f64::consts::TAU * idx as f64 / tau as f64)
        }),
    };
    Ok(PilotBook { s })
}

/// Transmit power and receiver noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-user pilot power `P_t`.
    pub pt: f64,
    /// Noise variance at the HRIS receive chains.
    pub sigma2_r: f64,
    /// Noise variance at the BS antennas.
    pub sigma2_b: f64,
}

impl NoiseModel {
    pub fn new(pt: f64, sigma2: f64) -> Result<Self> {
        if !(pt > 0.0) || !(sigma2 >= 0.0) {
            return Err(Error::invalid(format!("need P_t > 0 and sigma^2 >= 0, got {pt}, {sigma2}")));
        }
        Ok(NoiseModel { pt, sigma2_r: sigma2, sigma2_b: sigma2 })
    }

    /// Unit transmit power with noise set so that `Γ = P_t/σ²` equals `snr_db`.
    pub fn from_snr_db(snr_db: f64) -> Self {
        NoiseModel {
            pt: 1.0,
            sigma2_r: db_to_linear(-snr_db),
            sigma2_b: db_to_linear(-snr_db),
        }
    }

    pub fn noiseless() -> Self {
        NoiseModel { pt: 1.0, sigma2_r: 0.0, sigma2_b: 0.0 }
    }

    /// `Γ = P_t / σ²` at the HRIS.
    pub fn snr_ris(&self) -> f64 {
        self.pt / self.sigma2_r
    }

    /// `Γ = P_t / σ²` at the BS.
    pub fn snr_bs(&self) -> f64 {
        self.pt / self.sigma2_b
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `[A_RC]_{n·N_r + r, k·N + i} = [Φ(n)]_{r,i} · s_k(n)` (zero-based indices).
pub fn assemble_a_rc(schedule: &HrisSchedule, pilots: &PilotBook) -> Result<CMatrix> {
    check_lengths(schedule, pilots)?;
    let (n, n_r, k) = (schedule.n(), schedule.n_r(), pilots.k());
    let mut a = Mat::zeros(schedule.len() * n_r, k * n);
    for (t, phi) in schedule.phi().iter().enumerate() {
        for kk in 0..k {
            let s = pilots.s[(kk, t)];
            for i in 0..n {
                for r in 0..n_r {
                    a[(t * n_r + r, kk * n + i)] = phi[(r, i)] * s;
                }
            }
        }
    }
    Ok(a)
}

/// `[A_BS]_{n,i} = [Ψ(n)]_{ii} · Σ_k [g_k]_i s_k(n)`.
pub fn assemble_a_bs(schedule: &HrisSchedule, pilots: &PilotBook, g: &CMatrix) -> Result<CMatrix> {
    check_lengths(schedule, pilots)?;
    if g.nrows() != schedule.n() || g.ncols() != pilots.k() {
        return Err(Error::invalid(format!(
            "G must be {}x{}, got {}x{}",
            schedule.n(),
            pilots.k(),
            g.nrows(),
            g.ncols()
        )));
    }
    // Column n of G·S is the impinging vector r(n).
    let r = g * &pilots.s;
    let psi = schedule.psi_rows();
    Ok(Mat::from_fn(schedule.len(), schedule.n(), |t, i| psi[(t, i)] * r[(i, t)]))
}

fn check_lengths(schedule: &HrisSchedule, pilots: &PilotBook) -> Result<()> {
    if schedule.len() != pilots.tau() {
        return Err(Error::invalid(format!(
            "schedule has {} instances but pilots span {}",
            schedule.len(),
            pilots.tau()
        )));
    }
    Ok(())
}

/// Stacked observations only, without the measurement operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    /// `τ·N_r` samples at the HRIS chains, instance-major.
    pub y_rc: CVector,
    /// `τ·M` samples at the BS, instance-major.
    pub y_bs: CVector,
    /// Columns are the impinging vectors `r(n) = G s(n)`.
    pub r: CMatrix,
}

/// Full output of one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingRecord {
    pub y_rc: CVector,
    pub y_bs: CVector,
    pub a_rc: CMatrix,
    pub a_bs: CMatrix,
    pub r: CMatrix,
    pub noise: NoiseModel,
    pub m: usize,
}

impl SoundingRecord {
    pub fn tau(&self) -> usize {
        self.a_bs.nrows()
    }

    /// BS observations reshaped to `M × τ`, i.e. `H A_BSᵀ` plus noise.
    pub fn y_bs_matrix(&self) -> CMatrix {
        let m = self.m;
        Mat::from_fn(m, self.tau(), |i, t| self.y_bs[t * m + i])
    }
}

/// Per-instance Φ(n) and Ψ(n) diagonals, evaluated once per schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMatrices {
    pub phi: Vec<CMatrix>,
    /// Row `n` holds the diagonal of Ψ(n).
    pub psi_rows: CMatrix,
}

impl ScheduleMatrices {
    pub fn new(schedule: &HrisSchedule) -> Self {
        ScheduleMatrices {
            phi: schedule.phi(),
            psi_rows: schedule.psi_rows(),
        }
    }

    pub fn tau(&self) -> usize {
        self.phi.len()
    }
}

/// Instance-by-instance forward model:
/// `y_RC(n) = √P_t Φ(n) r(n) + z_r(n)` and `y_BS(n) = √P_t H Ψ(n) r(n) + z_b(n)`.
///
/// All HRIS noise samples are drawn before the BS noise samples.
pub fn observe(
    schedule: &HrisSchedule,
    pilots: &PilotBook,
    channels: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut SeededRng,
) -> Result<Observations> {
    observe_with(&ScheduleMatrices::new(schedule), pilots, channels, noise, rng)
}

pub fn observe_with(
    ops: &ScheduleMatrices,
    pilots: &PilotBook,
    channels: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut SeededRng,
) -> Result<Observations> {
    let tau = ops.tau();
    if tau != pilots.tau() {
        return Err(Error::invalid(format!(
            "schedule has {tau} instances but pilots span {}",
            pilots.tau()
        )));
    }
    let n = ops.psi_rows.ncols();
    let n_r = ops.phi[0].nrows();
    let m = channels.h.nrows();
    if channels.g.nrows() != n || channels.g.ncols() != pilots.k() || channels.h.ncols() != n {
        return Err(Error::invalid("channel dimensions do not match schedule and pilots"));
    }
    let amp = noise.pt.sqrt();
    let r = &channels.g * &pilots.s;

    let mut y_rc = Col::<c64>::zeros(tau * n_r);
    let mut y_bs = Col::<c64>::zeros(tau * m);
    let mut reflected = Col::<c64>::zeros(n);
    for t in 0..tau {
        for l in 0..n {
            reflected[l] = ops.psi_rows[(t, l)] * r[(l, t)];
        }
        let sensed = &ops.phi[t] * r.col(t);
        for rr in 0..n_r {
            y_rc[t * n_r + rr] = sensed[rr] * amp;
        }
        let bs = &channels.h * &reflected;
        for i in 0..m {
            y_bs[t * m + i] = bs[i] * amp;
        }
    }
    for i in 0..y_rc.nrows() {
        y_rc[i] += rng.complex_normal(noise.sigma2_r);
    }
    for i in 0..y_bs.nrows() {
        y_bs[i] += rng.complex_normal(noise.sigma2_b);
    }
    Ok(Observations { y_rc, y_bs, r })
}

/// [`observe`] plus the stacked operators `A_RC` and `A_BS` (built from the true `G`).
pub fn simulate(
    schedule: &HrisSchedule,
    pilots: &PilotBook,
    channels: &ChannelRealization,
    noise: &NoiseModel,
    rng: &mut SeededRng,
) -> Result<SoundingRecord> {
    let obs = observe(schedule, pilots, channels, noise, rng)?;
    Ok(SoundingRecord {
        a_rc: assemble_a_rc(schedule, pilots)?,
        a_bs: assemble_a_bs(schedule, pilots, &channels.g)?,
        y_rc: obs.y_rc,
        y_bs: obs.y_bs,
        r: obs.r,
        noise: *noise,
        m: channels.h.nrows(),
    })
}
