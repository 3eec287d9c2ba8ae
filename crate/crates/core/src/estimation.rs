//! Channel estimators and their error expressions.
//!
//! * noiseless recovery of `G` and `H` by minimum-norm least squares, with the
//!   pilot-count bound `τ ≥ N·max(1, K/N_r)`;
//! * LMMSE estimation of `G` at the HRIS and of `H` at the BS, with closed-form
//!   MSE `Tr((R⁻¹ + Γ AᴴA)⁻¹)`;
//! * cascaded-channel reconstruction `C_k = H diag(g_k)`;
//! * a purely reflective RIS baseline that estimates only the cascaded channels.
//!
//! Observations are normalized by `√P_t` before estimation, so the effective
//! noise variance is `1/Γ` with `Γ = P_t/σ²`.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{c64, Col, Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::numkernel::{
    blkdiag, cis, frob_sq, kron, lstsq_minnorm, lstsq_minnorm_multi, real_diag, trace, unvec, CMatrix, CVector,
};
use crate::scenario::{ChannelRealization, SeededRng, SystemDims};
use crate::sounding::{NoiseModel, PilotBook, ScheduleMatrices, SoundingRecord};

/// Gaussian priors on the channels and the pilot SNR `Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCovariances {
    /// Per-user variances `γ_k`; `R_g = blkdiag(γ_1 I_N, …, γ_K I_N)`.
    pub gamma: Vec<f64>,
    /// HRIS–BS variance `β`; `R_h = β I_{MN}`.
    pub beta: f64,
    /// `Γ = P_t / σ²`.
    pub snr: f64,
}

impl PriorCovariances {
    pub fn new(gamma: Vec<f64>, beta: f64, snr: f64) -> Result<Self> {
        if gamma.is_empty() || gamma.iter().any(|g| !(*g > 0.0)) || !(beta > 0.0) {
            return Err(Error::invalid("prior variances must be positive"));
        }
        if !(snr >= 0.0) || !snr.is_finite() {
            return Err(Error::invalid(format!("SNR must be finite and non-negative, got {snr}")));
        }
        Ok(PriorCovariances { gamma, beta, snr })
    }

    pub fn for_channels(ch: &ChannelRealization, snr: f64) -> Result<Self> {
        Self::new(ch.gamma.clone(), ch.beta, snr)
    }

    /// Diagonal of `R_g` in `vec(G)` order.
    pub fn r_g_diag(&self, n: usize) -> Vec<f64> {
        self.gamma.iter().flat_map(|&g| std::iter::repeat(g).take(n)).collect()
    }

    pub fn r_g(&self, n: usize) -> CMatrix {
        let blocks: Vec<CMatrix> = self
            .gamma
            .iter()
            .map(|&g| real_diag(&vec![g; n]))
            .collect();
        blkdiag(&blocks).expect("gamma is non-empty")
    }

    pub fn r_h(&self, m: usize, n: usize) -> CMatrix {
        real_diag(&vec![self.beta; m * n])
    }

    /// `Tr(R_g) = N Σ_k γ_k`.
    pub fn trace_r_g(&self, n: usize) -> f64 {
        n as f64 * self.gamma.iter().sum::<f64>()
    }

    /// `Tr(R_h) = M N β`.
    pub fn trace_r_h(&self, m: usize, n: usize) -> f64 {
        (m * n) as f64 * self.beta
    }
}

/// Smallest pilot length with identifiable `G` and `H`: `max(N, ⌈N K / N_r⌉)`.
pub fn min_pilots(dims: &SystemDims) -> usize {
    dims.n.max((dims.n * dims.k).div_ceil(dims.n_r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiselessRecovery {
    pub g_hat: CMatrix,
    pub h_hat: CMatrix,
    pub rank_rc: usize,
    pub rank_bs: usize,
    /// `rank_rc = K N` and `rank_bs = N`.
    pub identifiable: bool,
}

/// Pseudoinverse recovery of `G` from `y_RC` and of `H` from `y_BS`.
///
/// `H` is solved through the Kronecker structure: the BS samples reshape to
/// `Y = H A_BSᵀ`, so `A_BS Hᵀ = Yᵀ` is a τ×N least-squares problem with M
/// right-hand sides instead of a τM × MN one.
pub fn recover_noiseless(record: &SoundingRecord, dims: &SystemDims) -> Result<NoiselessRecovery> {
    let amp = record.noise.pt.sqrt();
    let y_rc = Col::from_fn(record.y_rc.nrows(), |i| record.y_rc[i] / amp);
    let (g_vec, rank_rc) = lstsq_minnorm(record.a_rc.as_ref(), &y_rc)?;
    let g_hat = unvec(&g_vec, dims.n, dims.k)?;

    let y = record.y_bs_matrix();
    let yt = Mat::from_fn(y.ncols(), y.nrows(), |t, i| y[(i, t)] / amp);
    let (ht, rank_bs) = lstsq_minnorm_multi(record.a_bs.as_ref(), yt.as_ref())?;
    let h_hat = ht.transpose().to_owned();

    Ok(NoiselessRecovery {
        identifiable: rank_rc == dims.k * dims.n && rank_bs == dims.n,
        g_hat,
        h_hat,
        rank_rc,
        rank_bs,
    })
}

fn cholesky(w: &CMatrix, what: &str) -> Result<Llt<c64>> {
    w.llt(Side::Lower)
        .map_err(|e| Error::Numerical(format!("{what} is not positive definite: {e:?}")))
}

/// `R⁻¹ + Γ AᴴA` for a diagonal prior `R`.
fn information_matrix(a: MatRef<'_, c64>, prior_diag: &[f64], snr: f64) -> CMatrix {
    information_from_gram(a.adjoint() * a, prior_diag, snr)
}

fn information_from_gram(mut w: CMatrix, prior_diag: &[f64], snr: f64) -> CMatrix {
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            w[(i, j)] *= snr;
        }
        w[(j, j)] += c64::new(1.0 / prior_diag[j], 0.0);
    }
    w
}

/// Algebraically equivalent ways of writing the LMMSE filter for `vec(G)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LmmseForm {
    /// `(R_g⁻¹ + Γ AᴴA)⁻¹ Γ Aᴴ`, a KN×KN solve.
    #[default]
    Information,
    /// `R_g Aᴴ (A R_g Aᴴ + Γ⁻¹ I)⁻¹`, a τN_r×τN_r solve.
    Covariance,
}

/// LMMSE filter for `vec(G)` given `A_RC`, reusable across observations.
pub struct GFilter {
    a_rc: CMatrix,
    n: usize,
    k: usize,
    snr: f64,
    form: LmmseForm,
    prior: Vec<f64>,
    factor: Llt<c64>,
}

impl GFilter {
    pub fn new(a_rc: &CMatrix, priors: &PriorCovariances, form: LmmseForm) -> Result<Self> {
        let k = priors.gamma.len();
        if a_rc.ncols() % k != 0 {
            return Err(Error::invalid(format!(
                "A_RC has {} columns, not a multiple of K = {k}",
                a_rc.ncols()
            )));
        }
        let n = a_rc.ncols() / k;
        let prior = priors.r_g_diag(n);
        let factor = match form {
            LmmseForm::Information => cholesky(&information_matrix(a_rc.as_ref(), &prior, priors.snr), "R_g^-1 + Γ AᴴA")?,
            LmmseForm::Covariance => {
                if priors.snr == 0.0 {
                    return Err(Error::invalid("covariance form needs Γ > 0"));
                }
                let rows = a_rc.nrows();
                let scaled = Mat::from_fn(rows, a_rc.ncols(), |i, j| a_rc[(i, j)] * prior[j]);
                let mut c = &scaled * a_rc.adjoint();
                for i in 0..rows {
                    c[(i, i)] += c64::new(1.0 / priors.snr, 0.0);
                }
                cholesky(&c, "A R_g Aᴴ + Γ⁻¹ I")?
            }
        };
        Ok(GFilter {
            a_rc: a_rc.clone(),
            n,
            k,
            snr: priors.snr,
            form,
            prior,
            factor,
        })
    }

    /// Information-form filter from a precomputed `A_RCᴴ A_RC`, which does not
    /// depend on `Γ` and can be shared across an SNR sweep.
    pub fn from_gram(a_rc: &CMatrix, gram: &CMatrix, priors: &PriorCovariances) -> Result<Self> {
        let k = priors.gamma.len();
        if a_rc.ncols() % k != 0 || gram.nrows() != a_rc.ncols() || gram.ncols() != a_rc.ncols() {
            return Err(Error::invalid("A_RC, its Gram matrix and K disagree"));
        }
        let n = a_rc.ncols() / k;
        let prior = priors.r_g_diag(n);
        let factor = cholesky(&information_from_gram(gram.clone(), &prior, priors.snr), "R_g^-1 + Γ AᴴA")?;
        Ok(GFilter {
            a_rc: a_rc.clone(),
            n,
            k,
            snr: priors.snr,
            form: LmmseForm::Information,
            prior,
            factor,
        })
    }

    /// Estimate of `vec(G)` from observations already divided by `√P_t`.
    pub fn apply_normalized(&self, y: &CVector) -> CVector {
        match self.form {
            LmmseForm::Information => {
                let rhs = self.a_rc.adjoint() * y;
                let mut x = self.factor.solve(&rhs);
                for i in 0..x.nrows() {
                    x[i] *= self.snr;
                }
                x
            }
            LmmseForm::Covariance => {
                let u = self.factor.solve(y);
                let mut x = self.a_rc.adjoint() * &u;
                for i in 0..x.nrows() {
                    x[i] *= self.prior[i];
                }
                x
            }
        }
    }

    /// `Ĝ` (N×K) from raw HRIS observations.
    pub fn estimate(&self, y_rc: &CVector, noise: &NoiseModel) -> Result<CMatrix> {
        if y_rc.nrows() != self.a_rc.nrows() {
            return Err(Error::invalid("y_RC length does not match A_RC"));
        }
        let amp = noise.pt.sqrt();
        let y = Col::from_fn(y_rc.nrows(), |i| y_rc[i] / amp);
        unvec(&self.apply_normalized(&y), self.n, self.k)
    }

    /// Dense filter matrix `T` with `vec(Ĝ) = T y/√P_t`.
    pub fn matrix(&self) -> CMatrix {
        let rows = self.a_rc.nrows();
        let mut t = Mat::zeros(self.a_rc.ncols(), rows);
        for j in 0..rows {
            let e = Col::from_fn(rows, |i| if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) });
            let x = self.apply_normalized(&e);
            for i in 0..x.nrows() {
                t[(i, j)] = x[i];
            }
        }
        t
    }
}

/// LMMSE estimate `Ĝ` from a sounding record.
pub fn lmmse_g(record: &SoundingRecord, priors: &PriorCovariances) -> Result<CMatrix> {
    lmmse_g_with(record, priors, LmmseForm::Information)
}

pub fn lmmse_g_with(record: &SoundingRecord, priors: &PriorCovariances, form: LmmseForm) -> Result<CMatrix> {
    if priors.snr == 0.0 {
        let n = record.a_rc.ncols() / priors.gamma.len();
        return Ok(Mat::zeros(n, priors.gamma.len()));
    }
    GFilter::new(&record.a_rc, priors, form)?.estimate(&record.y_rc, &record.noise)
}

/// Closed-form error of an LMMSE estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedMse {
    /// `E = Tr((R⁻¹ + Γ AᴴA)⁻¹)`.
    pub mse: f64,
    /// `E / Tr(R)`.
    pub normalized: f64,
}

/// `E_G = Tr((R_g⁻¹ + Γ A_RCᴴ A_RC)⁻¹)`.
pub fn closed_mse_g(a_rc: &CMatrix, priors: &PriorCovariances) -> Result<ClosedMse> {
    let k = priors.gamma.len();
    if a_rc.ncols() % k != 0 {
        return Err(Error::invalid("A_RC column count is not a multiple of K"));
    }
    let n = a_rc.ncols() / k;
    let prior = priors.r_g_diag(n);
    let w = information_matrix(a_rc.as_ref(), &prior, priors.snr);
    let mse = trace(cholesky(&w, "R_g^-1 + Γ AᴴA")?.inverse().as_ref()).re;
    Ok(ClosedMse {
        mse,
        normalized: mse / priors.trace_r_g(n),
    })
}

/// `E_H = M · Tr((β⁻¹ I_N + Γ A_BSᴴ A_BS)⁻¹)`, using
/// `(A ⊗ I_M)ᴴ(A ⊗ I_M) = (AᴴA) ⊗ I_M`.
pub fn closed_mse_h(a_bs: &CMatrix, m: usize, priors: &PriorCovariances) -> Result<ClosedMse> {
    let n = a_bs.ncols();
    let w = information_matrix(a_bs.as_ref(), &vec![priors.beta; n], priors.snr);
    let mse = m as f64 * trace(cholesky(&w, "β⁻¹ I + Γ A_BSᴴ A_BS")?.inverse().as_ref()).re;
    Ok(ClosedMse {
        mse,
        normalized: mse / priors.trace_r_h(m, n),
    })
}

/// `E_H` evaluated on the materialized `MN × MN` system; for cross-checks only.
pub fn closed_mse_h_naive(a_bs: &CMatrix, m: usize, priors: &PriorCovariances) -> Result<ClosedMse> {
    let n = a_bs.ncols();
    let eye = Mat::<c64>::identity(m, m);
    let big = kron(a_bs.as_ref(), eye.as_ref());
    let w = information_matrix(big.as_ref(), &vec![priors.beta; m * n], priors.snr);
    let mse = trace(cholesky(&w, "R_h^-1 + Γ KᴴK")?.inverse().as_ref()).re;
    Ok(ClosedMse {
        mse,
        normalized: mse / priors.trace_r_h(m, n),
    })
}

/// Which `G` the BS uses to build `A_BS` before estimating `H`.
#[derive(Debug, Clone, Copy)]
pub enum GSource<'a> {
    /// `A_BS` from the true channel, as stored in the record.
    True,
    /// `A_BS` rebuilt from the HRIS estimate.
    Estimated {
        g_hat: &'a CMatrix,
        schedule: &'a ScheduleMatrices,
        pilots: &'a PilotBook,
    },
}

/// `A_BS` from precomputed Ψ(n) diagonals and any `G`.
pub fn a_bs_from(schedule: &ScheduleMatrices, pilots: &PilotBook, g: &CMatrix) -> Result<CMatrix> {
    let (tau, n) = (schedule.psi_rows.nrows(), schedule.psi_rows.ncols());
    if g.nrows() != n || g.ncols() != pilots.k() || pilots.tau() != tau {
        return Err(Error::invalid("G, pilots and schedule dimensions disagree"));
    }
    let r = g * &pilots.s;
    Ok(Mat::from_fn(tau, n, |t, i| schedule.psi_rows[(t, i)] * r[(i, t)]))
}

/// LMMSE estimate of `H` from the BS samples `Y = H A_BSᵀ + Z` (already
/// normalized by `√P_t`).
///
/// Solves `W Ĥᵀ = Γ A_BSᴴ Yᵀ` with `W = β⁻¹ I_N + Γ A_BSᴴ A_BS`, which is the
/// `vec(H)` LMMSE estimator with the Kronecker factor pulled out.
pub fn lmmse_h_from(y: &CMatrix, a_bs: &CMatrix, beta: f64, snr: f64) -> Result<CMatrix> {
    if y.ncols() != a_bs.nrows() {
        return Err(Error::invalid("BS samples and A_BS disagree on τ"));
    }
    if snr == 0.0 {
        return Ok(Mat::zeros(y.nrows(), a_bs.ncols()));
    }
    let n = a_bs.ncols();
    let w = information_matrix(a_bs.as_ref(), &vec![beta; n], snr);
    let mut rhs = a_bs.adjoint() * y.transpose();
    for j in 0..rhs.ncols() {
        for i in 0..rhs.nrows() {
            rhs[(i, j)] *= snr;
        }
    }
    let ht = cholesky(&w, "β⁻¹ I + Γ A_BSᴴ A_BS")?.solve(&rhs);
    Ok(ht.transpose().to_owned())
}

pub fn lmmse_h(record: &SoundingRecord, priors: &PriorCovariances, source: GSource<'_>) -> Result<CMatrix> {
    let amp = record.noise.pt.sqrt();
    let y = record.y_bs_matrix();
    let y = Mat::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] / amp);
    match source {
        GSource::True => lmmse_h_from(&y, &record.a_bs, priors.beta, priors.snr),
        GSource::Estimated { g_hat, schedule, pilots } => {
            let a_bs = a_bs_from(schedule, pilots, g_hat)?;
            lmmse_h_from(&y, &a_bs, priors.beta, priors.snr)
        }
    }
}

/// `Ĉ_k = Ĥ diag(ĝ_k)` for every user.
pub fn cascaded_from_individual(h_hat: &CMatrix, g_hat: &CMatrix) -> Result<Vec<CMatrix>> {
    if h_hat.ncols() != g_hat.nrows() {
        return Err(Error::invalid(format!(
            "H has {} columns but G has {} rows",
            h_hat.ncols(),
            g_hat.nrows()
        )));
    }
    Ok((0..g_hat.ncols())
        .map(|k| Mat::from_fn(h_hat.nrows(), h_hat.ncols(), |m, l| h_hat[(m, l)] * g_hat[(l, k)]))
        .collect())
}

/// `‖estimate − truth‖_F² / ‖truth‖_F²`.
pub fn nmse(estimate: MatRef<'_, c64>, truth: MatRef<'_, c64>) -> Result<f64> {
    let err = error_energy(estimate, truth)?;
    let den = frob_sq(truth);
    if den == 0.0 {
        return Err(Error::invalid("NMSE is undefined for an all-zero reference"));
    }
    Ok(err / den)
}

/// `‖estimate − truth‖_F²`.
pub fn error_energy(estimate: MatRef<'_, c64>, truth: MatRef<'_, c64>) -> Result<f64> {
    if estimate.nrows() != truth.nrows() || estimate.ncols() != truth.ncols() {
        return Err(Error::invalid("estimate and truth shapes differ"));
    }
    let mut acc = 0.0;
    for j in 0..truth.ncols() {
        for i in 0..truth.nrows() {
            acc += (estimate[(i, j)] - truth[(i, j)]).norm_sqr();
        }
    }
    Ok(acc)
}

/// Ensemble NMSE as a ratio of summed error energy to summed reference energy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NmseAccumulator {
    pub error: f64,
    pub reference: f64,
    pub count: usize,
}

impl NmseAccumulator {
    pub fn add(&mut self, estimate: MatRef<'_, c64>, truth: MatRef<'_, c64>) -> Result<()> {
        self.error += error_energy(estimate, truth)?;
        self.reference += frob_sq(truth);
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &NmseAccumulator) {
        self.error += other.error;
        self.reference += other.reference;
        self.count += other.count;
    }

    pub fn value(&self) -> Result<f64> {
        if self.reference == 0.0 {
            return Err(Error::invalid("NMSE is undefined for an all-zero reference"));
        }
        Ok(self.error / self.reference)
    }
}

/// True cascaded channels `C_k = H diag(g_k)`.
pub fn true_cascaded(ch: &ChannelRealization) -> Vec<CMatrix> {
    cascaded_from_individual(&ch.h, &ch.g).expect("realization dimensions are consistent")
}

/// Pilot split of the reflective-RIS baseline.
///
/// User 1 sounds alone for `phase1_len` instances, which identifies
/// `C_1 = H diag(g_1)`. Every other user then sounds for `phase2_len = ⌈N/M⌉`
/// instances, enough to resolve the N ratios `λ_{k,i} = [g_k]_i / [g_1]_i`
/// that map `C_1` onto `C_k = C_1 diag(λ_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselinePlan {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub tau: usize,
    pub phase1_len: usize,
    pub phase2_len: usize,
}

impl BaselinePlan {
    /// `N + (K − 1)⌈N/M⌉`.
    pub fn min_pilots(n: usize, m: usize, k: usize) -> usize {
        n + (k - 1) * n.div_ceil(m)
    }

    pub fn new(n: usize, m: usize, k: usize, tau: usize) -> Result<Self> {
        if n == 0 || m == 0 || k == 0 {
            return Err(Error::invalid("baseline dimensions must be positive"));
        }
        let min = Self::min_pilots(n, m, k);
        if tau < min {
            return Err(Error::invalid(format!(
                "reflective baseline needs at least {min} pilots for N={n}, M={m}, K={k}; got {tau}"
            )));
        }
        let phase2_len = n.div_ceil(m);
        Ok(BaselinePlan {
            n,
            m,
            k,
            tau,
            phase1_len: tau - (k - 1) * phase2_len,
            phase2_len,
        })
    }
}

/// `N × len` phase-1 reflection matrix: columns of a `len`-point DFT,
/// `v_i(n) = exp(−j 2π i n / len)`. Full row rank exactly when `len ≥ N`.
pub fn baseline_phase1_reflections(n: usize, len: usize) -> CMatrix {
    Mat::from_fn(n, len, |i, t| cis(-std::f64::consts::TAU * ((i * t) % len) as f64 / len as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub plan: BaselinePlan,
    pub c_hat: Vec<CMatrix>,
    /// Users (zero-based, `k ≥ 1`) whose phase-2 system needed diagonal loading.
    pub flagged: Vec<usize>,
}

/// Relative diagonal loading used when the phase-2 Gram matrix is near singular.
pub const PHASE2_LOADING: f64 = 1e-8;
/// Reciprocal-condition estimate of the phase-2 Gram below which loading kicks in.
const PHASE2_RCOND: f64 = 1e-12;

/// Two-phase least-squares estimate of all cascaded channels through a purely
/// reflective RIS (`ρ ≡ 1`). Phase-1 reflections are DFT columns; phase-2
/// reflections are i.i.d. uniform phases drawn from `rng`, followed by the
/// receiver noise for that slot.
pub fn baseline_reflective_cascaded(
    channels: &ChannelRealization,
    pilots: &PilotBook,
    tau: usize,
    rng: &mut SeededRng,
    noise: &NoiseModel,
) -> Result<BaselineEstimate> {
    let (m, n) = (channels.h.nrows(), channels.h.ncols());
    let k = channels.g.ncols();
    let plan = BaselinePlan::new(n, m, k, tau)?;
    if pilots.k() != k || pilots.tau() < tau {
        return Err(Error::invalid("pilot book does not cover the baseline window"));
    }
    let amp = noise.pt.sqrt();
    let truth = true_cascaded(channels);

    // Phase 1: Y = C_1 U + Z/√P_t with U = V diag(s_1).
    let t1 = plan.phase1_len;
    let v = baseline_phase1_reflections(n, t1);
    let u = Mat::from_fn(n, t1, |i, t| v[(i, t)] * pilots.s[(0, t)]);
    let mut y1 = &truth[0] * &u;
    for t in 0..t1 {
        for i in 0..m {
            y1[(i, t)] += rng.complex_normal(noise.sigma2_b) / amp;
        }
    }
    // Ĉ_1 = Y Uᴴ (U Uᴴ)⁻¹; U Uᴴ = t1·I for DFT reflections and unit pilots.
    let gram = &u * u.adjoint();
    let rhs = &u * y1.adjoint();
    let c1_hat = cholesky(&gram, "phase-1 reflection Gram")?.solve(&rhs).adjoint().to_owned();

    let mut c_hat = Vec::with_capacity(k);
    c_hat.push(c1_hat.clone());
    let mut flagged = Vec::new();
    let l2 = plan.phase2_len;
    for user in 1..k {
        let start = t1 + (user - 1) * l2;
        let mut b = Mat::<c64>::zeros(m * l2, n);
        let mut y = Col::<c64>::zeros(m * l2);
        for l in 0..l2 {
            let s = pilots.s[(user, start + l)];
            let w: Vec<c64> = (0..n).map(|_| cis(rng.phase())).collect();
            let ws: Vec<c64> = w.iter().map(|&x| x * s).collect();
            for i in 0..n {
                for r in 0..m {
                    b[(l * m + r, i)] = c1_hat[(r, i)] * ws[i];
                }
            }
            for r in 0..m {
                let mut acc = c64::new(0.0, 0.0);
                for i in 0..n {
                    acc += truth[user][(r, i)] * ws[i];
                }
                y[l * m + r] = acc + rng.complex_normal(noise.sigma2_b) / amp;
            }
        }
        let (lambda, loaded) = solve_phase2(&b, &y)?;
        if loaded {
            flagged.push(user);
        }
        c_hat.push(Mat::from_fn(m, n, |r, i| c1_hat[(r, i)] * lambda[i]));
    }
    Ok(BaselineEstimate { plan, c_hat, flagged })
}

fn solve_phase2(b: &CMatrix, y: &CVector) -> Result<(CVector, bool)> {
    let mut gram = b.adjoint() * b;
    let rhs = b.adjoint() * y;
    let well_posed = gram.llt(Side::Lower).ok().filter(|f| {
        let l = f.L();
        let d: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].re).collect();
        let hi = d.iter().cloned().fold(0.0, f64::max);
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        hi > 0.0 && (lo / hi).powi(2) > PHASE2_RCOND
    });
    if let Some(f) = well_posed {
        return Ok((f.solve(&rhs), false));
    }
    let n = gram.ncols();
    let load = PHASE2_LOADING * trace(gram.as_ref()).re / n as f64;
    let load = if load > 0.0 { load } else { PHASE2_LOADING };
    for i in 0..n {
        gram[(i, i)] += c64::new(load, 0.0);
    }
    Ok((cholesky(&gram, "loaded phase-2 Gram")?.solve(&rhs), true))
}
