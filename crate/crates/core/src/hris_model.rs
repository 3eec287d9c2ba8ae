//! HRIS element model: reflection matrix Ψ(ρ, ψ), analog combiner Φ(ρ, φ), and
//! per-pilot configuration schedules.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{cis, CMatrix, ZERO};
use crate::scenario::{SeededRng, SystemDims};

/// Which RF chains each element feeds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// Every element feeds every RF chain.
    #[default]
    Full,
    /// Elements are split into `n_r` contiguous blocks; block `r` feeds only chain `r`.
    Partial,
}

impl Connectivity {
    /// Row-major `n_r × n` connection mask.
    pub fn mask(self, n_r: usize, n: usize) -> Vec<bool> {
        match self {
            Connectivity::Full => vec![true; n_r * n],
            Connectivity::Partial => {
                let mut mask = vec![false; n_r * n];
                for l in 0..n {
                    let r = l * n_r / n;
                    mask[r * n + l] = true;
                }
                mask
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Fresh i.i.d. uniform phases ψ and φ at every pilot instance.
    #[default]
    Random,
    /// One random snapshot held for the whole window.
    Constant,
}

/// Amplitude split ρ applied to all instances of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoPolicy {
    Uniform(f64),
    PerElement(Vec<f64>),
}

impl RhoPolicy {
    pub fn values(&self, n: usize) -> Result<Vec<f64>> {
        let rho = match self {
            RhoPolicy::Uniform(r) => vec![*r; n],
            RhoPolicy::PerElement(v) => {
                if v.len() != n {
                    return Err(Error::invalid(format!("rho vector has {} entries, expected {n}", v.len())));
                }
                v.clone()
            }
        };
        if let Some(bad) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {bad}")));
        }
        Ok(rho)
    }
}

/// HRIS configuration during one pilot instance.
#[derive(Debug, Clone, PartialEq)]
pub struct HrisSnapshot {
    pub n: usize,
    pub n_r: usize,
    /// Reflected amplitude fraction per element.
    pub rho: Vec<f64>,
    /// Reflection phases.
    pub psi: Vec<f64>,
    /// Row-major `n_r × n` combining phases (ignored where not connected).
    pub phi: Vec<f64>,
    /// Row-major `n_r × n` connection mask.
    pub connect: Vec<bool>,
}

impl HrisSnapshot {
    pub fn new(rho: Vec<f64>, psi: Vec<f64>, phi: Vec<f64>, connect: Vec<bool>) -> Result<Self> {
        let n = rho.len();
        if psi.len() != n || n == 0 {
            return Err(Error::invalid("rho and psi must have the same non-zero length"));
        }
        if phi.len() != connect.len() || phi.len() % n != 0 {
            return Err(Error::invalid("phi and connect must both be n_r × n"));
        }
        if let Some(bad) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {bad}")));
        }
        Ok(HrisSnapshot {
            n,
            n_r: phi.len() / n,
            rho,
            psi,
            phi,
            connect,
        })
    }

    /// Diagonal of Ψ: `ρ_l e^{jψ_l}`.
    pub fn psi_diag(&self) -> Vec<c64> {
        self.rho.iter().zip(&self.psi).map(|(&r, &p)| cis(p) * r).collect()
    }
}

/// `Ψ = diag(ρ_1 e^{jψ_1}, …, ρ_N e^{jψ_N})`.
pub fn build_psi(s: &HrisSnapshot) -> CMatrix {
    let d = s.psi_diag();
    Mat::from_fn(s.n, s.n, |i, j| if i == j { d[i] } else { ZERO })
}

/// `[Φ]_{r,l} = (1 − ρ_l) e^{jφ_{r,l}}` where element `l` feeds chain `r`, else 0.
pub fn build_phi(s: &HrisSnapshot) -> CMatrix {
    Mat::from_fn(s.n_r, s.n, |r, l| {
        let idx = r * s.n + l;
        if s.connect[idx] {
            cis(s.phi[idx]) * (1.0 - s.rho[l])
        } else {
            ZERO
        }
    })
}

/// τ snapshots sharing dimensions and connection mask.
#[derive(Debug, Clone, PartialEq)]
pub struct HrisSchedule {
    pub snapshots: Vec<HrisSnapshot>,
}

impl HrisSchedule {
    pub fn new(snapshots: Vec<HrisSnapshot>) -> Result<Self> {
        let first = snapshots.first().ok_or_else(|| Error::invalid("schedule must be non-empty"))?;
        if snapshots
            .iter()
            .any(|s| s.n != first.n || s.n_r != first.n_r || s.connect != first.connect)
        {
            return Err(Error::invalid("all snapshots must share dimensions and mask"));
        }
        Ok(HrisSchedule { snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn n(&self) -> usize {
        self.snapshots[0].n
    }

    pub fn n_r(&self) -> usize {
        self.snapshots[0].n_r
    }

    pub fn phi(&self) -> Vec<CMatrix> {
        self.snapshots.iter().map(build_phi).collect()
    }

    /// Row `n` holds the diagonal of Ψ(n).
    pub fn psi_rows(&self) -> CMatrix {
        let diags: Vec<Vec<c64>> = self.snapshots.iter().map(HrisSnapshot::psi_diag).collect();
        Mat::from_fn(self.len(), self.n(), |t, l| diags[t][l])
    }

    /// Same phases, different amplitude split.
    pub fn with_rho(&self, rho: &RhoPolicy) -> Result<Self> {
        let values = rho.values(self.n())?;
        Ok(HrisSchedule {
            snapshots: self
                .snapshots
                .iter()
                .map(|s| HrisSnapshot { rho: values.clone(), ..s.clone() })
                .collect(),
        })
    }
}

/// Builds a τ-long schedule. Phases are drawn before ρ is applied, so two calls
/// with the same rng state and different `rho` share every phase.
pub fn make_schedule(
    dims: &SystemDims,
    mode: ScheduleMode,
    rho: &RhoPolicy,
    connectivity: Connectivity,
    rng: &mut SeededRng,
) -> Result<HrisSchedule> {
    let rho = rho.values(dims.n)?;
    let connect = connectivity.mask(dims.n_r, dims.n);
    let draw = |rng: &mut SeededRng| {
        let psi: Vec<f64> = (0..dims.n).map(|_| rng.phase()).collect();
        let phi: Vec<f64> = connect
            .iter()
            .map(|&c| if c { rng.phase() } else { 0.0 })
            .collect();
        HrisSnapshot {
            n: dims.n,
            n_r: dims.n_r,
            rho: rho.clone(),
            psi,
            phi,
            connect: connect.clone(),
        }
    };
    let snapshots = match mode {
        ScheduleMode::Random => (0..dims.tau).map(|_| draw(rng)).collect(),
        ScheduleMode::Constant => vec![draw(rng); dims.tau],
    };
    Ok(HrisSchedule { snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{numerical_rank, RANK_REL_TOL};
    use crate::sounding::{assemble_a_rc, gen_pilots};
    use std::f64::consts::PI;

    fn snapshot(rho: Vec<f64>, psi: Vec<f64>, n_r: usize, phi: f64, conn: Connectivity) -> HrisSnapshot {
        let n = rho.len();
        HrisSnapshot::new(rho, psi, vec![phi; n_r * n], conn.mask(n_r, n)).unwrap()
    }

    #[test]
    fn psi_special_cases() {
        let s = snapshot(vec![1.0; 4], vec![0.0; 4], 2, 0.0, Connectivity::Full);
        assert_eq!(build_psi(&s), Mat::<c64>::identity(4, 4));

        let s = snapshot(vec![0.0; 3], vec![1.0, 2.0, 3.0], 1, 0.0, Connectivity::Full);
        assert_eq!(build_psi(&s), Mat::<c64>::zeros(3, 3));

        let s = snapshot(vec![0.5], vec![PI], 1, 0.0, Connectivity::Full);
        let v = build_psi(&s)[(0, 0)];
        assert!((v - c64::new(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn phi_special_cases() {
        let s = snapshot(vec![1.0; 4], vec![0.0; 4], 2, 0.3, Connectivity::Full);
        assert_eq!(build_phi(&s), Mat::<c64>::zeros(2, 4));

        let s = snapshot(vec![0.0; 4], vec![0.0; 4], 3, 0.0, Connectivity::Full);
        assert_eq!(build_phi(&s), Mat::from_fn(3, 4, |_, _| c64::new(1.0, 0.0)));

        let rho = vec![0.2, 0.4, 0.6, 0.8];
        let s = snapshot(rho.clone(), vec![0.0; 4], 2, 1.1, Connectivity::Partial);
        let phi = build_phi(&s);
        for l in 0..4 {
            let nonzero: Vec<usize> = (0..2).filter(|&r| phi[(r, l)] != ZERO).collect();
            assert_eq!(nonzero, vec![l / 2]);
            assert!((phi[(l / 2, l)].norm() - (1.0 - rho[l])).abs() < 1e-15);
        }
    }

    #[test]
    fn snapshot_rejects_bad_rho() {
        assert!(HrisSnapshot::new(vec![1.5], vec![0.0], vec![0.0], vec![true]).is_err());
        assert!(RhoPolicy::Uniform(-0.1).values(3).is_err());
        assert!(RhoPolicy::PerElement(vec![0.5; 2]).values(3).is_err());
    }

    #[test]
    fn moduli_as_constructed() {
        let dims = SystemDims::new(2, 6, 3, 2, 5).unwrap();
        let rho = RhoPolicy::PerElement(vec![0.0, 0.1, 0.3, 0.5, 0.9, 1.0]);
        for conn in [Connectivity::Full, Connectivity::Partial] {
            let sched = make_schedule(&dims, ScheduleMode::Random, &rho, conn, &mut SeededRng::new(1, 0)).unwrap();
            for s in &sched.snapshots {
                let psi = build_psi(s);
                let phi = build_phi(s);
                for l in 0..6 {
                    assert!((psi[(l, l)].norm() - s.rho[l]).abs() < 1e-14);
                    for r in 0..3 {
                        let m = phi[(r, l)].norm();
                        assert!(m == 0.0 || (m - (1.0 - s.rho[l])).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_and_random_modes() {
        let dims = SystemDims::new(2, 4, 2, 2, 6).unwrap();
        let rho = RhoPolicy::Uniform(0.5);
        let c = make_schedule(&dims, ScheduleMode::Constant, &rho, Connectivity::Full, &mut SeededRng::new(2, 0)).unwrap();
        assert_eq!(c.len(), 6);
        assert!(c.snapshots.iter().all(|s| *s == c.snapshots[0]));

        let r = make_schedule(&dims, ScheduleMode::Random, &rho, Connectivity::Full, &mut SeededRng::new(2, 0)).unwrap();
        assert_ne!(build_phi(&r.snapshots[0]), build_phi(&r.snapshots[1]));

        let again = make_schedule(&dims, ScheduleMode::Random, &rho, Connectivity::Full, &mut SeededRng::new(2, 0)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn phases_independent_of_rho() {
        let dims = SystemDims::new(2, 4, 2, 2, 3).unwrap();
        let a = make_schedule(&dims, ScheduleMode::Random, &RhoPolicy::Uniform(0.2), Connectivity::Full, &mut SeededRng::new(3, 0)).unwrap();
        let b = make_schedule(&dims, ScheduleMode::Random, &RhoPolicy::Uniform(0.7), Connectivity::Full, &mut SeededRng::new(3, 0)).unwrap();
        assert_eq!(a.with_rho(&RhoPolicy::Uniform(0.7)).unwrap(), b);
    }

    #[test]
    fn random_schedule_full_rank_at_bound() {
        // N = 12, K = 3, N_r = 4 → ⌈NK/N_r⌉ = 9 instances.
        for conn in [Connectivity::Full, Connectivity::Partial] {
            for seed in 0..20 {
                let dims = SystemDims::new(2, 12, 4, 3, 9).unwrap();
                let sched = make_schedule(&dims, ScheduleMode::Random, &RhoPolicy::Uniform(0.5), conn, &mut SeededRng::new(seed, 0)).unwrap();
                let pilots = gen_pilots(3, 9).unwrap();
                let a = assemble_a_rc(&sched, &pilots).unwrap();
                // Partial: each chain sees 3 elements × 3 users over 9 instances.
                let rank = numerical_rank(a.as_ref(), RANK_REL_TOL).unwrap();
                assert_eq!(rank, 36, "{conn:?} seed {seed}");
            }
        }
    }
}
