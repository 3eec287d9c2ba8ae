//! Physical setup: system sizes, node geometry, pathloss, and Rayleigh channel draws.

use faer::{c64, Mat};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::CMatrix;

/// Problem sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDims {
    /// BS antennas.
    pub m: usize,
    /// HRIS elements.
    pub n: usize,
    /// HRIS receive RF chains.
    pub n_r: usize,
    /// Single-antenna users.
    pub k: usize,
    /// Pilot length.
    pub tau: usize,
}

impl SystemDims {
    pub fn new(m: usize, n: usize, n_r: usize, k: usize, tau: usize) -> Result<Self> {
        let dims = SystemDims { m, n, n_r, k, tau };
        dims.validate()?;
        Ok(dims)
    }

    /// Sixteen BS antennas, 64 elements, 8 RF chains, 8 users.
    pub fn reference(tau: usize) -> Self {
        SystemDims { m: 16, n: 64, n_r: 8, k: 8, tau }
    }

    pub fn with_tau(self, tau: usize) -> Self {
        SystemDims { tau, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("n", self.n), ("n_r", self.n_r), ("k", self.k), ("tau", self.tau)] {
            if v == 0 {
                return Err(Error::config(format!("dims.{name}"), "must be at least 1"));
            }
        }
        if self.n_r > self.n {
            return Err(Error::config(
                "dims.n_r",
                format!("constraint n_r <= n violated ({} > {})", self.n_r, self.n),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node placement and large-scale propagation parameters (lengths in metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemGeometry {
    pub bs_pos: Point2,
    pub hris_pos: Point2,
    pub ut_center: Point2,
    pub ut_radius: f64,
    pub d0: f64,
    pub lambda0_db: f64,
    pub alpha_h: f64,
    pub alpha_g: f64,
}

impl Default for SystemGeometry {
    fn default() -> Self {
        SystemGeometry {
            bs_pos: Point2::new(0.0, 0.0),
            hris_pos: Point2::new(0.0, 50.0),
            ut_center: Point2::new(30.0, 50.0),
            ut_radius: 10.0,
            d0: 1.0,
            lambda0_db: -20.0,
            alpha_h: 2.2,
            alpha_g: 2.1,
        }
    }
}

impl SystemGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0) {
            return Err(Error::config("geometry.d0", "must be positive"));
        }
        if !(self.ut_radius >= 0.0) {
            return Err(Error::config("geometry.ut_radius", "must be non-negative"));
        }
        if !(self.alpha_h > 0.0) {
            return Err(Error::config("geometry.alpha_h", "must be positive"));
        }
        if !(self.alpha_g > 0.0) {
            return Err(Error::config("geometry.alpha_g", "must be positive"));
        }
        Ok(())
    }
}

/// Deterministic random source addressed by `(seed, stream)`.
///
/// Each Monte Carlo trial owns its own stream, so draws do not depend on the
/// order in which workers pick trials up.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, stream, inner }
    }

    /// Stream for one (purpose, group, index) triple; `group` and `index` are
    /// truncated to 24 and 32 bits respectively.
    pub fn substream(seed: u64, purpose: StreamPurpose, group: u64, index: u64) -> Self {
        let stream = ((purpose as u64) << 56) | ((group & 0xFF_FFFF) << 32) | (index & 0xFFFF_FFFF);
        SeededRng::new(seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Circularly-symmetric complex normal with the given total variance.
    pub fn complex_normal(&mut self, variance: f64) -> c64 {
        let s = (variance / 2.0).sqrt();
        let re: f64 = self.inner.sample(StandardNormal);
        let im: f64 = self.inner.sample(StandardNormal);
        c64::new(s * re, s * im)
    }

    /// Uniform phase on `[0, 2π)`.
    pub fn phase(&mut self) -> f64 {
        self.inner.random::<f64>() * std::f64::consts::TAU
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamPurpose {
    Geometry = 1,
    Schedule = 2,
    Channels = 3,
    Noise = 4,
    Baseline = 5,
}

/// Linear pathloss gain `10^(λ0/10) · (dist/d0)^(−α)`.
pub fn pathloss(dist: f64, d0: f64, lambda0_db: f64, alpha: f64) -> Result<f64> {
    if !(dist > 0.0) {
        return Err(Error::invalid(format!("pathloss distance must be positive, got {dist}")));
    }
    if !(d0 > 0.0) {
        return Err(Error::invalid(format!("reference distance must be positive, got {d0}")));
    }
    Ok(10f64.powf(lambda0_db / 10.0) * (dist / d0).powf(-alpha))
}

/// One placement of the users around the HRIS.
#[derive(Debug, Clone, PartialEq)]
pub struct Drop {
    pub user_positions: Vec<Point2>,
    /// HRIS–BS distance `d_H`.
    pub d_h: f64,
    /// HRIS–user distances `d_k`.
    pub d_users: Vec<f64>,
}

/// Draws user positions uniformly over the disk and returns all link distances.
pub fn sample_geometry(dims: &SystemDims, geometry: &SystemGeometry, rng: &mut SeededRng) -> Drop {
    let user_positions: Vec<Point2> = (0..dims.k)
        .map(|_| {
            let r = geometry.ut_radius * rng.random::<f64>().sqrt();
            let theta = rng.phase();
            Point2::new(
                geometry.ut_center.x + r * theta.cos(),
                geometry.ut_center.y + r * theta.sin(),
            )
        })
        .collect();
    let d_users = user_positions.iter().map(|p| geometry.hris_pos.dist(p)).collect();
    Drop {
        d_h: geometry.bs_pos.dist(&geometry.hris_pos),
        d_users,
        user_positions,
    }
}

/// How pathloss gains enter the channel priors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainNormalization {
    /// Gains exactly as produced by the pathloss law.
    Absolute,
    /// `β` scaled to 1 and the `γ_k` scaled to unit mean, keeping the relative
    /// user spread. Transmit SNR is then referenced to a unit-gain link.
    #[default]
    UnitMean,
}

/// Large-scale gains `β` (HRIS–BS) and `γ_k` (user k–HRIS).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub beta: f64,
    pub gamma: Vec<f64>,
}

impl LinkGains {
    pub fn from_drop(drop: &Drop, geometry: &SystemGeometry, norm: GainNormalization) -> Result<Self> {
        let beta = pathloss(drop.d_h, geometry.d0, geometry.lambda0_db, geometry.alpha_h)?;
        let gamma = drop
            .d_users
            .iter()
            .map(|&d| pathloss(d, geometry.d0, geometry.lambda0_db, geometry.alpha_g))
            .collect::<Result<Vec<_>>>()?;
        Ok(LinkGains { beta, gamma }.normalized(norm))
    }

    pub fn normalized(self, norm: GainNormalization) -> Self {
        match norm {
            GainNormalization::Absolute => self,
            GainNormalization::UnitMean => {
                let mean = self.gamma.iter().sum::<f64>() / self.gamma.len() as f64;
                LinkGains {
                    beta: 1.0,
                    gamma: self.gamma.iter().map(|g| g / mean).collect(),
                }
            }
        }
    }

    pub fn uniform(k: usize, beta: f64, gamma: f64) -> Self {
        LinkGains { beta, gamma: vec![gamma; k] }
    }
}

/// One fading draw of the HRIS–BS channel `H` (M×N) and user channels `G` (N×K).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub g: CMatrix,
    pub beta: f64,
    pub gamma: Vec<f64>,
}

/// i.i.d. Rayleigh draw: `[H]_{ml} ~ CN(0, β)`, `[G]_{lk} ~ CN(0, γ_k)`.
pub fn draw_channels(dims: &SystemDims, gains: &LinkGains, rng: &mut SeededRng) -> Result<ChannelRealization> {
    if gains.gamma.len() != dims.k {
        return Err(Error::invalid(format!(
            "expected {} user gains, got {}",
            dims.k,
            gains.gamma.len()
        )));
    }
    if !(gains.beta >= 0.0) || gains.gamma.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::invalid("channel gains must be non-negative"));
    }
    let mut h = Mat::zeros(dims.m, dims.n);
    for j in 0..dims.n {
        for i in 0..dims.m {
            h[(i, j)] = rng.complex_normal(gains.beta);
        }
    }
    let mut g = Mat::zeros(dims.n, dims.k);
    for k in 0..dims.k {
        for l in 0..dims.n {
            g[(l, k)] = rng.complex_normal(gains.gamma[k]);
        }
    }
    Ok(ChannelRealization {
        h,
        g,
        beta: gains.beta,
        gamma: gains.gamma.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::frob_sq;

    #[test]
    fn pathloss_values() {
        assert!((pathloss(1.0, 1.0, -20.0, 2.2).unwrap() - 0.01).abs() < 1e-15);
        // 0.01 · 50^(−2.2) evaluated independently: ln 50 = 3.912023005428146.
        let want = 0.01 * (-2.2f64 * 3.912_023_005_428_146).exp();
        let got = pathloss(50.0, 1.0, -20.0, 2.2).unwrap();
        assert!((got - want).abs() / want < 1e-12);
        assert!((got - 1.83e-6).abs() / 1.83e-6 < 0.01);
        assert!((pathloss(37.0, 1.0, -20.0, 0.0).unwrap() - 0.01).abs() < 1e-15);
        assert!(pathloss(0.0, 1.0, -20.0, 2.0).is_err());
        assert!(pathloss(-3.0, 1.0, -20.0, 2.0).is_err());
    }

    #[test]
    fn pathloss_monotone() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let p = pathloss(i as f64 * 0.5, 1.0, -20.0, 2.1).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn dims_validation() {
        assert!(SystemDims::new(16, 64, 8, 8, 64).is_ok());
        assert!(SystemDims::new(16, 4, 8, 8, 64).is_err());
        assert!(SystemDims::new(0, 4, 2, 1, 4).is_err());
    }

    #[test]
    fn reference_geometry_distances() {
        let dims = SystemDims::reference(64);
        let geom = SystemGeometry::default();
        let mut rng = SeededRng::new(9, 0);
        let drop = sample_geometry(&dims, &geom, &mut rng);
        assert_eq!(drop.d_h, 50.0);
        assert_eq!(drop.d_users.len(), 8);

        let degenerate = SystemGeometry { ut_radius: 0.0, ..geom };
        let drop = sample_geometry(&dims, &degenerate, &mut rng);
        assert!(drop.d_users.iter().all(|&d| (d - 30.0).abs() < 1e-12));
    }

    #[test]
    fn users_uniform_over_disk() {
        let dims = SystemDims { k: 10_000, ..SystemDims::reference(64) };
        let geom = SystemGeometry::default();
        let mut rng = SeededRng::new(11, 0);
        let drop = sample_geometry(&dims, &geom, &mut rng);
        let radial: Vec<f64> = drop.user_positions.iter().map(|p| p.dist(&geom.ut_center)).collect();
        assert!(radial.iter().all(|&r| r <= 10.0 + 1e-12));
        // E[R√U] = 2R/3 for a uniform disk; std of the mean ≈ 0.024 here.
        let mean = radial.iter().sum::<f64>() / radial.len() as f64;
        assert!((mean - 20.0 / 3.0).abs() < 0.1, "mean radius {mean}");
    }

    #[test]
    fn zero_gain_gives_zero_channel() {
        let dims = SystemDims::new(3, 4, 2, 2, 4).unwrap();
        let mut rng = SeededRng::new(1, 1);
        let ch = draw_channels(&dims, &LinkGains::uniform(2, 0.0, 1.0), &mut rng).unwrap();
        assert_eq!(frob_sq(ch.h.as_ref()), 0.0);
    }

    #[test]
    fn single_entry_variance() {
        let dims = SystemDims::new(1, 1, 1, 1, 1).unwrap();
        let mut rng = SeededRng::new(3, 0);
        let gains = LinkGains::uniform(1, 1.0, 1.0);
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            acc += draw_channels(&dims, &gains, &mut rng).unwrap().h[(0, 0)].norm_sqr();
        }
        let var = acc / trials as f64;
        assert!((0.98..=1.02).contains(&var), "variance {var}");
    }

    #[test]
    fn g_energy_matches_sum_of_variances() {
        let dims = SystemDims::new(2, 16, 2, 3, 16).unwrap();
        let gains = LinkGains { beta: 0.5, gamma: vec![0.2, 1.0, 3.0] };
        let mut rng = SeededRng::new(5, 0);
        let trials = 10_000;
        let (mut eg, mut eh) = (0.0, 0.0);
        for _ in 0..trials {
            let ch = draw_channels(&dims, &gains, &mut rng).unwrap();
            eg += frob_sq(ch.g.as_ref());
            eh += frob_sq(ch.h.as_ref());
        }
        let want_g = 16.0 * 4.2;
        let want_h = 2.0 * 16.0 * 0.5;
        assert!(((eg / trials as f64) - want_g).abs() / want_g < 0.02);
        assert!(((eh / trials as f64) - want_h).abs() / want_h < 0.02);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let dims = SystemDims::new(4, 8, 2, 2, 8).unwrap();
        let gains = LinkGains::uniform(2, 1.0, 1.0);
        let a = draw_channels(&dims, &gains, &mut SeededRng::substream(7, StreamPurpose::Channels, 0, 3)).unwrap();
        let b = draw_channels(&dims, &gains, &mut SeededRng::substream(7, StreamPurpose::Channels, 0, 3)).unwrap();
        let c = draw_channels(&dims, &gains, &mut SeededRng::substream(7, StreamPurpose::Channels, 0, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unit_mean_normalization() {
        let g = LinkGains { beta: 1e-6, gamma: vec![1e-5, 3e-5] }.normalized(GainNormalization::UnitMean);
        assert_eq!(g.beta, 1.0);
        assert!((g.gamma[0] - 0.5).abs() < 1e-12);
        assert!((g.gamma[1] - 1.5).abs() < 1e-12);
    }
}
