//! Near-field, spatially non-stationary channel generation.
//!
//! A user sees the array through a subarray-level visibility mask. The
//! channel is a single spherical-wave path by default; extra paths (each with
//! its own geometry and mask) can be enabled for robustness studies.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::exec::Exec;
use crate::linalg::C64;
use crate::seed;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Angle parameter range, open interval `(-√3/2, √3/2)`.
pub const THETA_MAX: f64 = 0.866_025_403_784_438_6;
pub const R_MIN: f64 = 4.0;
pub const R_MAX: f64 = 88.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    /// Antenna count.
    pub n: usize,
    /// Subarray count.
    pub s: usize,
    pub n_rf: usize,
    /// Carrier frequency in Hz.
    pub fc: f64,
}

impl ArrayConfig {
    pub fn new(n: usize, s: usize, n_rf: usize, fc: f64) -> Result<Self> {
        let cfg = Self { n, s, n_rf, fc };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.s == 0 || self.n_rf == 0 {
            return Err(Error::Config("array counts must be >= 1".into()));
        }
        if !self.n.is_multiple_of(self.s) {
            return Err(Error::Config(format!("S = {} does not divide N = {}", self.s, self.n)));
        }
        if self.n_rf > self.n {
            return Err(Error::Config(format!("N_RF = {} exceeds N = {}", self.n_rf, self.n)));
        }
        if !(self.fc > 0.0) || !self.fc.is_finite() {
            return Err(Error::Config("carrier frequency must be positive".into()));
        }
        Ok(())
    }

    /// Antennas per subarray.
    pub fn n_s(&self) -> usize {
        self.n / self.s
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.fc
    }

    pub fn spacing(&self) -> f64 {
        self.wavelength() / 2.0
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    /// Index offset of antenna `n` (1-based): `(2n - N - 1) / 2`.
    pub fn offset(&self, n: usize) -> f64 {
        (2.0 * n as f64 - self.n as f64 - 1.0) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserGeometry {
    pub theta: f64,
    pub r: f64,
}

impl UserGeometry {
    pub fn in_sampling_range(&self) -> bool {
        self.theta > -THETA_MAX && self.theta < THETA_MAX && self.r > R_MIN && self.r < R_MAX
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: Vec<C64>,
    pub u_sub: Vec<u8>,
    pub u: Vec<u8>,
    pub geometry: UserGeometry,
    pub gamma: C64,
}

impl ChannelSample {
    pub fn u_f64(&self) -> Vec<f64> {
        self.u.iter().map(|&v| v as f64).collect()
    }
}

/// Spherical-wave array response, unit norm.
pub fn steering_vector(cfg: &ArrayConfig, geo: &UserGeometry) -> Result<Vec<C64>> {
    if !(geo.r > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {}", geo.r)));
    }
    let d = cfg.spacing();
    let kappa = cfg.wavenumber();
    let amp = 1.0 / (cfg.n as f64).sqrt();
    (1..=cfg.n)
        .map(|n| {
            let delta = cfg.offset(n);
            let sq = geo.r * geo.r + delta * delta * d * d - 2.0 * geo.r * delta * d * geo.theta;
            if !(sq > 0.0) {
                return Err(Error::Domain(format!("antenna {n} distance^2 = {sq} is not positive")));
            }
            // sqrt(sq) - r, written to avoid cancellation when r >> aperture.
            let excess = (sq - geo.r * geo.r) / (sq.sqrt() + geo.r);
            Ok(C64::from_polar(amp, -kappa * excess))
        })
        .collect()
}

/// Planar-wave (far-field) ULA response used as the large-distance limit.
pub fn far_field_steering(cfg: &ArrayConfig, theta: f64) -> Vec<C64> {
    let amp = 1.0 / (cfg.n as f64).sqrt();
    let kd = cfg.wavenumber() * cfg.spacing();
    (1..=cfg.n).map(|n| C64::from_polar(amp, kd * cfg.offset(n) * theta)).collect()
}

pub fn sample_geometry_with<R: Rng>(rng: &mut R) -> UserGeometry {
    loop {
        let theta = rng.gen_range(-THETA_MAX..THETA_MAX);
        let r = rng.gen_range(R_MIN..R_MAX);
        // gen_range is half-open; reject the closed lower endpoints.
        if theta > -THETA_MAX && r > R_MIN {
            return UserGeometry { theta, r };
        }
    }
}

pub fn sample_geometry(rng_seed: u64) -> UserGeometry {
    sample_geometry_with(&mut seed::rng(rng_seed))
}

/// Expands a subarray mask to antenna level (`u_sub ⊗ 1_{N_s}`).
pub fn expand_mask(u_sub: &[u8], n_s: usize) -> Vec<u8> {
    u_sub.iter().flat_map(|&v| std::iter::repeat_n(v, n_s)).collect()
}

pub fn sample_vr_mask_with<R: Rng>(cfg: &ArrayConfig, rng: &mut R) -> (Vec<u8>, Vec<u8>) {
    loop {
        let u_sub: Vec<u8> = (0..cfg.s).map(|_| rng.gen_bool(0.5) as u8).collect();
        if u_sub.contains(&1) {
            let u = expand_mask(&u_sub, cfg.n_s());
            return (u_sub, u);
        }
    }
}

pub fn sample_vr_mask(cfg: &ArrayConfig, rng_seed: u64) -> (Vec<u8>, Vec<u8>) {
    sample_vr_mask_with(cfg, &mut seed::rng(rng_seed))
}

/// Free-space path gain `√N λ/(4π r) e^{-j 2π r/λ}`.
pub fn path_gain(cfg: &ArrayConfig, r: f64) -> C64 {
    let lambda = cfg.wavelength();
    let mag = (cfg.n as f64).sqrt() * lambda / (4.0 * PI * r);
    C64::from_polar(mag, -2.0 * PI * r / lambda)
}

pub fn channel_vector(cfg: &ArrayConfig, geo: &UserGeometry, u: &[u8]) -> Result<ChannelSample> {
    ensure_len("VR mask", u.len(), cfg.n)?;
    if u.iter().all(|&v| v == 0) {
        return Err(Error::Degenerate("all-zero VR mask".into()));
    }
    let ns = cfg.n_s();
    let u_sub: Vec<u8> = (0..cfg.s).map(|i| u[i * ns]).collect();
    if expand_mask(&u_sub, ns) != u {
        return Err(Error::Domain("VR mask is not constant within subarrays".into()));
    }
    let b = steering_vector(cfg, geo)?;
    let gamma = path_gain(cfg, geo.r);
    let h = b.iter().zip(u).map(|(bn, &un)| if un == 1 { gamma * bn } else { C64::new(0.0, 0.0) }).collect();
    Ok(ChannelSample { h, u_sub, u: u.to_vec(), geometry: *geo, gamma })
}

/// One sample from its own seed. Paths after the first add their own
/// gain and geometry, and the reported mask is the union of all path masks.
pub fn generate_sample(cfg: &ArrayConfig, paths: usize, sample_seed: u64) -> Result<ChannelSample> {
    let mut rng = seed::rng(sample_seed);
    let geo = sample_geometry_with(&mut rng);
    let (_, u) = sample_vr_mask_with(cfg, &mut rng);
    let mut sample = channel_vector(cfg, &geo, &u)?;
    for _ in 1..paths.max(1) {
        let g = sample_geometry_with(&mut rng);
        let (_, uk) = sample_vr_mask_with(cfg, &mut rng);
        let extra = channel_vector(cfg, &g, &uk)?;
        for (a, b) in sample.h.iter_mut().zip(&extra.h) {
            *a += b;
        }
        for (a, b) in sample.u.iter_mut().zip(&extra.u) {
            *a |= b;
        }
        for (a, b) in sample.u_sub.iter_mut().zip(&extra.u_sub) {
            *a |= b;
        }
    }
    Ok(sample)
}

pub fn generate_dataset(cfg: &ArrayConfig, count: usize, rng_seed: u64, paths: usize, exec: Exec) -> Result<Vec<ChannelSample>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset count must be >= 1".into()));
    }
    exec.map_range(count, |i| generate_sample(cfg, paths, seed::derive(rng_seed, seed::stream::CHANNEL, i as u64))).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, s: usize) -> ArrayConfig {
        ArrayConfig::new(n, s, 4.min(n), 100e9).unwrap()
    }

    #[test]
    fn config_rejects_bad_counts() {
        assert!(ArrayConfig::new(10, 3, 4, 1e9).is_err());
        assert!(ArrayConfig::new(8, 0, 4, 1e9).is_err());
        assert!(ArrayConfig::new(8, 2, 9, 1e9).is_err());
        let c = cfg(256, 8);
        assert_eq!(c.n_s(), 32);
        assert_eq!(c.spacing(), c.wavelength() / 2.0);
    }

    #[test]
    fn steering_is_unit_norm() {
        let c = cfg(64, 8);
        for s in 0..1000 {
            let g = sample_geometry(s);
            let b = steering_vector(&c, &g).unwrap();
            let norm: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_matches_distance_formula_on_axis() {
        let c = cfg(4, 2);
        let g = UserGeometry { theta: 0.0, r: 10.0 };
        let b = steering_vector(&c, &g).unwrap();
        let d = c.spacing();
        for (i, delta) in [-1.5f64, -0.5, 0.5, 1.5].iter().enumerate() {
            assert_eq!(c.offset(i + 1), *delta);
            let rn = (100.0 + delta * delta * d * d).sqrt();
            let want = C64::from_polar(0.5, -c.wavenumber() * (rn - 10.0));
            assert!((b[i] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_rejects_nonpositive_distance() {
        let c = cfg(8, 2);
        assert!(steering_vector(&c, &UserGeometry { theta: 0.1, r: 0.0 }).is_err());
        assert!(steering_vector(&c, &UserGeometry { theta: 0.1, r: -3.0 }).is_err());
        // Collinear with an antenna: distance to it is zero.
        let d = c.spacing();
        let g = UserGeometry { theta: 1.0, r: 3.5 * d };
        assert!(steering_vector(&c, &g).is_err());
    }

    #[test]
    fn far_field_limit() {
        let c = cfg(64, 8);
        let theta = 0.3;
        let ff = far_field_steering(&c, theta);
        let err_at = |scale: f64| {
            let b = steering_vector(&c, &UserGeometry { theta, r: scale * c.wavelength() }).unwrap();
            b.iter().zip(&ff).map(|(a, f)| (a - f).norm()).fold(0.0, f64::max)
        };
        let errs: Vec<f64> = [1e3, 1e4, 1e5, 1e6].iter().map(|&s| err_at(s)).collect();
        assert!(errs[3] < 1e-3, "{errs:?}");
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn geometry_sampling() {
        assert_eq!(sample_geometry(42), sample_geometry(42));
        let mut rng = seed::rng(3);
        let draws: Vec<UserGeometry> = (0..100_000).map(|_| sample_geometry_with(&mut rng)).collect();
        assert!(draws.iter().all(|g| g.in_sampling_range()));
        let mean_r = draws.iter().map(|g| g.r).sum::<f64>() / draws.len() as f64;
        assert!((mean_r - 46.0).abs() < 1.0, "mean r = {mean_r}");
    }

    #[test]
    fn mask_expansion() {
        assert_eq!(expand_mask(&[1, 0], 2), vec![1, 1, 0, 0]);
        let c = cfg(64, 8);
        for s in 0..200 {
            let (us, u) = sample_vr_mask(&c, s);
            assert!(us.contains(&1));
            let pop = |v: &[u8]| v.iter().filter(|&&x| x == 1).count();
            assert_eq!(pop(&u), c.n_s() * pop(&us));
            for (i, chunk) in u.chunks(c.n_s()).enumerate() {
                assert!(chunk.iter().all(|&v| v == us[i]));
            }
        }
    }

    #[test]
    fn mask_marginal_conditioned_on_nonempty() {
        let c = cfg(64, 8);
        let mut rng = seed::rng(11);
        let trials = 100_000;
        let mut sums = vec![0usize; 8];
        for _ in 0..trials {
            let (us, _) = sample_vr_mask_with(&c, &mut rng);
            for (s, v) in sums.iter_mut().zip(us) {
                *s += v as usize;
            }
        }
        let want = 0.5 / (1.0 - 2f64.powi(-8));
        for s in sums {
            let mean = s as f64 / trials as f64;
            assert!((mean - want).abs() < 0.01, "{mean} vs {want}");
        }
    }

    #[test]
    fn channel_support_and_gain() {
        let c = cfg(64, 8);
        let g = UserGeometry { theta: 0.2, r: 30.0 };
        let ones = vec![1u8; 64];
        let full = channel_vector(&c, &g, &ones).unwrap();
        let expect = full.gamma.norm() / 8.0;
        assert!(full.h.iter().all(|v| (v.norm() - expect).abs() < 1e-15));

        let mut us = vec![1u8; 8];
        us[3] = 0;
        let u = expand_mask(&us, 8);
        let part = channel_vector(&c, &g, &u).unwrap();
        for (i, v) in part.h.iter().enumerate() {
            assert_eq!(*v == C64::new(0.0, 0.0), u[i] == 0);
        }
        assert!(channel_vector(&c, &g, &[0u8; 64]).is_err());
    }

    #[test]
    fn gain_scales_inversely_with_distance() {
        let c = cfg(64, 8);
        let ones = vec![1u8; 64];
        let near = channel_vector(&c, &UserGeometry { theta: 0.4, r: 4.0 }, &ones).unwrap();
        let far = channel_vector(&c, &UserGeometry { theta: 0.4, r: 88.0 }, &ones).unwrap();
        let n = |h: &[C64]| h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((n(&near.h) / n(&far.h) - 22.0).abs() < 1e-9);
    }

    #[test]
    fn dataset_is_order_independent() {
        let c = cfg(32, 4);
        let a = generate_dataset(&c, 20, 5, 1, Exec::Sequential).unwrap();
        let b = generate_dataset(&c, 20, 5, 1, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        // Sample i does not depend on how many samples precede or follow it.
        let short = generate_dataset(&c, 7, 5, 1, Exec::Sequential).unwrap();
        assert_eq!(&a[..7], &short[..]);
        assert!(generate_dataset(&c, 0, 5, 1, Exec::Sequential).is_err());
    }

    #[test]
    fn multipath_mask_is_union() {
        let c = cfg(32, 4);
        let s = generate_sample(&c, 3, 99).unwrap();
        for (i, v) in s.h.iter().enumerate() {
            if s.u[i] == 0 {
                assert_eq!(*v, C64::new(0.0, 0.0));
            }
        }
        assert_eq!(expand_mask(&s.u_sub, c.n_s()), s.u);
    }

    #[test]
    fn matches_frozen_steering_and_gain() {
        for case in crate::fixtures::cases("steering") {
            let c = ArrayConfig::new(case["n"].as_integer().unwrap() as usize, 4, 4, crate::fixtures::f(&case, "fc")).unwrap();
            let geo = UserGeometry { theta: crate::fixtures::f(&case, "theta"), r: crate::fixtures::f(&case, "r") };
            let b = steering_vector(&c, &geo).unwrap();
            for (got, want) in b.iter().zip(crate::fixtures::cs(&case, "b")) {
                assert!((got - want).norm() < 1e-9, "{got} vs {want}");
            }
            let g = crate::fixtures::fs(&case, "gamma");
            let want = C64::new(g[0], g[1]);
            assert!((path_gain(&c, geo.r) - want).norm() < 1e-9 * want.norm());
        }
    }
}
