//! Hybrid analog combining: constant-modulus combiners, antenna-side noise,
//! and SNR calibration.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::ArrayConfig;
use crate::error::{ensure_len, Error, Result};
use crate::linalg::{norm_sqr, CMatrix, C64};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombinerPolicy {
    /// A fresh combiner per sample, seeded by the sample index.
    #[default]
    PerSample,
    /// One combiner shared by every sample.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    /// Pilot slots.
    pub p: usize,
    pub snr_db: f64,
    #[serde(with = "crate::seed::toml_u64")]
    pub combiner_seed: u64,
    #[serde(default)]
    pub combiner_policy: CombinerPolicy,
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("pilot count P must be >= 1".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Ok(())
    }

    /// Seed of the combiner used for sample `index`.
    pub fn combiner_seed_for(&self, index: u64) -> u64 {
        match self.combiner_policy {
            CombinerPolicy::PerSample => seed::derive(self.combiner_seed, seed::stream::COMBINER, index),
            CombinerPolicy::Fixed => seed::derive(self.combiner_seed, seed::stream::COMBINER, u64::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    /// Stacked combiner, `(N_RF·P) × N`.
    pub a: CMatrix,
    /// Stacked observation.
    pub y: Vec<C64>,
    pub sigma2: f64,
}

pub fn make_combiner_seeded(cfg: &ArrayConfig, p: usize, seed_value: u64) -> CMatrix {
    let mut rng = seed::rng(seed_value);
    let rows = cfg.n_rf * p;
    let amp = 1.0 / (cfg.n as f64).sqrt();
    let data = (0..rows * cfg.n).map(|_| C64::from_polar(amp, rng.gen_range(0.0..2.0 * PI))).collect();
    CMatrix::from_rows(rows, cfg.n, data)
}

/// Combiner for `pcfg`; rows are `A_1` then `A_2`, … then `A_P`.
pub fn make_combiner(cfg: &ArrayConfig, pcfg: &PilotConfig) -> CMatrix {
    make_combiner_seeded(cfg, pcfg.p, pcfg.combiner_seed)
}

/// `y_p = A_p (h + n_p)` for every slot, with `n_p ~ CN(0, sigma2 I_N)`.
pub fn observe(h: &[C64], a: &CMatrix, n_rf: usize, sigma2: f64, noise_seed: u64) -> Result<PilotBlock> {
    ensure_len("channel", h.len(), a.cols)?;
    if !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be >= 0, got {sigma2}")));
    }
    if n_rf == 0 || !a.rows.is_multiple_of(n_rf) {
        return Err(Error::Shape(format!("{} combiner rows not a multiple of N_RF = {n_rf}", a.rows)));
    }
    let n = a.cols;
    let slots = a.rows / n_rf;
    let mut y = a.mul_vec(h);
    if sigma2 > 0.0 {
        let mut rng = seed::rng(noise_seed);
        let sd = (sigma2 / 2.0).sqrt();
        let mut noise = vec![C64::new(0.0, 0.0); n];
        for p in 0..slots {
            for v in noise.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v = C64::new(sd * re, sd * im);
            }
            for r in p * n_rf..(p + 1) * n_rf {
                let row = a.row(r);
                let mut acc = C64::new(0.0, 0.0);
                for (c, v) in row.iter().zip(&noise) {
                    acc += c * v;
                }
                y[r] += acc;
            }
        }
    }
    Ok(PilotBlock { a: a.clone(), y, sigma2 })
}

/// Mean received signal power per combined output, `‖A h‖² / (N_RF·P)`.
pub fn signal_power(h: &[C64], a: &CMatrix) -> f64 {
    norm_sqr(&a.mul_vec(h)) / a.rows as f64
}

pub fn sigma2_for_snr(h: &[C64], a: &CMatrix, snr_db: f64) -> Result<f64> {
    ensure_len("channel", h.len(), a.cols)?;
    let ps = signal_power(h, a);
    if !(ps > 0.0) {
        return Err(Error::Degenerate("zero received signal power".into()));
    }
    Ok(ps / 10f64.powf(snr_db / 10.0))
}
