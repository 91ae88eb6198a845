//! NMSE, SDR, the joint training loss and small summary statistics.

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{norm_sqr, C64};

/// Reported value of an exact (zero-error) estimate.
pub const NMSE_FLOOR_DB: f64 = -120.0;

const BCE_EPS: f64 = 1e-12;

/// `‖ĥ − h‖² / ‖h‖²` for one sample.
pub fn nmse(h_hat: &[C64], h: &[C64]) -> Result<f64> {
    ensure_len("estimate", h_hat.len(), h.len())?;
    let den = norm_sqr(h);
    if !(den > 0.0) {
        return Err(Error::Degenerate("true channel is zero, NMSE undefined".into()));
    }
    let num: f64 = h_hat.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

/// Mean of per-sample ratios.
pub fn nmse_batch(pairs: &[(&[C64], &[C64])]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut acc = 0.0;
    for (a, b) in pairs {
        acc += nmse(a, b)?;
    }
    Ok(acc / pairs.len() as f64)
}

pub fn to_db(x: f64) -> f64 {
    if x <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * x.log10()).max(NMSE_FLOOR_DB)
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `1 − d_H(û, u)/len`.
pub fn sdr(u_hat: &[u8], u: &[u8]) -> Result<f64> {
    ensure_len("mask", u_hat.len(), u.len())?;
    if u.is_empty() {
        return Err(Error::Degenerate("empty mask".into()));
    }
    let ham = u_hat.iter().zip(u).filter(|(a, b)| (**a != 0) != (**b != 0)).count();
    Ok(1.0 - ham as f64 / u.len() as f64)
}

/// Hard decision at 0.5, ties to 1.
pub fn harden(u: &[f64]) -> Vec<u8> {
    u.iter().map(|&v| (v >= 0.5) as u8).collect()
}

/// Mean binary cross-entropy and its gradient w.r.t. `u`.
pub fn bce(u: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure_len("mask", u.len(), target.len())?;
    let n = u.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(u.len());
    for (&p, &t) in u.iter().zip(target) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push((p - t) / (p * (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub nmse: f64,
    pub bce: Option<f64>,
    pub sdr: Option<f64>,
    /// `∂L/∂Re ĥ + j ∂L/∂Im ĥ`.
    pub d_h: Vec<C64>,
    pub d_u: Option<Vec<f64>>,
}

/// `(1 − α)·NMSE + α·BCE`. Without a soft mask only the NMSE term remains.
pub fn joint_loss(h_hat: &[C64], h: &[C64], u_soft: Option<&[f64]>, u_true: &[u8], alpha: f64) -> Result<LossOutput> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let e = nmse(h_hat, h)?;
    let den = norm_sqr(h);
    let d_h_scaled = |w: f64| h_hat.iter().zip(h).map(|(a, b)| (a - b) * (2.0 * w / den)).collect();
    let Some(u) = u_soft else {
        return Ok(LossOutput { loss: e, nmse: e, bce: None, sdr: None, d_h: d_h_scaled(1.0), d_u: None });
    };
    let target: Vec<f64> = u_true.iter().map(|&v| v as f64).collect();
    let (b, mut gu) = bce(u, &target)?;
    gu.iter_mut().for_each(|g| *g *= alpha);
    let s = sdr(&harden(u), u_true)?;
    Ok(LossOutput { loss: (1.0 - alpha) * e + alpha * b, nmse: e, bce: Some(b), sdr: Some(s), d_h: d_h_scaled(1.0 - alpha), d_u: Some(gu) })
}

/// Mean and 95% normal-approximation half-width.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, 1.96 * (var / n as f64).sqrt())
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn smooth(xs: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
