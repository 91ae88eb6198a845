//! Unfolded gradient layer for the VR-weighted least-squares subproblem.
//!
//! The h-subproblem of one unfolded layer is
//! `½‖y − A h‖² + (μ/2)‖W(u)^{1/2}(h − z)‖²` with diagonal
//! `w_i² = 1 + β(1 − u_i)`. Each layer takes one gradient step on it with a
//! learned step size. Out-of-VR antennas (`u_i ≈ 0`) are pulled strongly
//! towards the learned prior `z`; in-VR antennas are left to the data term.
//!
//! Gradients of real functions of complex vectors use the convention
//! `g = ∂L/∂Re(h) + j ∂L/∂Im(h)` throughout the crate. The bracket in
//! [`dun_step`] is `½ g` in this convention, i.e. exactly the update as
//! written, and the objective is consistent with it.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DunLayerParams {
    pub gamma: f64,
    /// Unconstrained penalty; the effective `μ = softplus(mu_raw)`.
    pub mu_raw: f64,
    pub beta: f64,
}

impl DunLayerParams {
    pub fn mu(&self) -> f64 {
        softplus(self.mu_raw)
    }

    /// Parameters with a given positive penalty.
    pub fn with_mu(gamma: f64, mu: f64, beta: f64) -> Self {
        Self { gamma, mu_raw: inv_softplus(mu), beta }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inv_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "softplus is positive");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-layer intermediates, kept for inspection and trace dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIterates {
    pub h_dun: Vec<C64>,
    pub h_gcn: Vec<C64>,
    pub u: Vec<f64>,
    pub z: Vec<C64>,
}

fn check_mask(u: &[f64]) -> Result<()> {
    if let Some(v) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("VR mask entry {v} outside [0, 1]")));
    }
    Ok(())
}

/// Diagonal of `W(u)^{1/2}`: `√(1 + β(1 − u_i))`.
pub fn weight_matrix_diag(u: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_mask(u)?;
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("beta must be >= 0, got {beta}")));
    }
    Ok(u.iter().map(|ui| (1.0 + beta * (1.0 - ui)).sqrt()).collect())
}

fn check_shapes(h: &[C64], y: &[C64], a: &CMatrix, z: &[C64], u: Option<&[f64]>) -> Result<()> {
    ensure_len("h", h.len(), a.cols)?;
    ensure_len("y", y.len(), a.rows)?;
    ensure_len("z", z.len(), a.cols)?;
    if let Some(u) = u {
        ensure_len("u", u.len(), a.cols)?;
    }
    Ok(())
}

pub fn vr_weighted_objective(h: &[C64], y: &[C64], a: &CMatrix, z: &[C64], u: &[f64], mu: f64, beta: f64) -> Result<f64> {
    check_shapes(h, y, a, z, Some(u))?;
    let w = weight_matrix_diag(u, beta)?;
    let ah = a.mul_vec(h);
    let data: f64 = ah.iter().zip(y).map(|(p, q)| (q - p).norm_sqr()).sum();
    let prior: f64 = h.iter().zip(z).zip(&w).map(|((hi, zi), wi)| (wi * (hi - zi)).norm_sqr()).sum();
    Ok(0.5 * data + 0.5 * mu * prior)
}

/// `Aᴴ(A h − y) + μ W(u)(h − z)`; `w2` holds the diagonal of `W(u)`.
pub(crate) fn bracket(h: &[C64], y: &[C64], a: &CMatrix, z: &[C64], w2: &[f64], mu: f64, out: &mut [C64]) {
    let mut r = a.mul_vec(h);
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri -= yi;
    }
    a.mul_vec_h_into(&r, out);
    for i in 0..h.len() {
        out[i] += (h[i] - z[i]) * (mu * w2[i]);
    }
}

/// Squared weights `1 + β(1 − u_i)`, the diagonal of `W(u)`.
pub(crate) fn weights_squared(u: &[f64], beta: f64) -> Vec<f64> {
    u.iter().map(|ui| 1.0 + beta * (1.0 - ui)).collect()
}

/// The gradient term of one unfolded update, exposed for verification.
pub fn dun_bracket(h: &[C64], y: &[C64], a: &CMatrix, z: &[C64], u: &[f64], mu: f64, beta: f64) -> Result<Vec<C64>> {
    check_shapes(h, y, a, z, Some(u))?;
    check_mask(u)?;
    let mut out = vec![C64::new(0.0, 0.0); h.len()];
    bracket(h, y, a, z, &weights_squared(u, beta), mu, &mut out);
    Ok(out)
}

pub fn dun_step(h: &[C64], y: &[C64], a: &CMatrix, z: &[C64], u: &[f64], params: &DunLayerParams) -> Result<Vec<C64>> {
    let g = dun_bracket(h, y, a, z, u, params.mu(), params.beta)?;
    Ok(h.iter().zip(&g).map(|(hi, gi)| hi - gi * params.gamma).collect())
}

/// Unweighted (`W = I`) update of the plain unfolded baseline.
pub fn mdisr_step(h: &[C64], y: &[C64], a: &CMatrix, z: &[C64], params: &DunLayerParams) -> Result<Vec<C64>> {
    check_shapes(h, y, a, z, None)?;
    let ones = vec![1.0; h.len()];
    let mut g = vec![C64::new(0.0, 0.0); h.len()];
    bracket(h, y, a, z, &ones, params.mu(), &mut g);
    Ok(h.iter().zip(&g).map(|(hi, gi)| hi - gi * params.gamma).collect())
}

/// Matched-filter start `h0 = Aᴴ y`; the first mask is all-ones and `z0 = h0`.
pub fn init_estimate(y: &[C64], a: &CMatrix) -> Result<LayerIterates> {
    ensure_len("y", y.len(), a.rows)?;
    let h0 = a.mul_vec_h(y);
    Ok(LayerIterates { h_gcn: h0.clone(), z: h0.clone(), u: vec![1.0; a.cols], h_dun: h0 })
}

/// Reverse pass of one update `h' = h − γ·bracket`.
///
/// Given `g_next` (gradient w.r.t. `h'`), accumulates into `g_h` and `g_z`
/// and returns `(dL/dγ, dL/dμ, dL/du_i)`.
pub(crate) struct StepGrads {
    pub d_gamma: f64,
    pub d_mu: f64,
    pub d_u: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dun_step_backward(
    h: &[C64],
    z: &[C64],
    a: &CMatrix,
    w2: &[f64],
    bracket_val: &[C64],
    gamma: f64,
    mu: f64,
    beta: f64,
    g_next: &[C64],
    g_h: &mut [C64],
    g_z: &mut [C64],
) -> StepGrads {
    let n = h.len();
    let ag = a.mul_vec(g_next);
    let aag = a.mul_vec_h(&ag);
    let mut d_gamma = 0.0;
    let mut d_mu = 0.0;
    let mut d_u = vec![0.0; n];
    for i in 0..n {
        let g = g_next[i];
        let diff = h[i] - z[i];
        d_gamma -= (g.conj() * bracket_val[i]).re;
        let gd = (g.conj() * diff).re;
        d_mu -= gamma * w2[i] * gd;
        d_u[i] = gamma * mu * beta * gd;
        g_h[i] += g - (aag[i] + g * (mu * w2[i])) * gamma;
        g_z[i] += g * (gamma * mu * w2[i]);
    }
    StepGrads { d_gamma, d_mu, d_u }
}
