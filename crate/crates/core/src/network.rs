//! The full T-layer estimator and its plain unfolded ablation.
//!
//! Layer `t` takes the running estimate `h`, runs the graph network on it to
//! get a soft mask `u` and a refined channel, feeds both to the gated prior to
//! get `z`, and finishes with the VR-weighted gradient step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conv::Conv1d;
use crate::dun::{bracket, dun_step_backward, sigmoid, weights_squared, DunLayerParams, LayerIterates};
use crate::error::{ensure_len, Error, Result};
use crate::gcn::{star_backward, star_forward, GcnTape, Mat4, Row, FEATURES, IDENTITY4};
use crate::linalg::{CMatrix, C64};
use crate::prox::{prox_backward, prox_forward_tape, GateParams, ProxParams, ProxTape};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Graph feedback, VR-weighted penalty and gated prior.
    Full,
    /// `β = 0`, no graph network, ungated prior, `u ≡ 1`.
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub variant: Variant,
    /// Unfolded layers `T`.
    pub layers: usize,
    /// Propagation layers of each graph network.
    pub gcn_layers: usize,
    /// Hidden channels and kernel length of the prior.
    pub width: usize,
    pub kernel: usize,
    pub gate_width: usize,
    pub gate_kernel: usize,
    pub beta: f64,
    /// Edge temperature as a fraction of the initial threshold.
    pub tau_scale: f64,
    pub share_zeta: bool,
    pub share_gcn: bool,
    pub init_gamma: f64,
    pub init_mu: f64,
    pub gate_open_bias: f64,
    /// Diagonal of the initial propagation weights.
    pub gcn_init_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            layers: 5,
            gcn_layers: 2,
            width: 64,
            kernel: 15,
            gate_width: 8,
            gate_kernel: 3,
            beta: 10.0,
            tau_scale: 0.1,
            share_zeta: false,
            share_gcn: false,
            init_gamma: 0.3,
            init_mu: 0.1,
            gate_open_bias: 2.0,
            gcn_init_scale: 1.4,
        }
    }
}

impl ArchConfig {
    /// The ablation with the same depth and prior size.
    pub fn ablation(&self) -> Self {
        Self { variant: Variant::Ablation, beta: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.gcn_layers == 0 {
            return bad("gcn_layers must be at least 1");
        }
        if self.width < 2 || self.gate_width == 0 {
            return bad("width must be at least 2 and gate_width at least 1");
        }
        if self.kernel.is_multiple_of(2) || self.gate_kernel.is_multiple_of(2) {
            return bad("kernel lengths must be odd");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be finite and non-negative");
        }
        if self.variant == Variant::Ablation && self.beta != 0.0 {
            return bad("the ablation variant requires beta = 0");
        }
        if !(self.tau_scale > 0.0) {
            return bad("tau_scale must be positive");
        }
        if !(self.init_mu > 0.0) {
            return bad("init_mu must be positive");
        }
        Ok(())
    }

    fn zeta_slots(&self) -> usize {
        match (self.variant, self.share_zeta) {
            (Variant::Ablation, _) => 0,
            (_, true) => 1,
            (_, false) => self.layers,
        }
    }

    fn gcn_slots(&self) -> usize {
        match (self.variant, self.share_gcn) {
            (Variant::Ablation, _) => 0,
            (_, true) => 1,
            (_, false) => self.layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub w_gcn: Vec<Mat4>,
    pub w_out: Row,
}

/// Every trainable parameter plus the fixed temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub arch: ArchConfig,
    pub antennas: usize,
    pub dun: Vec<DunLayerParams>,
    /// One threshold per layer, or a single shared one.
    pub zeta: Vec<f64>,
    pub gcn: Vec<GcnLayer>,
    pub prox: Vec<ProxParams>,
    pub tau: f64,
}

/// Pruning and optimizer treatment of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Scalar,
    Threshold,
    Weight,
    Bias,
    Readout,
}

impl Role {
    pub fn prunable(self) -> bool {
        self == Role::Weight
    }
}

/// Parameter group used by the census.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Module {
    Dun,
    Gcn,
    Prior,
    Gate,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Dun, Module::Gcn, Module::Prior, Module::Gate];

    pub fn name(self) -> &'static str {
        match self {
            Module::Dun => "dun",
            Module::Gcn => "gcn",
            Module::Prior => "prior",
            Module::Gate => "gate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub role: Role,
    pub module: Module,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Soft edges, tape recorded.
    Train,
    /// Hard edges.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub h: Vec<C64>,
    /// Soft mask of the last layer; `None` for the ablation.
    pub u: Option<Vec<f64>>,
}

pub(crate) struct LayerTape {
    h_in: Vec<C64>,
    gcn: Option<GcnTape>,
    prox_in: Vec<C64>,
    prox: ProxTape,
    u: Vec<f64>,
    w2: Vec<f64>,
    bracket: Vec<C64>,
}

pub struct Tape {
    layers: Vec<LayerTape>,
}

fn visit_conv(prefix: &str, module: Module, c: &Conv1d, f: &mut dyn FnMut(&str, Role, Module, &[f64])) {
    f(&format!("{prefix}.w"), Role::Weight, module, &c.w);
    f(&format!("{prefix}.b"), Role::Bias, module, &c.b);
}

fn visit_conv_mut(prefix: &str, module: Module, c: &mut Conv1d, f: &mut dyn FnMut(&str, Role, Module, &mut [f64])) {
    f(&format!("{prefix}.w"), Role::Weight, module, &mut c.w);
    f(&format!("{prefix}.b"), Role::Bias, module, &mut c.b);
}

const GATE_CONVS: [&str; 6] = ["conv_in", "block0.conv_a", "block0.conv_b", "block1.conv_a", "block1.conv_b", "conv_out"];

impl NetworkState {
    /// Fresh parameters. Thresholds start at zero until [`Self::calibrate`].
    pub fn init(arch: &ArchConfig, antennas: usize, seed_value: u64) -> Result<Self> {
        arch.validate()?;
        if antennas < 2 {
            return Err(Error::Config(format!("need at least 2 antennas, got {antennas}")));
        }
        let mut rng = seed::rng(seed::derive(seed_value, seed::stream::INIT, 0));
        let full = arch.variant == Variant::Full;
        let beta = if full { arch.beta } else { 0.0 };
        let dun = (0..arch.layers).map(|_| DunLayerParams::with_mu(arch.init_gamma, arch.init_mu, beta)).collect();
        let gcn = (0..arch.gcn_slots())
            .map(|_| {
                let w_gcn = (0..arch.gcn_layers)
                    .map(|_| {
                        let mut w = IDENTITY4.map(|v| v * arch.gcn_init_scale);
                        for v in w.iter_mut() {
                            let z: f64 = rng.sample(StandardNormal);
                            *v += 0.01 * z;
                        }
                        w
                    })
                    .collect();
                let w_out = [0.0; FEATURES].map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal));
                GcnLayer { w_gcn, w_out }
            })
            .collect();
        let prox = (0..arch.layers)
            .map(|_| ProxParams {
                conv1: Conv1d::init_fan_in(2, arch.width, arch.kernel, &mut rng),
                conv2: Conv1d::init_fan_in(arch.width, 2, arch.kernel, &mut rng),
                gate: full.then(|| GateParams::init(arch.gate_width, arch.gate_kernel, arch.gate_open_bias, &mut rng)),
            })
            .collect();
        Ok(Self { arch: arch.clone(), antennas, dun, zeta: vec![0.0; arch.zeta_slots()], gcn, prox, tau: 1.0 })
    }

    /// Sets every threshold to `zeta0` and the temperature to
    /// `tau_scale · zeta0`.
    pub fn calibrate(&mut self, zeta0: f64) -> Result<()> {
        if !(zeta0 > 0.0) || !zeta0.is_finite() {
            return Err(Error::Degenerate(format!("initial threshold must be positive, got {zeta0}")));
        }
        self.zeta.iter_mut().for_each(|z| *z = zeta0);
        self.tau = self.arch.tau_scale * zeta0;
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.arch.variant == Variant::Full
    }

    fn zeta_at(&self, t: usize) -> usize {
        if self.arch.share_zeta {
            0
        } else {
            t
        }
    }

    fn gcn_at(&self, t: usize) -> usize {
        if self.arch.share_gcn {
            0
        } else {
            t
        }
    }

    /// Same shapes, all zeros: the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut(&mut |_, _, _, v| v.fill(0.0));
        out.dun.iter_mut().for_each(|d| d.beta = self.dun[0].beta);
        out
    }

    /// Visits every trainable tensor in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, Role, Module, &[f64])) {
        for (t, d) in self.dun.iter().enumerate() {
            f(&format!("layer{t}.gamma"), Role::Scalar, Module::Dun, std::slice::from_ref(&d.gamma));
            f(&format!("layer{t}.mu_raw"), Role::Scalar, Module::Dun, std::slice::from_ref(&d.mu_raw));
        }
        for (i, z) in self.zeta.iter().enumerate() {
            f(&format!("zeta{i}"), Role::Threshold, Module::Gcn, std::slice::from_ref(z));
        }
        for (i, g) in self.gcn.iter().enumerate() {
            for (l, w) in g.w_gcn.iter().enumerate() {
                f(&format!("gcn{i}.w{l}"), Role::Weight, Module::Gcn, w);
            }
            f(&format!("gcn{i}.w_out"), Role::Readout, Module::Gcn, &g.w_out);
        }
        for (t, p) in self.prox.iter().enumerate() {
            visit_conv(&format!("layer{t}.prior.conv1"), Module::Prior, &p.conv1, f);
            visit_conv(&format!("layer{t}.prior.conv2"), Module::Prior, &p.conv2, f);
            if let Some(g) = &p.gate {
                for (name, c) in GATE_CONVS.iter().zip(g.convs()) {
                    visit_conv(&format!("layer{t}.gate.{name}"), Module::Gate, c, f);
                }
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Role, Module, &mut [f64])) {
        for (t, d) in self.dun.iter_mut().enumerate() {
            f(&format!("layer{t}.gamma"), Role::Scalar, Module::Dun, std::slice::from_mut(&mut d.gamma));
            f(&format!("layer{t}.mu_raw"), Role::Scalar, Module::Dun, std::slice::from_mut(&mut d.mu_raw));
        }
        for (i, z) in self.zeta.iter_mut().enumerate() {
            f(&format!("zeta{i}"), Role::Threshold, Module::Gcn, std::slice::from_mut(z));
        }
        for (i, g) in self.gcn.iter_mut().enumerate() {
            for (l, w) in g.w_gcn.iter_mut().enumerate() {
                f(&format!("gcn{i}.w{l}"), Role::Weight, Module::Gcn, w);
            }
            f(&format!("gcn{i}.w_out"), Role::Readout, Module::Gcn, &mut g.w_out);
        }
        for (t, p) in self.prox.iter_mut().enumerate() {
            visit_conv_mut(&format!("layer{t}.prior.conv1"), Module::Prior, &mut p.conv1, f);
            visit_conv_mut(&format!("layer{t}.prior.conv2"), Module::Prior, &mut p.conv2, f);
            if let Some(g) = &mut p.gate {
                for (name, c) in GATE_CONVS.iter().zip(g.convs_mut()) {
                    visit_conv_mut(&format!("layer{t}.gate.{name}"), Module::Gate, c, f);
                }
            }
        }
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        self.visit(&mut |name, role, module, v| out.push(ParamInfo { name: name.to_string(), role, module, len: v.len() }));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, _, v| n += v.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, _, v| out.extend_from_slice(v));
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_len("flat parameter vector", flat.len(), self.num_params())?;
        let mut off = 0;
        self.visit_mut(&mut |_, _, _, v| {
            v.copy_from_slice(&flat[off..off + v.len()]);
            off += v.len();
        });
        Ok(())
    }

    /// Adds `other` into `self` elementwise (same architecture).
    pub fn accumulate(&mut self, other: &NetworkState) {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut(&mut |_, _, _, v| {
            for (a, b) in v.iter_mut().zip(&flat[off..]) {
                *a += b;
            }
            off += v.len();
        });
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = self.tau.is_finite();
        self.visit(&mut |_, _, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    fn check_obs(&self, y: &[C64], a: &CMatrix) -> Result<()> {
        ensure_len("combiner columns", a.cols, self.antennas)?;
        ensure_len("observation", y.len(), a.rows)
    }

    /// Forward pass; the tape is recorded in [`Mode::Train`] only.
    pub fn forward(&self, y: &[C64], a: &CMatrix, mode: Mode) -> Result<(Estimate, Option<Tape>)> {
        self.check_obs(y, a)?;
        let record = mode == Mode::Train;
        let mut h = a.mul_vec_h(y);
        let mut tapes = Vec::new();
        let mut u_last = Vec::new();
        for t in 0..self.arch.layers {
            let (h_next, lt) = self.layer_forward(t, y, a, &h, record);
            h = h_next;
            if t + 1 == self.arch.layers {
                u_last = lt.u.clone();
            }
            if record {
                tapes.push(lt);
            }
        }
        let u = self.is_full().then_some(u_last);
        Ok((Estimate { h, u }, record.then_some(Tape { layers: tapes })))
    }

    pub fn predict(&self, y: &[C64], a: &CMatrix) -> Result<Estimate> {
        Ok(self.forward(y, a, Mode::Eval)?.0)
    }

    /// Per-layer iterates for inspection.
    pub fn trace(&self, y: &[C64], a: &CMatrix, mode: Mode) -> Result<Vec<LayerIterates>> {
        self.check_obs(y, a)?;
        let mut h = a.mul_vec_h(y);
        let mut out = Vec::with_capacity(self.arch.layers);
        for t in 0..self.arch.layers {
            let (h_next, lt) = self.layer_forward(t, y, a, &h, mode == Mode::Train);
            h = h_next;
            out.push(LayerIterates { h_dun: h.clone(), h_gcn: lt.prox_in, u: lt.u, z: lt.prox.z });
        }
        Ok(out)
    }

    fn layer_forward(&self, t: usize, y: &[C64], a: &CMatrix, h: &[C64], soft: bool) -> (Vec<C64>, LayerTape) {
        let n = h.len();
        let d = &self.dun[t];
        let (gcn, prox_in, u) = if self.is_full() {
            let g = &self.gcn[self.gcn_at(t)];
            let tape = star_forward(h, &g.w_gcn, &g.w_out, self.zeta[self.zeta_at(t)], self.tau, soft);
            let hg: Vec<C64> = tape.out[1..].iter().map(|r| C64::new(r[0], r[1])).collect();
            let u = tape.u.clone();
            (Some(tape), hg, u)
        } else {
            (None, h.to_vec(), vec![1.0; n])
        };
        let prox = prox_forward_tape(&prox_in, &u, &self.prox[t]);
        let w2 = weights_squared(&u, d.beta);
        let mut br = vec![C64::new(0.0, 0.0); n];
        bracket(h, y, a, &prox.z, &w2, d.mu(), &mut br);
        let h_next = h.iter().zip(&br).map(|(hi, bi)| hi - bi * d.gamma).collect();
        (h_next, LayerTape { h_in: h.to_vec(), gcn, prox_in, prox, u, w2, bracket: br })
    }

    /// Reverse pass. `d_h` is `∂L/∂Re ĥ + j ∂L/∂Im ĥ`, `d_u` the gradient
    /// w.r.t. the final soft mask (ignored for the ablation). Parameter
    /// gradients are added into `grad`.
    pub fn backward(&self, tape: &Tape, a: &CMatrix, d_h: &[C64], d_u: Option<&[f64]>, grad: &mut NetworkState) {
        let n = self.antennas;
        let mut g_next = d_h.to_vec();
        let last = tape.layers.len().saturating_sub(1);
        for (t, lt) in tape.layers.iter().enumerate().rev() {
            let d = &self.dun[t];
            let mu = d.mu();
            let mut g_h = vec![C64::new(0.0, 0.0); n];
            let mut g_z = vec![C64::new(0.0, 0.0); n];
            let sg = dun_step_backward(&lt.h_in, &lt.prox.z, a, &lt.w2, &lt.bracket, d.gamma, mu, d.beta, &g_next, &mut g_h, &mut g_z);
            grad.dun[t].gamma += sg.d_gamma;
            grad.dun[t].mu_raw += sg.d_mu * sigmoid(d.mu_raw);
            let (dh_prox, du_gate) = prox_backward(&lt.prox, &lt.prox_in, &self.prox[t], &g_z, &mut grad.prox[t]);
            match &lt.gcn {
                Some(gt) => {
                    let mut du = sg.d_u;
                    for (a, b) in du.iter_mut().zip(&du_gate) {
                        *a += b;
                    }
                    if t == last {
                        if let Some(extra) = d_u {
                            for (a, b) in du.iter_mut().zip(extra) {
                                *a += b;
                            }
                        }
                    }
                    let gi = self.gcn_at(t);
                    let g = &self.gcn[gi];
                    let gg = star_backward(gt, &lt.h_in, &g.w_gcn, &g.w_out, self.tau, &du, &dh_prox, &mut g_h);
                    let slot = &mut grad.gcn[gi];
                    for (acc, dw) in slot.w_gcn.iter_mut().zip(&gg.d_weights) {
                        for (x, y) in acc.iter_mut().zip(dw) {
                            *x += y;
                        }
                    }
                    for (x, y) in slot.w_out.iter_mut().zip(&gg.d_w_out) {
                        *x += y;
                    }
                    grad.zeta[self.zeta_at(t)] += gg.d_zeta;
                }
                None => {
                    for (a, b) in g_h.iter_mut().zip(&dh_prox) {
                        *a += b;
                    }
                }
            }
            g_next = g_h;
        }
    }
}
