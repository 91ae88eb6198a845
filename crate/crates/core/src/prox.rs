//! Learned proximal step: a two-layer convolutional prior whose input is
//! reweighted per antenna by a gate conditioned on the inferred VR mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{relu_backward, relu_inplace, Conv1d};
use crate::dun::sigmoid;
use crate::error::{ensure_len, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResBlock {
    pub conv_a: Conv1d,
    pub conv_b: Conv1d,
}

/// Feature conv → two residual blocks → feature conv, over the channel
/// stack `[Re(h), Im(h), u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub conv_in: Conv1d,
    pub blocks: [ResBlock; 2],
    pub conv_out: Conv1d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxParams {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    /// `None` bypasses the gate (`m ≡ 1`), as in the plain unfolded baseline.
    pub gate: Option<GateParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub m: Vec<f64>,
}

/// Gate input channel order. Frozen: checkpoints depend on it.
pub const GATE_INPUTS: [&str; 3] = ["re", "im", "u"];

impl GateParams {
    pub fn zeros(width: usize, k: usize) -> Self {
        let block = || ResBlock { conv_a: Conv1d::zeros(width, width, k), conv_b: Conv1d::zeros(width, width, k) };
        Self { conv_in: Conv1d::zeros(3, width, k), blocks: [block(), block()], conv_out: Conv1d::zeros(width, 1, k) }
    }

    /// Random init; the output bias starts at `open_bias` so the gate begins
    /// mostly open.
    pub fn init<R: Rng>(width: usize, k: usize, open_bias: f64, rng: &mut R) -> Self {
        let block =
            |rng: &mut R| ResBlock { conv_a: Conv1d::init_fan_in(width, width, k, rng), conv_b: Conv1d::init_fan_in(width, width, k, rng) };
        let conv_in = Conv1d::init_fan_in(3, width, k, rng);
        let blocks = [block(rng), block(rng)];
        let mut conv_out = Conv1d::init_fan_in(width, 1, k, rng);
        conv_out.b[0] = open_bias;
        Self { conv_in, blocks, conv_out }
    }

    pub fn convs(&self) -> [&Conv1d; 6] {
        [&self.conv_in, &self.blocks[0].conv_a, &self.blocks[0].conv_b, &self.blocks[1].conv_a, &self.blocks[1].conv_b, &self.conv_out]
    }

    pub fn convs_mut(&mut self) -> [&mut Conv1d; 6] {
        let [b0, b1] = &mut self.blocks;
        [&mut self.conv_in, &mut b0.conv_a, &mut b0.conv_b, &mut b1.conv_a, &mut b1.conv_b, &mut self.conv_out]
    }
}

impl ProxParams {
    pub fn zeros(width: usize, k: usize, gate_width: usize, gate_k: usize) -> Self {
        Self { conv1: Conv1d::zeros(2, width, k), conv2: Conv1d::zeros(width, 2, k), gate: Some(GateParams::zeros(gate_width, gate_k)) }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            gate: self.gate.as_ref().map(|g| GateParams::zeros(g.conv_in.cout, g.conv_in.k)),
        }
    }
}

fn stack_complex(h: &[C64], scale: Option<&[f64]>) -> Vec<f64> {
    let n = h.len();
    let mut x = vec![0.0; 2 * n];
    for (i, v) in h.iter().enumerate() {
        let s = scale.map_or(1.0, |m| m[i]);
        x[i] = v.re * s;
        x[n + i] = v.im * s;
    }
    x
}

#[derive(Debug, Clone)]
pub(crate) struct GateTape {
    input: Vec<f64>,
    pre_in: Vec<f64>,
    /// Per block: block input, pre-activation of `conv_a`.
    block_in: Vec<Vec<f64>>,
    block_pre: Vec<Vec<f64>>,
    last: Vec<f64>,
    pub m: Vec<f64>,
}

pub(crate) fn gate_forward_tape(h: &[C64], u: &[f64], g: &GateParams) -> GateTape {
    let n = h.len();
    let mut input = stack_complex(h, None);
    input.extend_from_slice(u);
    let pre_in = g.conv_in.forward(&input, n);
    let mut f = pre_in.clone();
    relu_inplace(&mut f);
    let mut block_in = Vec::with_capacity(2);
    let mut block_pre = Vec::with_capacity(2);
    for b in &g.blocks {
        let pre = b.conv_a.forward(&f, n);
        let mut a = pre.clone();
        relu_inplace(&mut a);
        let delta = b.conv_b.forward(&a, n);
        let next: Vec<f64> = f.iter().zip(&delta).map(|(x, d)| x + d).collect();
        block_in.push(std::mem::replace(&mut f, next));
        block_pre.push(pre);
    }
    let logits = g.conv_out.forward(&f, n);
    let m = logits.iter().map(|&v| sigmoid(v)).collect();
    GateTape { input, pre_in, block_in, block_pre, last: f, m }
}

/// Returns `(dL/dh, dL/du)` of the gate inputs.
pub(crate) fn gate_backward(tape: &GateTape, g: &GateParams, d_m: &[f64], grad: &mut GateParams) -> (Vec<C64>, Vec<f64>) {
    let n = d_m.len();
    let d_logits: Vec<f64> = d_m.iter().zip(&tape.m).map(|(d, m)| d * m * (1.0 - m)).collect();
    let mut df = g.conv_out.backward(&tape.last, n, &d_logits, &mut grad.conv_out);
    for bi in (0..2).rev() {
        let b = &g.blocks[bi];
        let pre = &tape.block_pre[bi];
        let mut a = pre.clone();
        relu_inplace(&mut a);
        let mut da = b.conv_b.backward(&a, n, &df, &mut grad.blocks[bi].conv_b);
        relu_backward(pre, &mut da);
        let dx = b.conv_a.backward(&tape.block_in[bi], n, &da, &mut grad.blocks[bi].conv_a);
        for (d, x) in df.iter_mut().zip(&dx) {
            *d += x;
        }
    }
    relu_backward(&tape.pre_in, &mut df);
    let din = g.conv_in.backward(&tape.input, n, &df, &mut grad.conv_in);
    let dh = (0..n).map(|i| C64::new(din[i], din[n + i])).collect();
    (dh, din[2 * n..].to_vec())
}

fn check(h: &[C64], u: &[f64]) -> Result<()> {
    ensure_len("gate mask input", u.len(), h.len())
}

/// Gate values; all ones when the gate is bypassed.
pub fn gate_forward(h_gcn: &[C64], u: &[f64], params: &ProxParams) -> Result<GateOutput> {
    check(h_gcn, u)?;
    let m = match &params.gate {
        Some(g) => gate_forward_tape(h_gcn, u, g).m,
        None => vec![1.0; h_gcn.len()],
    };
    Ok(GateOutput { m })
}

#[derive(Debug, Clone)]
pub(crate) struct ProxTape {
    pub gate: Option<GateTape>,
    xin: Vec<f64>,
    pre1: Vec<f64>,
    pub z: Vec<C64>,
}

/// `Conv₂(ReLU(Conv₁(h ⊙ m)))` for a given gate `m` (or `m ≡ 1`).
pub(crate) fn rescnn_tape(h: &[C64], m: Option<&[f64]>, conv1: &Conv1d, conv2: &Conv1d) -> ProxTape {
    let n = h.len();
    let xin = stack_complex(h, m);
    let pre1 = conv1.forward(&xin, n);
    let mut r = pre1.clone();
    relu_inplace(&mut r);
    let out = conv2.forward(&r, n);
    let z = (0..n).map(|i| C64::new(out[i], out[n + i])).collect();
    ProxTape { gate: None, xin, pre1, z }
}

pub(crate) fn prox_forward_tape(h: &[C64], u: &[f64], p: &ProxParams) -> ProxTape {
    match &p.gate {
        Some(g) => {
            let gate = gate_forward_tape(h, u, g);
            let mut t = rescnn_tape(h, Some(&gate.m), &p.conv1, &p.conv2);
            t.gate = Some(gate);
            t
        }
        None => rescnn_tape(h, None, &p.conv1, &p.conv2),
    }
}

/// Reverse pass. Returns `(dL/dh_gcn, dL/du)`; `dL/du` is empty when the
/// gate was bypassed.
pub(crate) fn prox_backward(tape: &ProxTape, h: &[C64], p: &ProxParams, d_z: &[C64], grad: &mut ProxParams) -> (Vec<C64>, Vec<f64>) {
    let n = h.len();
    let dout = stack_complex(d_z, None);
    let mut r = tape.pre1.clone();
    relu_inplace(&mut r);
    let mut dr = p.conv2.backward(&r, n, &dout, &mut grad.conv2);
    relu_backward(&tape.pre1, &mut dr);
    let dxin = p.conv1.backward(&tape.xin, n, &dr, &mut grad.conv1);
    match &tape.gate {
        None => ((0..n).map(|i| C64::new(dxin[i], dxin[n + i])).collect(), Vec::new()),
        Some(gt) => {
            let mut dh: Vec<C64> = (0..n).map(|i| C64::new(dxin[i], dxin[n + i]) * gt.m[i]).collect();
            let dm: Vec<f64> = (0..n).map(|i| dxin[i] * h[i].re + dxin[n + i] * h[i].im).collect();
            let (gp, gg) = match (&p.gate, &mut grad.gate) {
                (Some(gp), Some(gg)) => (gp, gg),
                _ => unreachable!("gate tape implies gate parameters"),
            };
            let (dh_gate, du) = gate_backward(gt, gp, &dm, gg);
            for (a, b) in dh.iter_mut().zip(&dh_gate) {
                *a += b;
            }
            (dh, du)
        }
    }
}

pub fn prox_forward(h_gcn: &[C64], u: &[f64], params: &ProxParams) -> Result<Vec<C64>> {
    check(h_gcn, u)?;
    Ok(prox_forward_tape(h_gcn, u, params).z)
}

/// Prior step with an externally supplied gate.
pub fn prox_forward_with_gate(h_gcn: &[C64], m: &[f64], params: &ProxParams) -> Result<Vec<C64>> {
    ensure_len("gate", m.len(), h_gcn.len())?;
    Ok(rescnn_tape(h_gcn, Some(m), &params.conv1, &params.conv2).z)
}

/// The ungated prior, as used by the plain unfolded baseline.
pub fn rescnn_forward(h: &[C64], params: &ProxParams) -> Vec<C64> {
    rescnn_tape(h, None, &params.conv1, &params.conv2).z
}
