//! 1-D convolution along the antenna axis with zero "same" padding.
//!
//! Activations are channel-major: `x[c * len + n]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `[cout][cin][k]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel length must be odd");
        Self { cin, cout, k, w: vec![0.0; cout * cin * k], b: vec![0.0; cout] }
    }

    /// He-style normal init scaled by `gain`, zero bias.
    pub fn init<R: Rng>(cin: usize, cout: usize, k: usize, gain: f64, rng: &mut R) -> Self {
        let mut c = Self::zeros(cin, cout, k);
        let sd = gain * (2.0 / (cin * k) as f64).sqrt();
        for w in c.w.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sd * z;
        }
        c
    }

    /// Normal init with variance `1/(3·cin·k)`, the variance of the usual
    /// uniform fan-in scheme.
    pub fn init_fan_in<R: Rng>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        Self::init(cin, cout, k, (1.0f64 / 6.0).sqrt(), rng)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cin, self.cout, self.k)
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, j: usize) -> usize {
        (o * self.cin + i) * self.k + j
    }

    pub fn forward(&self, x: &[f64], len: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cin * len);
        let pad = self.k / 2;
        let mut out = vec![0.0; self.cout * len];
        for o in 0..self.cout {
            let orow = &mut out[o * len..(o + 1) * len];
            orow.iter_mut().for_each(|v| *v = self.b[o]);
            for i in 0..self.cin {
                let xrow = &x[i * len..(i + 1) * len];
                for j in 0..self.k {
                    let w = self.w[self.widx(o, i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    // out[n] += w * x[n + j - pad]
                    let (lo, hi) = shifted_range(len, j, pad);
                    let src = &xrow[(lo + j - pad)..(hi + j - pad)];
                    for (dst, s) in orow[lo..hi].iter_mut().zip(src) {
                        *dst += w * s;
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], len: usize, dout: &[f64], grad: &mut Conv1d) -> Vec<f64> {
        let pad = self.k / 2;
        let mut dx = vec![0.0; self.cin * len];
        for o in 0..self.cout {
            let drow = &dout[o * len..(o + 1) * len];
            grad.b[o] += drow.iter().sum::<f64>();
            for i in 0..self.cin {
                let xrow = &x[i * len..(i + 1) * len];
                let dxrow = &mut dx[i * len..(i + 1) * len];
                for j in 0..self.k {
                    let idx = self.widx(o, i, j);
                    let (lo, hi) = shifted_range(len, j, pad);
                    let s0 = lo + j - pad;
                    let s1 = hi + j - pad;
                    let mut acc = 0.0;
                    for (d, s) in drow[lo..hi].iter().zip(&xrow[s0..s1]) {
                        acc += d * s;
                    }
                    grad.w[idx] += acc;
                    let w = self.w[idx];
                    if w != 0.0 {
                        for (dxv, d) in dxrow[s0..s1].iter_mut().zip(&drow[lo..hi]) {
                            *dxv += w * d;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Output index range `[lo, hi)` for which `n + j - pad` is inside `[0, len)`.
#[inline]
fn shifted_range(len: usize, j: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (len + pad).saturating_sub(j).min(len);
    (lo, hi.max(lo))
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `d` wherever the pre-activation was not positive.
pub fn relu_backward(pre: &[f64], d: &mut [f64]) {
    for (dv, p) in d.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *dv = 0.0;
        }
    }
}
