//! Graph feedback network on the user–antenna star graph.
//!
//! Node 0 is the user, nodes `1..=N` are antennas. The only edges are
//! user–antenna links, switched on when the antenna energy exceeds a learned
//! threshold `ζ`. Training uses the relaxation `sigmoid((e_n − ζ)/τ)` so that
//! `ζ` receives gradients; evaluation uses the hard indicator.

use serde::{Deserialize, Serialize};

use crate::dun::sigmoid;
use crate::error::{Error, Result};
use crate::linalg::C64;

pub const FEATURES: usize = 4;

pub type Row = [f64; FEATURES];
/// Row-major 4×4 weight matrix.
pub type Mat4 = [f64; FEATURES * FEATURES];

pub const IDENTITY4: Mat4 = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];

/// `(N+1) × 4` feature matrix; row 0 is the user node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub rows: Vec<Row>,
}

impl NodeFeatures {
    pub fn antennas(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rows[1..].iter().map(|r| r[2]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub w_gcn: Vec<Mat4>,
    pub w_out: Row,
    pub zeta: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VrMask {
    pub u: Vec<f64>,
    pub u_hard: Vec<u8>,
}

impl VrMask {
    pub fn from_soft(u: Vec<f64>) -> Self {
        let u_hard = u.iter().map(|&v| (v >= 0.5) as u8).collect();
        Self { u, u_hard }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }
}

/// Dense square real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// Star graph given by its user–antenna edge weights `g_1..g_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StarGraph {
    pub edges: Vec<f64>,
}

impl StarGraph {
    pub fn to_dense(&self) -> Dense {
        let mut g = Dense::zeros(self.edges.len() + 1);
        for (i, &w) in self.edges.iter().enumerate() {
            g.set(0, i + 1, w);
            g.set(i + 1, 0, w);
        }
        g
    }
}

pub fn build_node_features(h_dun: &[C64]) -> Result<NodeFeatures> {
    let n = h_dun.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 antennas for position features, got {n}")));
    }
    let mut rows = Vec::with_capacity(n + 1);
    rows.push([0.0; FEATURES]);
    let denom = (n - 1) as f64;
    for (i, h) in h_dun.iter().enumerate() {
        rows.push([h.re, h.im, h.norm(), i as f64 / denom]);
    }
    Ok(NodeFeatures { rows })
}

/// Soft and hard user–antenna adjacency.
pub fn build_adjacency(features: &NodeFeatures, zeta: f64, tau: f64) -> (StarGraph, StarGraph) {
    let e = features.energies();
    (StarGraph { edges: soft_edges(&e, zeta, tau) }, StarGraph { edges: hard_edges(&e, zeta) })
}

pub fn soft_edges(e: &[f64], zeta: f64, tau: f64) -> Vec<f64> {
    e.iter().map(|&en| sigmoid((en - zeta) / tau)).collect()
}

pub fn hard_edges(e: &[f64], zeta: f64) -> Vec<f64> {
    e.iter().map(|&en| if en > zeta { 1.0 } else { 0.0 }).collect()
}

/// Mean antenna energy, the starting value of the edge threshold.
pub fn init_threshold(features: &NodeFeatures) -> f64 {
    let e = features.energies();
    if e.is_empty() {
        return 0.0;
    }
    e.iter().sum::<f64>() / e.len() as f64
}

/// `D^{-1/2}(G + I)D^{-1/2}` with `D` the row sums of `G + I`.
pub fn normalize_adjacency(g: &Dense) -> Result<Dense> {
    let n = g.n;
    let mut d = vec![0.0; n];
    for (i, di) in d.iter_mut().enumerate() {
        *di = 1.0 + (0..n).map(|j| g.get(i, j)).sum::<f64>();
        if !(*di > 0.0) {
            return Err(Error::Domain(format!("node {i} has non-positive degree {di}")));
        }
    }
    let mut out = Dense::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let a = g.get(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, a / (d[i] * d[j]).sqrt());
        }
    }
    Ok(out)
}

fn mul_w(x: &Row, w: &Mat4) -> Row {
    let mut out = [0.0; FEATURES];
    for (k, xk) in x.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += xk * w[k * FEATURES + j];
        }
    }
    out
}

/// `X_l = σ(Ḡ X_{l−1} W_l)` with `σ = hidden` on all but the last layer,
/// which is linear.
pub fn gcn_propagate_with(x: &NodeFeatures, gbar: &Dense, weights: &[Mat4], hidden: Activation) -> Result<NodeFeatures> {
    let n = x.rows.len();
    if gbar.n != n {
        return Err(Error::Shape(format!("adjacency is {}×{}, features have {n} rows", gbar.n, gbar.n)));
    }
    let mut cur = x.rows.clone();
    for (l, w) in weights.iter().enumerate() {
        let act = if l + 1 == weights.len() { Activation::Linear } else { hidden };
        let mut next = vec![[0.0; FEATURES]; n];
        for i in 0..n {
            let mut agg = [0.0; FEATURES];
            for (j, row) in cur.iter().enumerate() {
                let a = gbar.get(i, j);
                if a != 0.0 {
                    for f in 0..FEATURES {
                        agg[f] += a * row[f];
                    }
                }
            }
            next[i] = mul_w(&agg, w).map(|v| act.apply(v));
        }
        cur = next;
    }
    Ok(NodeFeatures { rows: cur })
}

pub fn gcn_propagate(x: &NodeFeatures, gbar: &Dense, params: &GcnParams) -> Result<NodeFeatures> {
    gcn_propagate_with(x, gbar, &params.w_gcn, Activation::Tanh)
}

/// Soft mask from the readout, user node dropped.
pub fn vr_head(x_l: &NodeFeatures, w_out: &Row) -> VrMask {
    VrMask::from_soft(x_l.rows[1..].iter().map(|r| sigmoid(dot(r, w_out))).collect())
}

/// First two feature columns of every antenna row as a complex channel.
pub fn extract_channel(x_l: &NodeFeatures) -> Vec<C64> {
    x_l.rows[1..].iter().map(|r| C64::new(r[0], r[1])).collect()
}

#[inline]
fn dot(a: &Row, b: &Row) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized star adjacency in factored form:
/// `Ḡ_00 = a0`, `Ḡ_nn = a_n`, `Ḡ_0n = Ḡ_n0 = c_n`.
#[derive(Debug, Clone)]
pub(crate) struct StarNorm {
    pub g: Vec<f64>,
    pub d0: f64,
    pub a0: f64,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl StarNorm {
    pub fn new(g: Vec<f64>) -> Self {
        let d0 = 1.0 + g.iter().sum::<f64>();
        let a: Vec<f64> = g.iter().map(|gn| 1.0 / (1.0 + gn)).collect();
        let c = g.iter().zip(&a).map(|(gn, an)| gn * (an / d0).sqrt()).collect();
        Self { d0, a0: 1.0 / d0, a, c, g }
    }

    pub fn apply(&self, x: &[Row]) -> Vec<Row> {
        let mut out = vec![[0.0; FEATURES]; x.len()];
        let x0 = x[0];
        let mut y0 = x0.map(|v| v * self.a0);
        for n in 1..x.len() {
            let (an, cn) = (self.a[n - 1], self.c[n - 1]);
            for f in 0..FEATURES {
                y0[f] += cn * x[n][f];
                out[n][f] = an * x[n][f] + cn * x0[f];
            }
        }
        out[0] = y0;
        out
    }

    /// Returns `dX` and accumulates `dL/dg_n` into `dg`.
    pub fn backward(&self, x: &[Row], dy: &[Row], dg: &mut [f64]) -> Vec<Row> {
        let mut dx = vec![[0.0; FEATURES]; x.len()];
        let x0 = x[0];
        let dy0 = dy[0];
        let mut dx0 = dy0.map(|v| v * self.a0);
        let da0 = dot(&dy0, &x0);
        let mut dd0 = 0.0;
        for n in 1..x.len() {
            let i = n - 1;
            let (an, cn, gn) = (self.a[i], self.c[i], self.g[i]);
            for f in 0..FEATURES {
                dx0[f] += cn * dy[n][f];
                dx[n][f] = cn * dy0[f] + an * dy[n][f];
            }
            let dc = dot(&dy0, &x[n]) + dot(&dy[n], &x0);
            let da = dot(&dy[n], &x[n]);
            let dn = 1.0 + gn;
            // a_n = 1/D_n, c_n = g_n (D0 D_n)^{-1/2}
            let mut d_dn = -da / (dn * dn);
            d_dn += dc * gn * (-0.5) / (dn * dn.sqrt() * self.d0.sqrt());
            dd0 += dc * gn * (-0.5) / (self.d0 * self.d0.sqrt() * dn.sqrt());
            dg[i] += dc / (self.d0 * dn).sqrt() + d_dn;
        }
        dd0 += -da0 / (self.d0 * self.d0);
        for d in dg.iter_mut() {
            *d += dd0;
        }
        dx[0] = dx0;
        dx
    }
}

/// Intermediates of one star-graph GCN pass.
#[derive(Debug, Clone)]
pub(crate) struct GcnTape {
    pub norm: StarNorm,
    /// Per layer: input rows and pre-activation.
    pub inputs: Vec<Vec<Row>>,
    pub pre: Vec<Vec<Row>>,
    pub aggregated: Vec<Vec<Row>>,
    pub out: Vec<Row>,
    pub u: Vec<f64>,
}

/// Forward pass on the star graph. `soft` selects the relaxed edges.
pub(crate) fn star_forward(h_dun: &[C64], weights: &[Mat4], w_out: &Row, zeta: f64, tau: f64, soft: bool) -> GcnTape {
    let feats = build_node_features(h_dun).expect("N >= 2 checked by the network");
    let e = feats.energies();
    let g = if soft { soft_edges(&e, zeta, tau) } else { hard_edges(&e, zeta) };
    let norm = StarNorm::new(g);
    let mut cur = feats.rows;
    let mut inputs = Vec::with_capacity(weights.len());
    let mut pre = Vec::with_capacity(weights.len());
    let mut aggregated = Vec::with_capacity(weights.len());
    for (l, w) in weights.iter().enumerate() {
        let agg = norm.apply(&cur);
        let z: Vec<Row> = agg.iter().map(|r| mul_w(r, w)).collect();
        let last = l + 1 == weights.len();
        let next: Vec<Row> = if last { z.clone() } else { z.iter().map(|r| r.map(f64::tanh)).collect() };
        inputs.push(std::mem::replace(&mut cur, next));
        pre.push(z);
        aggregated.push(agg);
    }
    let u = cur[1..].iter().map(|r| sigmoid(dot(r, w_out))).collect();
    GcnTape { norm, inputs, pre, aggregated, out: cur, u }
}

pub(crate) struct GcnGrads {
    pub d_weights: Vec<Mat4>,
    pub d_w_out: Row,
    pub d_zeta: f64,
}

/// Reverse pass. `d_u` is `dL/du_n`, `d_hgcn` is the gradient w.r.t. the
/// extracted channel. Accumulates the gradient w.r.t. `h_dun` into `d_hdun`.
pub(crate) fn star_backward(
    tape: &GcnTape,
    h_dun: &[C64],
    weights: &[Mat4],
    w_out: &Row,
    tau: f64,
    d_u: &[f64],
    d_hgcn: &[C64],
    d_hdun: &mut [C64],
) -> GcnGrads {
    let n = h_dun.len();
    let mut d_w_out = [0.0; FEATURES];
    let mut dx = vec![[0.0; FEATURES]; n + 1];
    for i in 0..n {
        let row = &tape.out[i + 1];
        let dl = d_u[i] * tape.u[i] * (1.0 - tape.u[i]);
        for f in 0..FEATURES {
            d_w_out[f] += dl * row[f];
            dx[i + 1][f] += dl * w_out[f];
        }
        dx[i + 1][0] += d_hgcn[i].re;
        dx[i + 1][1] += d_hgcn[i].im;
    }
    let mut d_weights = vec![[0.0; FEATURES * FEATURES]; weights.len()];
    let mut dg = vec![0.0; n];
    for l in (0..weights.len()).rev() {
        let last = l + 1 == weights.len();
        let dz: Vec<Row> = if last {
            dx
        } else {
            dx.iter()
                .zip(&tape.pre[l])
                .map(|(d, z)| {
                    let mut o = [0.0; FEATURES];
                    for f in 0..FEATURES {
                        let t = z[f].tanh();
                        o[f] = d[f] * (1.0 - t * t);
                    }
                    o
                })
                .collect()
        };
        let w = &weights[l];
        let agg = &tape.aggregated[l];
        let mut dagg = vec![[0.0; FEATURES]; n + 1];
        for r in 0..=n {
            for k in 0..FEATURES {
                let mut s = 0.0;
                for j in 0..FEATURES {
                    d_weights[l][k * FEATURES + j] += agg[r][k] * dz[r][j];
                    s += dz[r][j] * w[k * FEATURES + j];
                }
                dagg[r][k] = s;
            }
        }
        dx = tape.norm.backward(&tape.inputs[l], &dagg, &mut dg);
    }
    // Edge weights g_n = sigmoid((e_n − ζ)/τ); hard edges carry no gradient.
    let mut d_zeta = 0.0;
    let mut de = vec![0.0; n];
    for i in 0..n {
        let g = tape.norm.g[i];
        let ds = dg[i] * g * (1.0 - g) / tau;
        de[i] += ds;
        d_zeta -= ds;
    }
    for i in 0..n {
        let h = h_dun[i];
        let mag = h.norm();
        let de_total = dx[i + 1][2] + de[i];
        let (mut dre, mut dim) = (dx[i + 1][0], dx[i + 1][1]);
        if mag > 0.0 {
            dre += de_total * h.re / mag;
            dim += de_total * h.im / mag;
        }
        d_hdun[i] += C64::new(dre, dim);
    }
    GcnGrads { d_weights, d_w_out, d_zeta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn rand_h(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn features() {
        let f = build_node_features(&[C64::new(0.0, 0.0); 5]).unwrap();
        assert_eq!(f.rows.len(), 6);
        for (i, r) in f.rows.iter().enumerate().skip(1) {
            assert_eq!(&r[..3], &[0.0, 0.0, 0.0]);
            assert_eq!(r[3], (i - 1) as f64 / 4.0);
        }
        let f = build_node_features(&[C64::new(3.0, 4.0), C64::new(0.0, 1.0)]).unwrap();
        assert_eq!(f.rows[1][2], 5.0);
        assert_eq!((f.rows[1][3], f.rows[2][3]), (0.0, 1.0));
        assert_eq!(f.rows[0], [0.0; 4]);
        assert!(build_node_features(&[C64::new(1.0, 0.0)]).is_err());
        assert_eq!(build_node_features(&vec![C64::new(1.0, 0.0); 256]).unwrap().rows.len(), 257);
    }

    #[test]
    fn position_feature_breaks_permutation_symmetry() {
        let h = [C64::new(1.0, 0.0), C64::new(0.0, 2.0), C64::new(-1.0, 1.0)];
        let p = [h[2], h[0], h[1]];
        let a = build_node_features(&h).unwrap();
        let b = build_node_features(&p).unwrap();
        // Same multiset of (Re, Im, e) but positions now belong to other antennas.
        assert_ne!(a.rows[1], b.rows[2]);
        assert_eq!(&a.rows[1][..3], &b.rows[2][..3]);
    }

    #[test]
    fn adjacency_rules() {
        let f = NodeFeatures { rows: vec![[0.0; 4], [0.0, 0.0, 0.5, 0.0], [0.0, 0.0, 1.5, 1.0]] };
        let (soft, hard) = build_adjacency(&f, 1.0, 0.1);
        assert_eq!(hard.edges, vec![0.0, 1.0]);
        assert!(soft.edges[0] < 0.01 && soft.edges[1] > 0.99);
        let (soft, _) = build_adjacency(&f, -1e9, 0.1);
        assert!(soft.edges.iter().all(|&g| g == 1.0));
        let d = hard.to_dense();
        assert_eq!((d.get(0, 2), d.get(2, 0), d.get(1, 2), d.get(0, 0)), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn soft_edges_converge_to_hard() {
        let mut rng = seed::rng(8);
        for _ in 0..100 {
            let e: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..2.0)).collect();
            let zeta = 1.0;
            let hard = hard_edges(&e, zeta);
            let tau = 1e-4;
            let soft = soft_edges(&e, zeta, tau);
            for i in 0..e.len() {
                if (e[i] - zeta).abs() > 10.0 * tau {
                    assert!((soft[i] - hard[i]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn threshold_init() {
        let f = build_node_features(&[C64::new(1.0, 0.0), C64::new(0.0, 3.0)]).unwrap();
        assert_eq!(init_threshold(&f), 2.0);
        assert_eq!(init_threshold(&build_node_features(&[C64::new(0.0, 0.0); 4]).unwrap()), 0.0);
    }

    #[test]
    fn normalization_cases() {
        let id = normalize_adjacency(&Dense::zeros(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(id.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let star = StarGraph { edges: vec![1.0, 1.0] }.to_dense();
        let gb = normalize_adjacency(&star).unwrap();
        assert!((gb.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((gb.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((gb.get(1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(gb.get(1, 2), 0.0);
    }

    #[test]
    fn identity_propagation() {
        let mut rng = seed::rng(1);
        let h = rand_h(&mut rng, 6);
        let x = build_node_features(&h).unwrap();
        let gbar = normalize_adjacency(&Dense::zeros(7)).unwrap();
        let out = gcn_propagate_with(&x, &gbar, &[IDENTITY4, IDENTITY4], Activation::Linear).unwrap();
        assert_eq!(out, x);
        assert_eq!(extract_channel(&out), h);
        let zero = NodeFeatures { rows: vec![[0.0; 4]; 7] };
        let p = GcnParams { w_gcn: vec![[0.3; 16]; 2], w_out: [1.0; 4], zeta: 0.0, tau: 1.0 };
        assert!(gcn_propagate(&zero, &gbar, &p).unwrap().rows.iter().all(|r| *r == [0.0; 4]));
        assert!(gcn_propagate(&zero, &Dense::zeros(3), &p).is_err());
    }

    #[test]
    fn single_layer_three_node_by_hand() {
        let x = NodeFeatures { rows: vec![[0.0; 4], [1.0, 2.0, 3.0, 0.0], [-1.0, 0.5, 2.0, 1.0]] };
        let gbar = normalize_adjacency(&StarGraph { edges: vec![1.0, 1.0] }.to_dense()).unwrap();
        let mut w = [0.0; 16];
        for (i, v) in w.iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.7;
        }
        let out = gcn_propagate_with(&x, &gbar, &[w], Activation::Tanh).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..3 {
                    for f in 0..4 {
                        s += gbar.get(i, k) * x.rows[k][f] * w[f * 4 + j];
                    }
                }
                assert!((out.rows[i][j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_and_extraction() {
        let x = NodeFeatures { rows: vec![[9.0; 4], [0.3, -0.4, 1.0, 0.0], [1.0, 2.0, 3.0, 1.0]] };
        let m = vr_head(&x, &[0.0; 4]);
        assert_eq!(m.u, vec![0.5, 0.5]);
        assert_eq!(m.u_hard, vec![1, 1]);
        let m = vr_head(&x, &[0.0, 0.0, 1000.0, 0.0]);
        assert!(m.u[0] > 1.0 - 1e-12);
        let m = vr_head(&x, &[0.0, 0.0, -1000.0, 0.0]);
        assert!(m.u[1] < 1e-12);
        assert_eq!(m.u.len(), 2);
        assert_eq!(extract_channel(&x)[0], C64::new(0.3, -0.4));
        assert!(extract_channel(&NodeFeatures { rows: vec![[0.0; 4]; 3] }).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn star_forward_matches_dense() {
        let mut rng = seed::rng(4);
        let h = rand_h(&mut rng, 9);
        let w: Vec<Mat4> = (0..3).map(|_| std::array::from_fn(|_| rng.gen_range(-0.8..0.8))).collect();
        let w_out: Row = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let zeta = 0.8;
        for soft in [true, false] {
            let tape = star_forward(&h, &w, &w_out, zeta, 0.2, soft);
            let feats = build_node_features(&h).unwrap();
            let (gs, gh) = build_adjacency(&feats, zeta, 0.2);
            let g = if soft { gs } else { gh };
            let gbar = normalize_adjacency(&g.to_dense()).unwrap();
            let dense = gcn_propagate_with(&feats, &gbar, &w, Activation::Tanh).unwrap();
            for (a, b) in tape.out.iter().zip(&dense.rows) {
                for f in 0..4 {
                    assert!((a[f] - b[f]).abs() < 1e-12);
                }
            }
            let head = vr_head(&dense, &w_out);
            for (a, b) in tape.u.iter().zip(&head.u) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn star_backward_matches_finite_differences() {
        let mut rng = seed::rng(5);
        let n = 7;
        let h = rand_h(&mut rng, n);
        let mut w: Vec<Mat4> = (0..2).map(|_| std::array::from_fn(|_| rng.gen_range(-0.8..0.8))).collect();
        let mut w_out: Row = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let mut zeta = 0.9;
        let tau = 0.3;
        let cu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ch = rand_h(&mut rng, n);
        let loss = |h: &[C64], w: &[Mat4], w_out: &Row, zeta: f64| -> f64 {
            let t = star_forward(h, w, w_out, zeta, tau, true);
            let hg: Vec<C64> = t.out[1..].iter().map(|r| C64::new(r[0], r[1])).collect();
            t.u.iter().zip(&cu).map(|(a, b)| a * b).sum::<f64>() + hg.iter().zip(&ch).map(|(a, b)| (b.conj() * a).re).sum::<f64>()
        };
        let tape = star_forward(&h, &w, &w_out, zeta, tau, true);
        let mut dh = vec![C64::new(0.0, 0.0); n];
        let g = star_backward(&tape, &h, &w, &w_out, tau, &cu, &ch, &mut dh);
        let eps = 1e-6;
        let tol = |fd: f64, an: f64| (fd - an).abs() < 1e-6 * (1.0 + fd.abs());
        for i in 0..n {
            let mut hp = h.clone();
            hp[i].re += eps;
            let mut hm = h.clone();
            hm[i].re -= eps;
            let fd = (loss(&hp, &w, &w_out, zeta) - loss(&hm, &w, &w_out, zeta)) / (2.0 * eps);
            assert!(tol(fd, dh[i].re), "re {i}: {fd} vs {}", dh[i].re);
            let mut hp = h.clone();
            hp[i].im += eps;
            let mut hm = h.clone();
            hm[i].im -= eps;
            let fd = (loss(&hp, &w, &w_out, zeta) - loss(&hm, &w, &w_out, zeta)) / (2.0 * eps);
            assert!(tol(fd, dh[i].im), "im {i}: {fd} vs {}", dh[i].im);
        }
        for l in 0..w.len() {
            for k in 0..16 {
                let orig = w[l][k];
                w[l][k] = orig + eps;
                let fp = loss(&h, &w, &w_out, zeta);
                w[l][k] = orig - eps;
                let fm = loss(&h, &w, &w_out, zeta);
                w[l][k] = orig;
                assert!(tol((fp - fm) / (2.0 * eps), g.d_weights[l][k]));
            }
        }
        for k in 0..4 {
            let orig = w_out[k];
            w_out[k] = orig + eps;
            let fp = loss(&h, &w, &w_out, zeta);
            w_out[k] = orig - eps;
            let fm = loss(&h, &w, &w_out, zeta);
            w_out[k] = orig;
            assert!(tol((fp - fm) / (2.0 * eps), g.d_w_out[k]));
        }
        let orig = zeta;
        zeta = orig + eps;
        let fp = loss(&h, &w, &w_out, zeta);
        zeta = orig - eps;
        let fm = loss(&h, &w, &w_out, zeta);
        let fd = (fp - fm) / (2.0 * eps);
        assert!(tol(fd, g.d_zeta), "{fd} vs {}", g.d_zeta);
        assert!(g.d_zeta.abs() > 1e-8);
    }

    #[test]
    fn matches_frozen_normalized_adjacency() {
        use crate::fixtures::{cases, fs};
        for case in cases("adjacency") {
            let g = normalize_adjacency(&StarGraph { edges: fs(&case, "edges") }.to_dense()).unwrap();
            for (got, want) in g.data.iter().zip(fs(&case, "gbar")) {
                assert!((got - want).abs() < 1e-14);
            }
            assert!(fs(&case, "radius")[0] <= 1.0 + 1e-12);
        }
    }
}
