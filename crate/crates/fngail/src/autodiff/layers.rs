//! Layer building blocks over the tape: parameter creation + forward
//! wiring. Layers register tensors in a ParameterStore once; `bind` puts
//! them on a tape so a rollout or batch can reuse the nodes across steps.

use super::store::{ParamId, ParameterStore};
use super::{NodeId, Tape};
use crate::rng::Rng;
use crate::Scalar;
use rand::Rng as _;

/// Standard normals via Box-Muller, computed in f64 for init quality.
fn gaussians(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = std::f64::consts::TAU * u2;
        out.push(r * th.cos());
        out.push(r * th.sin());
    }
    out.truncate(n);
    out
}

/// U(-sqrt(1/fan_in), sqrt(1/fan_in)) — the usual dense-layer default.
pub fn scaled_uniform(fan_in: usize, len: usize, rng: &mut Rng) -> Vec<Scalar> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound) as Scalar).collect()
}

/// Random h x h orthogonal matrix (row-major) via modified Gram-Schmidt
/// on a gaussian matrix. Keeps recurrent dynamics well-conditioned.
pub fn orthogonal(h: usize, rng: &mut Rng) -> Vec<Scalar> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(h);
    while rows.len() < h {
        let mut row = gaussians(h, rng);
        for prev in &rows {
            let d: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (r, p) in row.iter_mut().zip(prev) {
                *r -= d * p;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // degenerate draw; resample
        }
        row.iter_mut().for_each(|v| *v /= norm);
        rows.push(row);
    }
    rows.into_iter().flatten().map(|v| v as Scalar).collect()
}

/// Recurrent weight [h, gates*h] with an independent orthogonal block per
/// gate (columns [k*h, (k+1)*h)).
fn gate_orthogonal(h: usize, gates: usize, rng: &mut Rng) -> Vec<Scalar> {
    let mut w = vec![0.0; h * gates * h];
    for k in 0..gates {
        let block = orthogonal(h, rng);
        for r in 0..h {
            for c in 0..h {
                w[r * gates * h + k * h + c] = block[r * h + c];
            }
        }
    }
    w
}

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

pub struct BoundLinear {
    w: NodeId,
    b: NodeId,
}

impl Linear {
    pub fn new(store: &mut ParameterStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: store.add(&format!("{name}.w"), &[in_dim, out_dim], scaled_uniform(in_dim, in_dim * out_dim, rng)),
            b: store.add(&format!("{name}.b"), &[out_dim], vec![0.0; out_dim]),
        }
    }

    /// All-zero weights: output heads start at exactly zero so fresh
    /// policies are uniform and fresh discriminators sit at 0.5.
    pub fn new_zeroed(store: &mut ParameterStore, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            w: store.add(&format!("{name}.w"), &[in_dim, out_dim], vec![0.0; in_dim * out_dim]),
            b: store.add(&format!("{name}.b"), &[out_dim], vec![0.0; out_dim]),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundLinear {
        BoundLinear { w: tape.param(store, self.w), b: tape.param(store, self.b) }
    }
}

impl BoundLinear {
    pub fn fwd(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let h = tape.matmul(x, self.w);
        tape.add_bias(h, self.b)
    }
}

pub struct Embedding {
    pub table: ParamId,
}

pub struct BoundEmbedding {
    table: NodeId,
}

impl Embedding {
    pub fn new(store: &mut ParameterStore, name: &str, vocab: usize, dim: usize, rng: &mut Rng) -> Embedding {
        Embedding { table: store.add(&format!("{name}.table"), &[vocab, dim], scaled_uniform(dim, vocab * dim, rng)) }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundEmbedding {
        BoundEmbedding { table: tape.param(store, self.table) }
    }
}

impl BoundEmbedding {
    pub fn fwd(&self, tape: &mut Tape, ids: &[usize]) -> NodeId {
        tape.gather_rows(self.table, ids)
    }
}

pub struct Conv3x3 {
    pub w: ParamId,
    pub b: ParamId,
}

pub struct BoundConv3x3 {
    w: NodeId,
    b: NodeId,
}

impl Conv3x3 {
    pub fn new(store: &mut ParameterStore, name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Conv3x3 {
        Conv3x3 {
            w: store.add(&format!("{name}.w"), &[9 * cin, cout], scaled_uniform(9 * cin, 9 * cin * cout, rng)),
            b: store.add(&format!("{name}.b"), &[cout], vec![0.0; cout]),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundConv3x3 {
        BoundConv3x3 { w: tape.param(store, self.w), b: tape.param(store, self.b) }
    }
}

impl BoundConv3x3 {
    pub fn fwd(&self, tape: &mut Tape, x: NodeId, h: usize, w: usize) -> NodeId {
        tape.conv3x3(x, self.w, self.b, h, w)
    }
}

/// GRU cell, torch-style gating with separate input/hidden biases:
///   r = sig(Wi_r x + bi_r + Wh_r h + bh_r)
///   z = sig(Wi_z x + bi_z + Wh_z h + bh_z)
///   n = tanh(Wi_n x + bi_n + r * (Wh_n h + bh_n))
///   h' = n + z * (h - n)
pub struct GruCell {
    pub wi: ParamId,
    pub wh: ParamId,
    pub bi: ParamId,
    pub bh: ParamId,
    pub hidden: usize,
}

pub struct BoundGru {
    wi: NodeId,
    wh: NodeId,
    bi: NodeId,
    bh: NodeId,
    hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParameterStore, name: &str, in_dim: usize, hidden: usize, rng: &mut Rng) -> GruCell {
        GruCell {
            wi: store.add(&format!("{name}.wi"), &[in_dim, 3 * hidden], scaled_uniform(in_dim, in_dim * 3 * hidden, rng)),
            wh: store.add(&format!("{name}.wh"), &[hidden, 3 * hidden], gate_orthogonal(hidden, 3, rng)),
            bi: store.add(&format!("{name}.bi"), &[3 * hidden], vec![0.0; 3 * hidden]),
            bh: store.add(&format!("{name}.bh"), &[3 * hidden], vec![0.0; 3 * hidden]),
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundGru {
        BoundGru {
            wi: tape.param(store, self.wi),
            wh: tape.param(store, self.wh),
            bi: tape.param(store, self.bi),
            bh: tape.param(store, self.bh),
            hidden: self.hidden,
        }
    }
}

impl BoundGru {
    pub fn step(&self, tape: &mut Tape, x: NodeId, h: NodeId) -> NodeId {
        let hd = self.hidden;
        let gi = tape.matmul(x, self.wi);
        let gi = tape.add_bias(gi, self.bi);
        let gh = tape.matmul(h, self.wh);
        let gh = tape.add_bias(gh, self.bh);
        let gi_r = tape.slice_cols(gi, 0, hd);
        let gi_z = tape.slice_cols(gi, hd, hd);
        let gi_n = tape.slice_cols(gi, 2 * hd, hd);
        let gh_r = tape.slice_cols(gh, 0, hd);
        let gh_z = tape.slice_cols(gh, hd, hd);
        let gh_n = tape.slice_cols(gh, 2 * hd, hd);
        let r = tape.add(gi_r, gh_r);
        let r = tape.sigmoid(r);
        let z = tape.add(gi_z, gh_z);
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, gh_n);
        let n = tape.add(gi_n, rn);
        let n = tape.tanh(n);
        let hmn = tape.sub(h, n);
        let zh = tape.mul(z, hmn);
        tape.add(n, zh)
    }
}

/// LSTM cell with one combined gate transform (order i, f, g, o) and a
/// single bias vector.
pub struct LstmCell {
    pub wi: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

pub struct BoundLstm {
    wi: NodeId,
    wh: NodeId,
    b: NodeId,
    hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParameterStore, name: &str, in_dim: usize, hidden: usize, rng: &mut Rng) -> LstmCell {
        LstmCell {
            wi: store.add(&format!("{name}.wi"), &[in_dim, 4 * hidden], scaled_uniform(in_dim, in_dim * 4 * hidden, rng)),
            wh: store.add(&format!("{name}.wh"), &[hidden, 4 * hidden], gate_orthogonal(hidden, 4, rng)),
            b: store.add(&format!("{name}.b"), &[4 * hidden], vec![0.0; 4 * hidden]),
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundLstm {
        BoundLstm {
            wi: tape.param(store, self.wi),
            wh: tape.param(store, self.wh),
            b: tape.param(store, self.b),
            hidden: self.hidden,
        }
    }
}

impl BoundLstm {
    pub fn step(&self, tape: &mut Tape, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
        let hd = self.hidden;
        let gx = tape.matmul(x, self.wi);
        let gh = tape.matmul(h, self.wh);
        let g = tape.add(gx, gh);
        let g = tape.add_bias(g, self.b);
        let gi = tape.slice_cols(g, 0, hd);
        let gf = tape.slice_cols(g, hd, hd);
        let gg = tape.slice_cols(g, 2 * hd, hd);
        let go = tape.slice_cols(g, 3 * hd, hd);
        let i = tape.sigmoid(gi);
        let f = tape.sigmoid(gf);
        let gt = tape.tanh(gg);
        let o = tape.sigmoid(go);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, gt);
        let c2 = tape.add(fc, ig);
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc);
        (h2, c2)
    }
}

/// Zero recurrent state of width `hidden` for `batch` lanes.
pub fn zero_state(tape: &mut Tape, batch: usize, hidden: usize) -> NodeId {
    tape.leaf(&[batch, hidden], vec![0.0; batch * hidden])
}

/// Three-linear-layer ReLU head; the last layer starts at zero so the
/// head's initial output is exactly zero no matter the input.
pub struct Mlp3 {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

pub struct BoundMlp3 {
    l1: BoundLinear,
    l2: BoundLinear,
    l3: BoundLinear,
}

impl Mlp3 {
    pub fn new(store: &mut ParameterStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Mlp3 {
        Mlp3 {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, hidden, rng),
            l3: Linear::new_zeroed(store, &format!("{name}.l3"), hidden, out_dim),
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> BoundMlp3 {
        BoundMlp3 {
            l1: self.l1.bind(tape, store),
            l2: self.l2.bind(tape, store),
            l3: self.l3.bind(tape, store),
        }
    }
}

impl BoundMlp3 {
    pub fn fwd(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let h = self.l1.fwd(tape, x);
        let h = tape.relu(h);
        let h = self.l2.fwd(tape, h);
        let h = tape.relu(h);
        self.l3.fwd(tape, h)
    }
}
