//! Reverse-mode autodiff on a flat op tape, sized for small recurrent
//! conv/LSTM models. Values are computed eagerly at graph-build time;
//! `backward` walks the tape once in reverse.

pub mod kernels;
pub mod layers;
pub mod store;

pub use store::{AdamConfig, CheckpointError, ParamId, ParameterStore};

use crate::Scalar;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("non-finite value in {op} node")]
    NonFinite { op: &'static str },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Max { a: NodeId, b: NodeId },
    Min { a: NodeId, b: NodeId },
    MulConst { x: NodeId, c: Scalar },
    AddConst { x: NodeId, #[allow(dead_code)] c: Scalar },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Softplus { x: NodeId },
    Exp { x: NodeId },
    Log { x: NodeId },
    Clamp { x: NodeId, lo: Scalar, hi: Scalar },
    LogSoftmax { x: NodeId },
    TakePerRow { x: NodeId, idx: Vec<usize> },
    GatherRows { x: NodeId, idx: Vec<usize> },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    SliceCols { x: NodeId, start: usize, len: usize },
    RowSum { x: NodeId },
    RowScale { x: NodeId, s: NodeId },
    Conv3x3 { x: NodeId, w: NodeId, b: NodeId, h: usize, w_dim: usize },
    InstanceNorm { x: NodeId, eps: Scalar },
    FilmAffine { x: NodeId, scale: NodeId, shift: NodeId },
    Reshape { x: NodeId },
    Mean { x: NodeId },
    Sum { x: NodeId },
    StopGrad { #[allow(dead_code)] x: NodeId },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::AddBias { .. } => "add_bias",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Max { .. } => "max",
        Op::Min { .. } => "min",
        Op::MulConst { .. } => "mul_const",
        Op::AddConst { .. } => "add_const",
        Op::Relu { .. } => "relu",
        Op::Tanh { .. } => "tanh",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Softplus { .. } => "softplus",
        Op::Exp { .. } => "exp",
        Op::Log { .. } => "log",
        Op::Clamp { .. } => "clamp",
        Op::LogSoftmax { .. } => "log_softmax",
        Op::TakePerRow { .. } => "take_per_row",
        Op::GatherRows { .. } => "gather_rows",
        Op::ConcatCols { .. } => "concat_cols",
        Op::ConcatRows { .. } => "concat_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::RowSum { .. } => "row_sum",
        Op::RowScale { .. } => "row_scale",
        Op::Conv3x3 { .. } => "conv3x3",
        Op::InstanceNorm { .. } => "instance_norm",
        Op::FilmAffine { .. } => "film_affine",
        Op::Reshape { .. } => "reshape",
        Op::Mean { .. } => "mean",
        Op::Sum { .. } => "sum",
        Op::StopGrad { .. } => "stop_grad",
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    match *op {
        Op::Leaf { .. } => vec![],
        Op::Matmul { a, b }
        | Op::Add { a, b }
        | Op::Sub { a, b }
        | Op::Mul { a, b }
        | Op::Max { a, b }
        | Op::Min { a, b } => vec![a, b],
        Op::AddBias { x, b } => vec![x, b],
        Op::RowScale { x, s } => vec![x, s],
        Op::Conv3x3 { x, w, b, .. } => vec![x, w, b],
        Op::FilmAffine { x, scale, shift } => vec![x, scale, shift],
        Op::ConcatCols { ref parts } | Op::ConcatRows { ref parts } => parts.clone(),
        Op::StopGrad { .. } => vec![],
        Op::MulConst { x, .. }
        | Op::AddConst { x, .. }
        | Op::Relu { x }
        | Op::Tanh { x }
        | Op::Sigmoid { x }
        | Op::Softplus { x }
        | Op::Exp { x }
        | Op::Log { x }
        | Op::Clamp { x, .. }
        | Op::LogSoftmax { x }
        | Op::TakePerRow { x, .. }
        | Op::GatherRows { x, .. }
        | Op::SliceCols { x, .. }
        | Op::RowSum { x }
        | Op::InstanceNorm { x, .. }
        | Op::Reshape { x }
        | Op::Mean { x }
        | Op::Sum { x } => vec![x],
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<Scalar>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    /// True when a node is a parameter or has one upstream; others skip
    /// gradient allocation entirely.
    needs: Vec<bool>,
    grads: Vec<Option<Vec<Scalar>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), needs: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<Scalar>, op: Op) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs = match op {
            Op::Leaf { param } => param.is_some(),
            Op::StopGrad { .. } => false,
            ref o => op_inputs(o).iter().any(|&i| self.needs[i]),
        };
        self.nodes.push(Node { shape, data, op });
        self.needs.push(needs);
        self.grads.push(None);
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<Scalar>) -> NodeId {
        self.push(shape.to_vec(), data, Op::Leaf { param: None })
    }

    pub fn scalar(&mut self, v: Scalar) -> NodeId {
        self.leaf(&[1], vec![v])
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        self.push(
            store.shape(id).to_vec(),
            store.data(id).to_vec(),
            Op::Leaf { param: Some(id) },
        )
    }

    /// One-hot rows: out[i, ids[i]] = 1.
    pub fn one_hot(&mut self, ids: &[usize], width: usize) -> NodeId {
        let mut data = vec![0.0; ids.len() * width];
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < width, "one_hot id {id} out of width {width}");
            data[i * width + id] = 1.0;
        }
        self.leaf(&[ids.len(), width], data)
    }

    pub fn data(&self, id: NodeId) -> &[Scalar] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn value(&self, id: NodeId) -> Scalar {
        debug_assert_eq!(self.nodes[id].data.len(), 1);
        self.nodes[id].data[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[Scalar]> {
        self.grads[id].as_deref()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// (param, gradient) pairs for every parameter leaf that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[Scalar])> {
        self.nodes.iter().zip(&self.grads).filter_map(|(n, g)| match (&n.op, g) {
            (Op::Leaf { param: Some(p) }, Some(g)) => Some((*p, g.as_slice())),
            _ => None,
        })
    }

    fn rows_cols(&self, id: NodeId) -> (usize, usize) {
        let s = &self.nodes[id].shape;
        assert_eq!(s.len(), 2, "expected rank-2 node, got shape {s:?}");
        (s[0], s[1])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, &self.nodes[a].data, &self.nodes[b].data, &mut out);
        self.push(vec![m, n], out, Op::Matmul { a, b })
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (m, n) = self.rows_cols(x);
        assert_eq!(self.nodes[b].data.len(), n, "bias width mismatch");
        let mut out = self.nodes[x].data.clone();
        for i in 0..m {
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(&self.nodes[b].data) {
                *o += bv;
            }
        }
        self.push(vec![m, n], out, Op::AddBias { x, b })
    }

    fn zip_ew(&mut self, a: NodeId, b: NodeId, f: impl Fn(Scalar, Scalar) -> Scalar, op: Op) -> NodeId {
        assert_eq!(self.nodes[a].shape, self.nodes[b].shape, "elementwise shape mismatch");
        let out: Vec<Scalar> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(self.nodes[a].shape.clone(), out, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_ew(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_ew(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_ew(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_ew(a, b, |x, y| if x >= y { x } else { y }, Op::Max { a, b })
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_ew(a, b, |x, y| if x <= y { x } else { y }, Op::Min { a, b })
    }

    fn map_ew(&mut self, x: NodeId, f: impl Fn(Scalar) -> Scalar, op: Op) -> NodeId {
        let out: Vec<Scalar> = self.nodes[x].data.iter().map(|&v| f(v)).collect();
        self.push(self.nodes[x].shape.clone(), out, op)
    }

    pub fn mul_const(&mut self, x: NodeId, c: Scalar) -> NodeId {
        self.map_ew(x, |v| v * c, Op::MulConst { x, c })
    }

    pub fn add_const(&mut self, x: NodeId, c: Scalar) -> NodeId {
        self.map_ew(x, |v| v + c, Op::AddConst { x, c })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map_ew(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map_ew(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map_ew(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        // ln(1+e^x), computed stably from |x|.
        self.map_ew(
            x,
            |v| {
                let a = v.max(0.0);
                a + ((-a).exp() + (v - a).exp()).ln()
            },
            Op::Softplus { x },
        )
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.map_ew(x, |v| v.exp(), Op::Exp { x })
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.map_ew(x, |v| v.ln(), Op::Log { x })
    }

    pub fn clamp(&mut self, x: NodeId, lo: Scalar, hi: Scalar) -> NodeId {
        assert!(lo <= hi);
        self.map_ew(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.rows_cols(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[x].data[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(Scalar::NEG_INFINITY, Scalar::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<Scalar>().ln();
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push(vec![m, n], out, Op::LogSoftmax { x })
    }

    /// out[i] = x[i, idx[i]], shaped [rows, 1].
    pub fn take_per_row(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let (m, n) = self.rows_cols(x);
        assert_eq!(idx.len(), m);
        let out: Vec<Scalar> = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n);
                self.nodes[x].data[i * n + j]
            })
            .collect();
        self.push(vec![m, 1], out, Op::TakePerRow { x, idx: idx.to_vec() })
    }

    /// Row lookup into a [V, d] table; duplicates allowed (grads scatter-add).
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let (v, d) = self.rows_cols(x);
        let mut out = vec![0.0; idx.len() * d];
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < v, "gather row {j} out of {v}");
            out[i * d..(i + 1) * d].copy_from_slice(&self.nodes[x].data[j * d..(j + 1) * d]);
        }
        self.push(vec![idx.len(), d], out, Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.rows_cols(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (mi, ni) = self.rows_cols(p);
                assert_eq!(mi, m, "concat row mismatch");
                ni
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out[i * n + off..i * n + off + w]
                    .copy_from_slice(&self.nodes[p].data[i * w..(i + 1) * w]);
                off += w;
            }
        }
        self.push(vec![m, n], out, Op::ConcatCols { parts: parts.to_vec() })
    }

    /// Stack rank-2 nodes vertically (same column count).
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.rows_cols(parts[0]).1;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (mi, ni) = self.rows_cols(p);
            assert_eq!(ni, n, "concat_rows col mismatch");
            out.extend_from_slice(&self.nodes[p].data);
            m += mi;
        }
        self.push(vec![m, n], out, Op::ConcatRows { parts: parts.to_vec() })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let (m, n) = self.rows_cols(x);
        assert!(start + len <= n);
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len]
                .copy_from_slice(&self.nodes[x].data[i * n + start..i * n + start + len]);
        }
        self.push(vec![m, len], out, Op::SliceCols { x, start, len })
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let (m, n) = self.rows_cols(x);
        let out: Vec<Scalar> = (0..m)
            .map(|i| self.nodes[x].data[i * n..(i + 1) * n].iter().sum())
            .collect();
        self.push(vec![m, 1], out, Op::RowSum { x })
    }

    /// Broadcast multiply: x [m,n] scaled per row by s [m,1].
    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (m, n) = self.rows_cols(x);
        assert_eq!(self.nodes[s].shape, vec![m, 1], "row_scale wants [rows,1]");
        let mut out = self.nodes[x].data.clone();
        for i in 0..m {
            let sv = self.nodes[s].data[i];
            for o in &mut out[i * n..(i + 1) * n] {
                *o *= sv;
            }
        }
        self.push(vec![m, n], out, Op::RowScale { x, s })
    }

    /// Same-padded 3x3 convolution on channel-last maps. x is [B, H*W, Cin],
    /// w is [9*Cin, Cout] (patch-major), b is [Cout]; output [B, H*W, Cout].
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId, h: usize, w_dim: usize) -> NodeId {
        let xs = self.nodes[x].shape.clone();
        assert_eq!(xs.len(), 3, "conv input must be [B, HW, C]");
        let (bsz, hw, cin) = (xs[0], xs[1], xs[2]);
        assert_eq!(hw, h * w_dim);
        let (pk, cout) = self.rows_cols(w);
        assert_eq!(pk, 9 * cin, "conv weight must be [9*Cin, Cout]");
        assert_eq!(self.nodes[b].data.len(), cout);
        let mut patches = vec![0.0; bsz * hw * 9 * cin];
        im2col(&self.nodes[x].data, bsz, h, w_dim, cin, &mut patches);
        let mut out = vec![0.0; bsz * hw * cout];
        kernels::gemm(bsz * hw, 9 * cin, cout, &patches, &self.nodes[w].data, &mut out);
        for i in 0..bsz * hw {
            for (o, &bv) in out[i * cout..(i + 1) * cout].iter_mut().zip(&self.nodes[b].data) {
                *o += bv;
            }
        }
        self.push(vec![bsz, hw, cout], out, Op::Conv3x3 { x, w, b, h, w_dim })
    }

    /// Normalize each (sample, channel) slice over the spatial axis.
    pub fn instance_norm(&mut self, x: NodeId, eps: Scalar) -> NodeId {
        let xs = self.nodes[x].shape.clone();
        assert_eq!(xs.len(), 3, "instance_norm input must be [B, HW, C]");
        let (bsz, hw, c) = (xs[0], xs[1], xs[2]);
        let mut out = vec![0.0; bsz * hw * c];
        let data = &self.nodes[x].data;
        let mut mean = vec![0.0 as Scalar; c];
        let mut var = vec![0.0 as Scalar; c];
        for bi in 0..bsz {
            mean.iter_mut().for_each(|v| *v = 0.0);
            var.iter_mut().for_each(|v| *v = 0.0);
            let base = bi * hw * c;
            for s in 0..hw {
                for ch in 0..c {
                    mean[ch] += data[base + s * c + ch];
                }
            }
            for m in &mut mean {
                *m /= hw as Scalar;
            }
            for s in 0..hw {
                for ch in 0..c {
                    let d = data[base + s * c + ch] - mean[ch];
                    var[ch] += d * d;
                }
            }
            for v in &mut var {
                *v /= hw as Scalar;
            }
            for s in 0..hw {
                for ch in 0..c {
                    out[base + s * c + ch] =
                        (data[base + s * c + ch] - mean[ch]) / (var[ch] + eps).sqrt();
                }
            }
        }
        self.push(xs, out, Op::InstanceNorm { x, eps })
    }

    /// FiLM conditioning: out = x * (1 + scale) + shift, with scale/shift
    /// broadcast per (sample, channel). Zero scale and shift is the identity.
    pub fn film_affine(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> NodeId {
        let xs = self.nodes[x].shape.clone();
        assert_eq!(xs.len(), 3, "film input must be [B, HW, C]");
        let (bsz, hw, c) = (xs[0], xs[1], xs[2]);
        assert_eq!(self.nodes[scale].shape, vec![bsz, c]);
        assert_eq!(self.nodes[shift].shape, vec![bsz, c]);
        let mut out = vec![0.0; bsz * hw * c];
        for bi in 0..bsz {
            let sc = &self.nodes[scale].data[bi * c..(bi + 1) * c];
            let sh = &self.nodes[shift].data[bi * c..(bi + 1) * c];
            let base = bi * hw * c;
            for s in 0..hw {
                for ch in 0..c {
                    out[base + s * c + ch] =
                        self.nodes[x].data[base + s * c + ch] * (1.0 + sc[ch]) + sh[ch];
                }
            }
        }
        self.push(xs, out, Op::FilmAffine { x, scale, shift })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[x].data.len(),
            "reshape size mismatch"
        );
        self.push(shape.to_vec(), self.nodes[x].data.clone(), Op::Reshape { x })
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].data.len().max(1);
        let v = self.nodes[x].data.iter().sum::<Scalar>() / n as Scalar;
        self.push(vec![1], vec![v], Op::Mean { x })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].data.iter().sum::<Scalar>();
        self.push(vec![1], vec![v], Op::Sum { x })
    }

    /// Identity forward; gradients do not flow past it.
    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        self.push(self.nodes[x].shape.clone(), self.nodes[x].data.clone(), Op::StopGrad { x })
    }

    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        assert_eq!(self.nodes[loss].data.len(), 1, "backward needs a scalar loss");
        if !self.nodes[loss].data[0].is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name(&self.nodes[loss].op) });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if !self.needs[id] {
                continue;
            }
            let Some(dy) = self.grads[id].take() else { continue };
            self.propagate(id, &dy);
            self.grads[id] = Some(dy);
        }
        Ok(())
    }

    fn propagate(&mut self, id: NodeId, dy: &[Scalar]) {
        // Field-split borrows: nodes read-only, grads mutated.
        let nodes = &self.nodes;
        let needs = &self.needs;
        let grads = &mut self.grads;
        // nudge the closure into a higher-ranked signature so the returned
        // borrow is tied to the grads argument, not the closure itself
        fn tie<F>(f: F) -> F
        where
            F: for<'g> Fn(&'g mut Vec<Option<Vec<Scalar>>>, NodeId) -> &'g mut Vec<Scalar>,
        {
            f
        }
        let gbuf = tie(|grads, i| {
            let len = nodes[i].data.len();
            grads[i].get_or_insert_with(|| vec![0.0; len])
        });
        match nodes[id].op.clone() {
            Op::Leaf { .. } | Op::StopGrad { .. } => {}
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = nodes[b].shape[1];
                if needs[a] {
                    kernels::gemm_a_bt(m, n, k, dy, &nodes[b].data, gbuf(grads, a));
                }
                if needs[b] {
                    kernels::gemm_at_b(m, k, n, &nodes[a].data, dy, gbuf(grads, b));
                }
            }
            Op::AddBias { x, b } => {
                let (m, n) = (nodes[x].shape[0], nodes[x].shape[1]);
                if needs[x] {
                    add_into(gbuf(grads, x), dy);
                }
                if needs[b] {
                    let gb = gbuf(grads, b);
                    for i in 0..m {
                        for (g, &d) in gb.iter_mut().zip(&dy[i * n..(i + 1) * n]) {
                            *g += d;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if needs[a] {
                    add_into(gbuf(grads, a), dy);
                }
                if needs[b] {
                    add_into(gbuf(grads, b), dy);
                }
            }
            Op::Sub { a, b } => {
                if needs[a] {
                    add_into(gbuf(grads, a), dy);
                }
                if needs[b] {
                    for (g, &d) in gbuf(grads, b).iter_mut().zip(dy) {
                        *g -= d;
                    }
                }
            }
            Op::Mul { a, b } => {
                if needs[a] {
                    for ((g, &d), &bv) in gbuf(grads, a).iter_mut().zip(dy).zip(&nodes[b].data) {
                        *g += d * bv;
                    }
                }
                if needs[b] {
                    for ((g, &d), &av) in gbuf(grads, b).iter_mut().zip(dy).zip(&nodes[a].data) {
                        *g += d * av;
                    }
                }
            }
            Op::Max { a, b } | Op::Min { a, b } => {
                let is_max = matches!(nodes[id].op, Op::Max { .. });
                let (ad, bd) = (&nodes[a].data, &nodes[b].data);
                if needs[a] {
                    let ga = gbuf(grads, a);
                    for i in 0..dy.len() {
                        let pick_a = if is_max { ad[i] >= bd[i] } else { ad[i] <= bd[i] };
                        if pick_a {
                            ga[i] += dy[i];
                        }
                    }
                }
                if needs[b] {
                    let gb = gbuf(grads, b);
                    for i in 0..dy.len() {
                        let pick_a = if is_max { ad[i] >= bd[i] } else { ad[i] <= bd[i] };
                        if !pick_a {
                            gb[i] += dy[i];
                        }
                    }
                }
            }
            Op::MulConst { x, c } => {
                if needs[x] {
                    for (g, &d) in gbuf(grads, x).iter_mut().zip(dy) {
                        *g += c * d;
                    }
                }
            }
            Op::AddConst { x, .. } | Op::Reshape { x } => {
                if needs[x] {
                    add_into(gbuf(grads, x), dy);
                }
            }
            Op::Relu { x } => {
                if needs[x] {
                    for ((g, &d), &v) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[x].data) {
                        if v > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Tanh { x } => {
                if needs[x] {
                    for ((g, &d), &y) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[id].data) {
                        *g += d * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if needs[x] {
                    for ((g, &d), &y) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[id].data) {
                        *g += d * y * (1.0 - y);
                    }
                }
            }
            Op::Softplus { x } => {
                if needs[x] {
                    for ((g, &d), &v) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[x].data) {
                        *g += d * sigmoid(v);
                    }
                }
            }
            Op::Exp { x } => {
                if needs[x] {
                    for ((g, &d), &y) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[id].data) {
                        *g += d * y;
                    }
                }
            }
            Op::Log { x } => {
                if needs[x] {
                    for ((g, &d), &v) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[x].data) {
                        *g += d / v;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if needs[x] {
                    for ((g, &d), &v) in gbuf(grads, x).iter_mut().zip(dy).zip(&nodes[x].data) {
                        if v > lo && v < hi {
                            *g += d;
                        }
                    }
                }
            }
            Op::LogSoftmax { x } => {
                if needs[x] {
                    let (m, n) = (nodes[id].shape[0], nodes[id].shape[1]);
                    let gx = gbuf(grads, x);
                    for i in 0..m {
                        let drow = &dy[i * n..(i + 1) * n];
                        let dsum: Scalar = drow.iter().sum();
                        let yrow = &nodes[id].data[i * n..(i + 1) * n];
                        for ((g, &d), &y) in
                            gx[i * n..(i + 1) * n].iter_mut().zip(drow).zip(yrow)
                        {
                            *g += d - y.exp() * dsum;
                        }
                    }
                }
            }
            Op::TakePerRow { x, idx } => {
                if needs[x] {
                    let n = nodes[x].shape[1];
                    let gx = gbuf(grads, x);
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * n + j] += dy[i];
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if needs[x] {
                    let d = nodes[x].shape[1];
                    let gx = gbuf(grads, x);
                    for (i, &j) in idx.iter().enumerate() {
                        for (g, &dv) in gx[j * d..(j + 1) * d].iter_mut().zip(&dy[i * d..(i + 1) * d]) {
                            *g += dv;
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let m = nodes[id].shape[0];
                let n = nodes[id].shape[1];
                let mut off = 0;
                for &p in &parts {
                    let w = nodes[p].shape[1];
                    if needs[p] {
                        let gp = gbuf(grads, p);
                        for i in 0..m {
                            for (g, &d) in gp[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(&dy[i * n + off..i * n + off + w])
                            {
                                *g += d;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in &parts {
                    let len = nodes[p].data.len();
                    if needs[p] {
                        add_into(gbuf(grads, p), &dy[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols { x, start, len } => {
                if needs[x] {
                    let (m, n) = (nodes[x].shape[0], nodes[x].shape[1]);
                    let gx = gbuf(grads, x);
                    for i in 0..m {
                        for (g, &d) in gx[i * n + start..i * n + start + len]
                            .iter_mut()
                            .zip(&dy[i * len..(i + 1) * len])
                        {
                            *g += d;
                        }
                    }
                }
            }
            Op::RowSum { x } => {
                if needs[x] {
                    let (m, n) = (nodes[x].shape[0], nodes[x].shape[1]);
                    let gx = gbuf(grads, x);
                    for i in 0..m {
                        for g in &mut gx[i * n..(i + 1) * n] {
                            *g += dy[i];
                        }
                    }
                }
            }
            Op::RowScale { x, s } => {
                let (m, n) = (nodes[x].shape[0], nodes[x].shape[1]);
                if needs[x] {
                    let gx = gbuf(grads, x);
                    for i in 0..m {
                        let sv = nodes[s].data[i];
                        for (g, &d) in gx[i * n..(i + 1) * n].iter_mut().zip(&dy[i * n..(i + 1) * n]) {
                            *g += sv * d;
                        }
                    }
                }
                if needs[s] {
                    let gs = gbuf(grads, s);
                    for i in 0..m {
                        gs[i] += kernels::dot(&dy[i * n..(i + 1) * n], &nodes[x].data[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::Conv3x3 { x, w, b, h, w_dim } => {
                let (bsz, hw, cin) = (nodes[x].shape[0], nodes[x].shape[1], nodes[x].shape[2]);
                let cout = nodes[w].shape[1];
                if needs[w] {
                    let mut patches = vec![0.0; bsz * hw * 9 * cin];
                    im2col(&nodes[x].data, bsz, h, w_dim, cin, &mut patches);
                    kernels::gemm_at_b(bsz * hw, 9 * cin, cout, &patches, dy, gbuf(grads, w));
                }
                if needs[b] {
                    let gb = gbuf(grads, b);
                    for i in 0..bsz * hw {
                        for (g, &d) in gb.iter_mut().zip(&dy[i * cout..(i + 1) * cout]) {
                            *g += d;
                        }
                    }
                }
                if needs[x] {
                    let mut dp = vec![0.0; bsz * hw * 9 * cin];
                    kernels::gemm_a_bt(bsz * hw, cout, 9 * cin, dy, &nodes[w].data, &mut dp);
                    col2im_add(&dp, bsz, h, w_dim, cin, gbuf(grads, x));
                }
            }
            Op::InstanceNorm { x, eps } => {
                if needs[x] {
                    let (bsz, hw, c) = (nodes[x].shape[0], nodes[x].shape[1], nodes[x].shape[2]);
                    let y = &nodes[id].data;
                    let xd = &nodes[x].data;
                    let gx = gbuf(grads, x);
                    let n = hw as Scalar;
                    let mut mean = vec![0.0 as Scalar; c];
                    let mut var = vec![0.0 as Scalar; c];
                    let mut dmean = vec![0.0 as Scalar; c];
                    let mut dydot = vec![0.0 as Scalar; c];
                    for bi in 0..bsz {
                        let base = bi * hw * c;
                        for v in mean.iter_mut().chain(var.iter_mut()).chain(dmean.iter_mut()).chain(dydot.iter_mut()) {
                            *v = 0.0;
                        }
                        for s in 0..hw {
                            for ch in 0..c {
                                mean[ch] += xd[base + s * c + ch];
                            }
                        }
                        for m in &mut mean {
                            *m /= n;
                        }
                        for s in 0..hw {
                            for ch in 0..c {
                                let d = xd[base + s * c + ch] - mean[ch];
                                var[ch] += d * d;
                            }
                        }
                        for v in &mut var {
                            *v /= n;
                        }
                        for s in 0..hw {
                            for ch in 0..c {
                                let i = base + s * c + ch;
                                dmean[ch] += dy[i];
                                dydot[ch] += dy[i] * y[i];
                            }
                        }
                        for ch in 0..c {
                            dmean[ch] /= n;
                            dydot[ch] /= n;
                        }
                        for s in 0..hw {
                            for ch in 0..c {
                                let i = base + s * c + ch;
                                let inv_s = 1.0 / (var[ch] + eps).sqrt();
                                gx[i] += inv_s * (dy[i] - dmean[ch] - y[i] * dydot[ch]);
                            }
                        }
                    }
                }
            }
            Op::FilmAffine { x, scale, shift } => {
                let (bsz, hw, c) = (nodes[x].shape[0], nodes[x].shape[1], nodes[x].shape[2]);
                if needs[x] {
                    let gx = gbuf(grads, x);
                    for bi in 0..bsz {
                        let sc = &nodes[scale].data[bi * c..(bi + 1) * c];
                        let base = bi * hw * c;
                        for s in 0..hw {
                            for ch in 0..c {
                                gx[base + s * c + ch] += dy[base + s * c + ch] * (1.0 + sc[ch]);
                            }
                        }
                    }
                }
                if needs[scale] {
                    let gs = gbuf(grads, scale);
                    for bi in 0..bsz {
                        let base = bi * hw * c;
                        for s in 0..hw {
                            for ch in 0..c {
                                gs[bi * c + ch] += dy[base + s * c + ch] * nodes[x].data[base + s * c + ch];
                            }
                        }
                    }
                }
                if needs[shift] {
                    let gh = gbuf(grads, shift);
                    for bi in 0..bsz {
                        let base = bi * hw * c;
                        for s in 0..hw {
                            for ch in 0..c {
                                gh[bi * c + ch] += dy[base + s * c + ch];
                            }
                        }
                    }
                }
            }
            Op::Mean { x } => {
                if needs[x] {
                    let scale = dy[0] / nodes[x].data.len().max(1) as Scalar;
                    for g in gbuf(grads, x) {
                        *g += scale;
                    }
                }
            }
            Op::Sum { x } => {
                if needs[x] {
                    for g in gbuf(grads, x) {
                        *g += dy[0];
                    }
                }
            }
        }
    }
}

fn sigmoid(v: Scalar) -> Scalar {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [Scalar], src: &[Scalar]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Extract 3x3 same-padded patches from channel-last maps into
/// [B*H*W, 9*C] rows. `out` must be zeroed.
fn im2col(x: &[Scalar], bsz: usize, h: usize, w: usize, c: usize, out: &mut [Scalar]) {
    let row_w = 9 * c;
    for bi in 0..bsz {
        for y in 0..h as i32 {
            for xx in 0..w as i32 {
                let row = ((bi * h + y as usize) * w + xx as usize) * row_w;
                for ky in 0..3i32 {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h as i32 {
                        continue;
                    }
                    for kx in 0..3i32 {
                        let sx = xx + kx - 1;
                        if sx < 0 || sx >= w as i32 {
                            continue;
                        }
                        let src = (bi * h * w + sy as usize * w + sx as usize) * c;
                        let dst = row + ((ky * 3 + kx) as usize) * c;
                        out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add patch gradients back onto the map.
fn col2im_add(dp: &[Scalar], bsz: usize, h: usize, w: usize, c: usize, dx: &mut [Scalar]) {
    let row_w = 9 * c;
    for bi in 0..bsz {
        for y in 0..h as i32 {
            for xx in 0..w as i32 {
                let row = ((bi * h + y as usize) * w + xx as usize) * row_w;
                for ky in 0..3i32 {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h as i32 {
                        continue;
                    }
                    for kx in 0..3i32 {
                        let sx = xx + kx - 1;
                        if sx < 0 || sx >= w as i32 {
                            continue;
                        }
                        let dst = (bi * h * w + sy as usize * w + sx as usize) * c;
                        let src = row + ((ky * 3 + kx) as usize) * c;
                        for (d, &s) in dx[dst..dst + c].iter_mut().zip(&dp[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Run a recurrent step function over `len` steps, inserting gradient stops
/// on the carried state every `truncation` steps. Forward values match the
/// untruncated run exactly.
pub fn scan_truncated<F>(
    tape: &mut Tape,
    mut state: Vec<NodeId>,
    len: usize,
    truncation: usize,
    mut step_fn: F,
) -> Vec<Vec<NodeId>>
where
    F: FnMut(&mut Tape, usize, &[NodeId]) -> Vec<NodeId>,
{
    assert!(truncation >= 1);
    let mut states = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 && t % truncation == 0 {
            state = state.iter().map(|&s| tape.stop_grad(s)).collect();
        }
        state = step_fn(tape, t, &state);
        states.push(state.clone());
    }
    states
}
