//! Named parameter tensors with gradient accumulators and Adam state.
//! Each model owns one store; checkpoints serialize the store's tensors.

use crate::Scalar;
use std::io::{self, Read};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint magic (expected FNCK)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unknown parameter {0}")]
    UnknownParam(String),
    #[error("shape mismatch for {name}: store {store:?} vs file {file:?}")]
    ShapeMismatch { name: String, store: Vec<usize>, file: Vec<usize> },
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<Scalar>,
    grad: Vec<Scalar>,
    m: Vec<Scalar>,
    v: Vec<Scalar>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-5 }
    }
}

#[derive(Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<Scalar>) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch for {name}"
        );
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let n = data.len();
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn data(&self, id: ParamId) -> &[Scalar] {
        &self.entries[id.0].data
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> &[Scalar] {
        &self.entries[id.0].grad
    }

    pub fn set_component(&mut self, id: ParamId, i: usize, v: Scalar) {
        self.entries[id.0].data[i] = v;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Accumulate gradients the tape computed for this store's parameters.
    pub fn absorb(&mut self, tape: &super::Tape) {
        for (id, g) in tape.param_grads() {
            let dst = &mut self.entries[id.0].grad;
            debug_assert_eq!(dst.len(), g.len());
            for (d, &s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }

    /// One Adam update from the accumulated gradients; clears them after.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = (1.0 - (cfg.beta1 as f64).powf(t)) as Scalar;
        let bc2 = (1.0 - (cfg.beta2 as f64).powf(t)) as Scalar;
        for e in &mut self.entries {
            for i in 0..e.data.len() {
                let g = e.grad[i];
                e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
                e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Write all tensors as an FNCK checkpoint (f32 payload regardless of
    /// the build's scalar width).
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"FNCK");
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let nb = e.name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(e.shape.len() as u8);
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Load an FNCK checkpoint into this store. Every store parameter must
    /// appear in the file with a matching shape, and vice versa — the file
    /// is only valid for the architecture that wrote it.
    pub fn load(&mut self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != b"FNCK" {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u16(&mut f)?;
        if version != 1 {
            return Err(CheckpointError::BadVersion(version));
        }
        let count = read_u32(&mut f)? as usize;
        let mut seen = vec![false; self.entries.len()];
        for _ in 0..count {
            let name_len = read_u16(&mut f)? as usize;
            let mut name_buf = vec![0u8; name_len];
            f.read_exact(&mut name_buf)?;
            let name = String::from_utf8_lossy(&name_buf).into_owned();
            let rank = read_u8(&mut f)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut f)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 4];
                f.read_exact(&mut b)?;
                data.push(f32::from_le_bytes(b) as Scalar);
            }
            let idx = self
                .entries
                .iter()
                .position(|e| e.name == name)
                .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
            if self.entries[idx].shape != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    store: self.entries[idx].shape.clone(),
                    file: shape,
                });
            }
            self.entries[idx].data = data;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(CheckpointError::MissingParam(self.entries[missing].name.clone()));
        }
        Ok(())
    }
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn adam_with_zero_gradients_leaves_params_unchanged() {
        let mut store = ParameterStore::new();
        let w = store.add("w", &[3], vec![1.0, -2.0, 0.5]);
        let before = store.data(w).to_vec();
        store.adam_step(&AdamConfig::default());
        assert_eq!(store.data(w), before.as_slice());
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, step one reduces to lr * g/(|g| + eps'),
        // i.e. almost exactly lr in magnitude, opposite the gradient sign.
        let mut store = ParameterStore::new();
        let w = store.add("w", &[2], vec![0.0, 0.0]);
        let mut tape = Tape::new();
        let x = tape.param(&store, w);
        let c = tape.leaf(&[2], vec![3.0, -4.0]);
        let y = tape.mul(x, c);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        store.absorb(&tape);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        store.adam_step(&cfg);
        let d = store.data(w);
        assert!((d[0] + 0.1).abs() < 1e-3, "got {}", d[0]);
        assert!((d[1] - 0.1).abs() < 1e-3, "got {}", d[1]);
        // gradients were consumed by the step
        assert_eq!(store.grad(w), &[0.0, 0.0]);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut store = ParameterStore::new();
        let w = store.add("w", &[1], vec![2.0]);
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        for _ in 0..600 {
            let mut tape = Tape::new();
            let x = tape.param(&store, w);
            let sq = tape.mul(x, x);
            let loss = tape.sum(sq);
            tape.backward(loss).unwrap();
            store.absorb(&tape);
            store.adam_step(&cfg);
        }
        assert!(store.data(w)[0].abs() < 0.01, "w = {}", store.data(w)[0]);
    }

    #[test]
    fn checkpoint_round_trips_and_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fnck");

        let mut store = ParameterStore::new();
        store.add("a", &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        store.add("b", &[4], vec![-1.0, 0.25, 0.0, 9.5]);
        store.save(&path).unwrap();

        let mut other = ParameterStore::new();
        let a = other.add("a", &[2, 3], vec![0.0; 6]);
        let b = other.add("b", &[4], vec![0.0; 4]);
        other.load(&path).unwrap();
        assert_eq!(other.data(a), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(other.data(b), &[-1.0, 0.25, 0.0, 9.5]);

        let mut wrong_shape = ParameterStore::new();
        wrong_shape.add("a", &[3, 2], vec![0.0; 6]);
        wrong_shape.add("b", &[4], vec![0.0; 4]);
        assert!(matches!(
            wrong_shape.load(&path),
            Err(CheckpointError::ShapeMismatch { .. })
        ));

        let mut extra = ParameterStore::new();
        extra.add("a", &[2, 3], vec![0.0; 6]);
        extra.add("b", &[4], vec![0.0; 4]);
        extra.add("c", &[1], vec![0.0]);
        assert!(matches!(extra.load(&path), Err(CheckpointError::MissingParam(_))));

        std::fs::write(&path, b"NOPE").unwrap();
        let mut m = ParameterStore::new();
        m.add("a", &[1], vec![0.0]);
        assert!(matches!(m.load(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new();
        store.add("w", &[1], vec![0.0]);
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            store.add("w", &[1], vec![0.0]);
        }));
        assert!(r.is_err());
    }
}
