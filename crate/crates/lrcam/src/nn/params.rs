//! Named parameter storage, Adam updates, and binary checkpoints.

use super::tensor::Tensor;
use super::NnError;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

/// Named tensors with per-tensor gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    grads: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            names: Vec::new(),
            tensors: Vec::new(),
            grads: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> usize {
        assert!(!self.by_name.contains_key(name), "duplicate parameter '{name}'");
        let slot = self.tensors.len();
        self.by_name.insert(name.to_string(), slot);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(t.shape.clone()));
        self.tensors.push(t);
        slot
    }

    pub fn slot(&self, name: &str) -> Result<usize, NnError> {
        self.by_name.get(name).copied().ok_or_else(|| NnError::UnknownParameter(name.into()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.tensors[slot]
    }

    pub fn grad(&self, slot: usize) -> &Tensor {
        &self.grads[slot]
    }

    pub fn accumulate_grad(&mut self, slot: usize, g: &Tensor) {
        assert_eq!(self.grads[slot].shape, g.shape, "grad shape mismatch for {}", self.names[slot]);
        for (a, b) in self.grads[slot].data.iter_mut().zip(&g.data) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn check_finite(&self) -> Result<(), NnError> {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            t.check_finite(n)?;
        }
        Ok(())
    }

    /// Polyak update: `self = (1 - tau) * self + tau * source`.
    pub fn polyak_from(&mut self, source: &ParameterSet, tau: f64) {
        assert_eq!(self.names, source.names, "parameter sets differ");
        for (t, s) in self.tensors.iter_mut().zip(&source.tensors) {
            for (a, b) in t.data.iter_mut().zip(&s.data) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
    }
}

/// Adam optimizer over one `ParameterSet`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, ps: &ParameterSet) -> Self {
        let m = (0..ps.len()).map(|i| Tensor::zeros(ps.tensor(i).shape.clone())).collect();
        let v = (0..ps.len()).map(|i| Tensor::zeros(ps.tensor(i).shape.clone())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    /// Apply accumulated gradients and reset them.
    pub fn step(&mut self, ps: &mut ParameterSet) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for slot in 0..ps.len() {
            for k in 0..ps.grads[slot].data.len() {
                let g = ps.grads[slot].data[k];
                let m = &mut self.m[slot].data[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[slot].data[k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                ps.tensors[slot].data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        ps.zero_grads();
    }
}

const CK_MAGIC: &[u8; 5] = b"LRCK1";

/// A checkpoint bundles named parameter sets and a free-form manifest string
/// (the resolved hyperparameters as JSON).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: String,
    pub sets: Vec<(String, ParameterSet)>,
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), NnError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CK_MAGIC);
    write_str(&mut buf, &ck.manifest);
    buf.extend_from_slice(&(ck.sets.len() as u64).to_le_bytes());
    for (set_name, ps) in &ck.sets {
        write_str(&mut buf, set_name);
        buf.extend_from_slice(&ps.seed.to_le_bytes());
        buf.extend_from_slice(&(ps.len() as u64).to_le_bytes());
        for slot in 0..ps.len() {
            write_str(&mut buf, ps.name(slot));
            let t = ps.tensor(slot);
            buf.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &dim in &t.shape {
                buf.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], NnError> {
        if *pos + n > bytes.len() {
            return Err(NnError::Checkpoint(format!("truncated at byte {}", *pos)));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u64_at = |pos: &mut usize| -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };
    let str_at = |pos: &mut usize| -> Result<String, NnError> {
        let n = u64_at(pos)? as usize;
        String::from_utf8(take(pos, n)?.to_vec())
            .map_err(|_| NnError::Checkpoint("invalid utf-8".into()))
    };

    if take(&mut pos, 5)? != CK_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let manifest = str_at(&mut pos)?;
    let n_sets = u64_at(&mut pos)? as usize;
    let mut sets = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let set_name = str_at(&mut pos)?;
        let seed = u64_at(&mut pos)?;
        let n_params = u64_at(&mut pos)? as usize;
        let mut ps = ParameterSet::new(seed);
        for _ in 0..n_params {
            let name = str_at(&mut pos)?;
            let ndim = u64_at(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64_at(&mut pos)? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            ps.insert(&name, Tensor::new(shape, data));
        }
        sets.push((set_name, ps));
    }
    if pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Checkpoint { manifest, sets })
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut ps = ParameterSet::new(0);
        let slot = ps.insert("x", Tensor::vector(vec![5.0, -3.0]));
        let mut adam = Adam::new(0.1, &ps);
        for _ in 0..500 {
            let g = Tensor::vector(ps.tensor(slot).data.iter().map(|x| 2.0 * x).collect());
            ps.accumulate_grad(slot, &g);
            adam.step(&mut ps);
        }
        for &x in &ps.tensor(slot).data {
            assert!(x.abs() < 1e-3, "did not converge: {x}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParameterSet::new(3);
        ps.insert("w", Tensor::randn(vec![4, 3], &mut rng));
        ps.insert("b", Tensor::randn(vec![4], &mut rng));
        let ck = Checkpoint {
            manifest: r#"{"hidden":4}"#.to_string(),
            sets: vec![("policy".into(), ps)],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn polyak_moves_toward_source() {
        let mut a = ParameterSet::new(0);
        a.insert("w", Tensor::vector(vec![0.0]));
        let mut b = ParameterSet::new(0);
        b.insert("w", Tensor::vector(vec![1.0]));
        a.polyak_from(&b, 0.25);
        assert!((a.tensor(0).data[0] - 0.25).abs() < 1e-15);
    }
}
