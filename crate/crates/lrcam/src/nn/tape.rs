//! Recorded operation graph for one forward pass.
//!
//! Every op appends a node holding its inputs and computed value; `backward`
//! walks the nodes once in reverse, accumulating gradients additively.
//! Gradients for parameter leaves are pushed into the owning `ParameterSet`.

use super::params::ParameterSet;
use super::tensor::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatVec(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Sum(usize),
    Mean(usize),
    Square(usize),
    Concat(Vec<usize>),
    Slice(usize, usize, usize),
    LogSoftmax(usize),
    Index(usize, usize),
    Min(usize, usize),
    Clamp(usize, f64, f64),
}

pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Tensor>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { ops: Vec::new(), vals: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    fn push(&mut self, op: Op, val: Tensor) -> Var {
        self.ops.push(op);
        self.vals.push(val);
        Var(self.ops.len() - 1)
    }

    /// Constant input; no gradient is reported for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, t)
    }

    /// Parameter leaf bound to `slot` of the `ParameterSet` passed to
    /// `backward`.
    pub fn param(&mut self, ps: &ParameterSet, slot: usize) -> Var {
        self.push(Op::Leaf { param: Some(slot) }, ps.tensor(slot).clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = zip(&self.vals[a.0], &self.vals[b.0], |x, y| x + y);
        self.push(Op::Add(a.0, b.0), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = zip(&self.vals[a.0], &self.vals[b.0], |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = zip(&self.vals[a.0], &self.vals[b.0], |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), t)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let t = map(&self.vals[a.0], |x| -x);
        self.push(Op::Neg(a.0), t)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = map(&self.vals[a.0], |x| c * x);
        self.push(Op::Scale(a.0, c), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = map(&self.vals[a.0], |x| x + c);
        self.push(Op::AddScalar(a.0), t)
    }

    /// `w` is `[m, n]`, `x` is `[n]`; result `[m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let wt = &self.vals[w.0];
        let xt = &self.vals[x.0];
        assert_eq!(wt.shape.len(), 2, "matvec weight must be 2-D");
        let (m, n) = (wt.shape[0], wt.shape[1]);
        assert_eq!(xt.len(), n, "matvec: {:?} vs {:?}", wt.shape, xt.shape);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wt.data[i * n..(i + 1) * n];
            out[i] = row.iter().zip(&xt.data).map(|(a, b)| a * b).sum();
        }
        self.push(Op::MatVec(w.0, x.0), Tensor::vector(out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(&self.vals[a.0], f64::tanh);
        self.push(Op::Tanh(a.0), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(&self.vals[a.0], |x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a.0), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = map(&self.vals[a.0], f64::exp);
        self.push(Op::Exp(a.0), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.vals[a.0].data.iter().sum();
        self.push(Op::Sum(a.0), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.vals[a.0].len() as f64;
        let s: f64 = self.vals[a.0].data.iter().sum();
        self.push(Op::Mean(a.0), Tensor::scalar(s / n))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = map(&self.vals[a.0], |x| x * x);
        self.push(Op::Square(a.0), t)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.vals[p.0].data);
        }
        self.push(Op::Concat(parts.iter().map(|v| v.0).collect()), Tensor::vector(data))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let data = self.vals[a.0].data[start..start + len].to_vec();
        self.push(Op::Slice(a.0, start, len), Tensor::vector(data))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = &self.vals[a.0].data;
        let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let t = Tensor::vector(x.iter().map(|v| v - lse).collect());
        self.push(Op::LogSoftmax(a.0), t)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let v = self.vals[a.0].data[i];
        self.push(Op::Index(a.0, i), Tensor::scalar(v))
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let t = zip(&self.vals[a.0], &self.vals[b.0], f64::min);
        self.push(Op::Min(a.0, b.0), t)
    }

    /// Elementwise clamp; gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = map(&self.vals[a.0], |x| x.clamp(lo, hi));
        self.push(Op::Clamp(a.0, lo, hi), t)
    }

    /// Affine map `w·x + b`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Var {
        let wx = self.matvec(w, x);
        self.add(wx, b)
    }

    /// Reverse pass from a scalar `loss`. Gradients for parameter leaves are
    /// accumulated into `ps`; returns the per-node gradients for inspection.
    pub fn backward(&mut self, loss: Var, ps: &mut ParameterSet) -> Vec<Tensor> {
        assert_eq!(self.vals[loss.0].len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Tensor> =
            self.vals.iter().map(|v| Tensor::zeros(v.shape.clone())).collect();
        grads[loss.0].data[0] = 1.0;

        for i in (0..self.ops.len()).rev() {
            if grads[i].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[i].clone();
            match &self.ops[i] {
                Op::Leaf { param } => {
                    if let Some(slot) = param {
                        ps.accumulate_grad(*slot, &g);
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[*a], &g.data);
                    add_into(&mut grads[*b], &g.data);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[*a], &g.data);
                    sub_into(&mut grads[*b], &g.data);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> =
                        g.data.iter().zip(&self.vals[*b].data).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> =
                        g.data.iter().zip(&self.vals[*a].data).map(|(g, a)| g * a).collect();
                    add_into(&mut grads[*a], &ga);
                    add_into(&mut grads[*b], &gb);
                }
                Op::Neg(a) => sub_into(&mut grads[*a], &g.data),
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.data.iter().map(|g| g * c).collect();
                    add_into(&mut grads[*a], &ga);
                }
                Op::AddScalar(a) => add_into(&mut grads[*a], &g.data),
                Op::MatVec(w, x) => {
                    let n = self.vals[*w].shape[1];
                    let m = self.vals[*w].shape[0];
                    let xv = self.vals[*x].data.clone();
                    let wv = self.vals[*w].data.clone();
                    {
                        let gw = &mut grads[*w];
                        for i in 0..m {
                            for j in 0..n {
                                gw.data[i * n + j] += g.data[i] * xv[j];
                            }
                        }
                    }
                    {
                        let gx = &mut grads[*x];
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += g.data[i] * wv[i * n + j];
                            }
                            gx.data[j] += acc;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> =
                        g.data.iter().zip(&self.vals[i].data).map(|(g, y)| g * (1.0 - y * y)).collect();
                    add_into(&mut grads[*a], &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.vals[i].data)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    add_into(&mut grads[*a], &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> =
                        g.data.iter().zip(&self.vals[i].data).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[*a], &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g.data[0]; self.vals[*a].len()];
                    add_into(&mut grads[*a], &ga);
                }
                Op::Mean(a) => {
                    let n = self.vals[*a].len() as f64;
                    let ga = vec![g.data[0] / n; self.vals[*a].len()];
                    add_into(&mut grads[*a], &ga);
                }
                Op::Square(a) => {
                    let ga: Vec<f64> =
                        g.data.iter().zip(&self.vals[*a].data).map(|(g, x)| g * 2.0 * x).collect();
                    add_into(&mut grads[*a], &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts.clone() {
                        let n = self.vals[p].len();
                        let gp = g.data[off..off + n].to_vec();
                        add_into(&mut grads[p], &gp);
                        off += n;
                    }
                }
                Op::Slice(a, start, len) => {
                    let ga = &mut grads[*a];
                    for k in 0..*len {
                        ga.data[start + k] += g.data[k];
                    }
                }
                Op::LogSoftmax(a) => {
                    let gsum: f64 = g.data.iter().sum();
                    let ga: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&self.vals[i].data)
                        .map(|(g, y)| g - y.exp() * gsum)
                        .collect();
                    add_into(&mut grads[*a], &ga);
                }
                Op::Index(a, pos) => {
                    grads[*a].data[*pos] += g.data[0];
                }
                Op::Min(a, b) => {
                    let av = self.vals[*a].data.clone();
                    let bv = self.vals[*b].data.clone();
                    for k in 0..g.data.len() {
                        if av[k] <= bv[k] {
                            grads[*a].data[k] += g.data[k];
                        } else {
                            grads[*b].data[k] += g.data[k];
                        }
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.vals[*a].data.clone();
                    for k in 0..g.data.len() {
                        if av[k] >= *lo && av[k] <= *hi {
                            grads[*a].data[k] += g.data[k];
                        }
                    }
                }
            }
        }
        grads
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&x| f(x)).collect() }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape, b.shape, "elementwise op shape mismatch");
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn add_into(t: &mut Tensor, g: &[f64]) {
    for (a, b) in t.data.iter_mut().zip(g) {
        *a += b;
    }
}

fn sub_into(t: &mut Tensor, g: &[f64]) {
    for (a, b) in t.data.iter_mut().zip(g) {
        *a -= b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParameterSet;

    #[test]
    fn disconnected_parameter_gets_zero_grad() {
        let mut ps = ParameterSet::new(0);
        let used = ps.insert("used", Tensor::vector(vec![2.0, 3.0]));
        let unused = ps.insert("unused", Tensor::vector(vec![1.0, 1.0]));
        let mut tape = Tape::new();
        let u = tape.param(&ps, used);
        let _v = tape.param(&ps, unused);
        let s = tape.sum(u);
        tape.backward(s, &mut ps);
        assert_eq!(ps.grad(used).data, vec![1.0, 1.0]);
        assert_eq!(ps.grad(unused).data, vec![0.0, 0.0]);
    }

    #[test]
    fn grads_accumulate_across_uses() {
        let mut ps = ParameterSet::new(0);
        let slot = ps.insert("w", Tensor::vector(vec![1.5]));
        let mut tape = Tape::new();
        let w = tape.param(&ps, slot);
        let sq = tape.mul(w, w); // w^2, d/dw = 2w = 3
        let s = tape.sum(sq);
        tape.backward(s, &mut ps);
        assert_eq!(ps.grad(slot).data, vec![3.0]);
    }

    #[test]
    fn log_softmax_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let ls = tape.log_softmax(x);
        for &v in &tape.value(ls).data {
            assert!((v - (-(3.0f64).ln())).abs() < 1e-12);
        }
        let probs: f64 = tape.value(ls).data.iter().map(|v| v.exp()).sum();
        assert!((probs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_tie_goes_to_first() {
        let mut ps = ParameterSet::new(0);
        let sa = ps.insert("a", Tensor::vector(vec![1.0]));
        let sb = ps.insert("b", Tensor::vector(vec![1.0]));
        let mut tape = Tape::new();
        let a = tape.param(&ps, sa);
        let b = tape.param(&ps, sb);
        let m = tape.min(a, b);
        let s = tape.sum(m);
        tape.backward(s, &mut ps);
        assert_eq!(ps.grad(sa).data, vec![1.0]);
        assert_eq!(ps.grad(sb).data, vec![0.0]);
    }
}
