//! Layers and distribution utilities, on-tape and forward-only.
//!
//! The forward-only variants in [`forward`] are used on the rollout hot path
//! where no gradients are needed; they are tested against the tape versions.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use rand::Rng;

/// One LSTM step. `w` is `[4H, I+H]` over the concatenated `[x, h_prev]`,
/// `b` is `[4H]`; gate order is input, forget, output, cell.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: Var,
    b: Var,
) -> (Var, Var) {
    let hidden = tape.value(h_prev).len();
    let xh = tape.concat(&[x, h_prev]);
    let z = tape.affine(w, b, xh);
    let zi = tape.slice(z, 0, hidden);
    let zf = tape.slice(z, hidden, hidden);
    let zo = tape.slice(z, 2 * hidden, hidden);
    let zg = tape.slice(z, 3 * hidden, hidden);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let o = tape.sigmoid(zo);
    let g = tape.tanh(zg);
    let fc = tape.mul(f, c_prev);
    let ig = tape.mul(i, g);
    let c = tape.add(fc, ig);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

/// `z = mu + exp(0.5·log_var) ⊙ eps`; gradients flow to `mu` and `log_var`.
pub fn reparameterized_sample(tape: &mut Tape, mu: Var, log_var: Var, eps: &Tensor) -> Var {
    let eps = tape.leaf(eps.clone());
    let half_lv = tape.scale(log_var, 0.5);
    let std = tape.exp(half_lv);
    let noise = tape.mul(std, eps);
    tape.add(mu, noise)
}

/// `KL(N(mu, diag exp(log_var)) || N(0, I)) = ½ Σ (exp(lv) + mu² − 1 − lv)`.
pub fn kl_diag_gaussian_vs_standard(tape: &mut Tape, mu: Var, log_var: Var) -> Var {
    let var = tape.exp(log_var);
    let mu2 = tape.square(mu);
    let s = tape.add(var, mu2);
    let s = tape.sub(s, log_var);
    let s = tape.add_scalar(s, -1.0);
    let total = tape.sum(s);
    tape.scale(total, 0.5)
}

/// Softmax probabilities with gradients.
pub fn softmax_probs(tape: &mut Tape, logits: Var) -> Var {
    let ls = tape.log_softmax(logits);
    tape.exp(ls)
}

/// Log-probability of `action` under the categorical over `logits`.
pub fn categorical_log_prob(tape: &mut Tape, logits: Var, action: usize) -> Var {
    let ls = tape.log_softmax(logits);
    tape.index(ls, action)
}

/// Entropy `−Σ p log p` with gradients.
pub fn categorical_entropy(tape: &mut Tape, logits: Var) -> Var {
    let ls = tape.log_softmax(logits);
    let p = tape.exp(ls);
    let plp = tape.mul(p, ls);
    let s = tape.sum(plp);
    tape.neg(s)
}

/// `KL(old || new)` where `old` is a constant distribution and gradients flow
/// only through the new logits.
pub fn kl_categorical(tape: &mut Tape, old_probs: &[f64], new_logits: Var) -> Var {
    let ls_new = tape.log_softmax(new_logits);
    let p_old = tape.leaf(Tensor::vector(old_probs.to_vec()));
    let ls_old = tape.leaf(Tensor::vector(
        old_probs.iter().map(|&p| p.max(1e-300).ln()).collect(),
    ));
    let diff = tape.sub(ls_old, ls_new);
    let terms = tape.mul(p_old, diff);
    tape.sum(terms)
}

/// Temperature-1 sample from probabilities.
pub fn categorical_sample<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Forward-only evaluation used during rollouts; no tape, no gradients.
pub mod forward {
    /// `w·x + b`, `w` flattened row-major `[m, n]`.
    pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * n..(i + 1) * n];
            *o = b[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// One LSTM step matching [`super::lstm_cell`]; updates `h` and `c` in place.
    pub fn lstm_cell(w: &[f64], b: &[f64], x: &[f64], h: &mut Vec<f64>, c: &mut Vec<f64>) {
        let hidden = h.len();
        let mut xh = Vec::with_capacity(x.len() + hidden);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let mut z = vec![0.0; 4 * hidden];
        affine(w, b, &xh, &mut z);
        for k in 0..hidden {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hidden + k]);
            let o = sigmoid(z[2 * hidden + k]);
            let g = z[3 * hidden + k].tanh();
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
    }

    pub fn softmax(logits: &[f64]) -> Vec<f64> {
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|v| v / sum).collect()
    }

    pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        logits.iter().map(|v| v - lse).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParameterSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_zero_weights_zero_state() {
        let hidden = 4;
        let input = 3;
        let mut ps = ParameterSet::new(0);
        let ws = ps.insert("w", Tensor::zeros(vec![4 * hidden, input + hidden]));
        let bs = ps.insert("b", Tensor::zeros(vec![4 * hidden]));
        let mut tape = Tape::new();
        let w = tape.param(&ps, ws);
        let b = tape.param(&ps, bs);
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let h0 = tape.leaf(Tensor::zeros(vec![hidden]));
        let c0 = tape.leaf(Tensor::zeros(vec![hidden]));
        let (h, c) = lstm_cell(&mut tape, x, h0, c0, w, b);
        assert!(tape.value(h).data.iter().all(|&v| v == 0.0));
        assert!(tape.value(c).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_keeps_cell() {
        let hidden = 2;
        let input = 2;
        let mut ps = ParameterSet::new(0);
        let ws = ps.insert("w", Tensor::zeros(vec![4 * hidden, input + hidden]));
        // forget-gate bias 100 -> f ~= 1; input-gate bias -100 -> i ~= 0
        let mut bias = vec![0.0; 4 * hidden];
        for k in 0..hidden {
            bias[k] = -100.0;
            bias[hidden + k] = 100.0;
        }
        let bs = ps.insert("b", Tensor::vector(bias));
        let mut tape = Tape::new();
        let w = tape.param(&ps, ws);
        let b = tape.param(&ps, bs);
        let x = tape.leaf(Tensor::vector(vec![0.3, -0.7]));
        let h0 = tape.leaf(Tensor::zeros(vec![hidden]));
        let c0 = tape.leaf(Tensor::vector(vec![0.4, -0.9]));
        let (_, c) = lstm_cell(&mut tape, x, h0, c0, w, b);
        assert!((tape.value(c).data[0] - 0.4).abs() < 1e-9);
        assert!((tape.value(c).data[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn reparameterization_limits() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::vector(vec![1.5, -0.5]));
        let lv = tape.leaf(Tensor::filled(vec![2], -100.0));
        let eps = Tensor::vector(vec![3.0, -2.0]);
        let z = reparameterized_sample(&mut tape, mu, lv, &eps);
        assert!((tape.value(z).data[0] - 1.5).abs() < 1e-12);
        assert!((tape.value(z).data[1] + 0.5).abs() < 1e-12);

        let mu0 = tape.leaf(Tensor::zeros(vec![2]));
        let lv0 = tape.leaf(Tensor::zeros(vec![2]));
        let z = reparameterized_sample(&mut tape, mu0, lv0, &eps);
        assert_eq!(tape.value(z).data, eps.data);
    }

    #[test]
    fn reparameterization_monte_carlo_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mu_val = 0.7;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut tape = Tape::new();
            let mu = tape.leaf(Tensor::scalar(mu_val));
            let lv = tape.leaf(Tensor::scalar(0.0));
            let eps = Tensor::randn(vec![1], &mut rng);
            let z = reparameterized_sample(&mut tape, mu, lv, &eps);
            sum += tape.value(z).item();
        }
        let mean = sum / n as f64;
        // 3 sigma / sqrt(n) with sigma = 1
        assert!((mean - mu_val).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn kl_closed_forms() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::scalar(0.0));
        let lv = tape.leaf(Tensor::scalar(0.0));
        let kl = kl_diag_gaussian_vs_standard(&mut tape, mu, lv);
        assert!(tape.value(kl).item().abs() < 1e-15);

        let mu = tape.leaf(Tensor::scalar(1.0));
        let lv = tape.leaf(Tensor::scalar(0.0));
        let kl = kl_diag_gaussian_vs_standard(&mut tape, mu, lv);
        assert!((tape.value(kl).item() - 0.5).abs() < 1e-15);

        let mu = tape.leaf(Tensor::scalar(0.0));
        let lv = tape.leaf(Tensor::scalar(4.0f64.ln()));
        let kl = kl_diag_gaussian_vs_standard(&mut tape, mu, lv);
        let expected = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((tape.value(kl).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn categorical_uniform_and_saturated() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let p = softmax_probs(&mut tape, logits);
        for &v in &tape.value(p).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let h = categorical_entropy(&mut tape, logits);
        assert!((tape.value(h).item() - 3.0f64.ln()).abs() < 1e-12);

        let logits = tape.leaf(Tensor::vector(vec![100.0, 0.0, 0.0]));
        let p = softmax_probs(&mut tape, logits);
        assert!(tape.value(p).data[0] > 1.0 - 1e-12);
        let total: f64 = tape.value(p).data.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_matches_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probs = [0.2, 0.5, 0.3];
        let mut counts = [0usize; 3];
        let n = 50_000;
        for _ in 0..n {
            counts[categorical_sample(&probs, &mut rng)] += 1;
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / n as f64;
            assert!((freq - probs[i]).abs() < 0.01, "freq[{i}] = {freq}");
        }
    }

    #[test]
    fn forward_only_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let hidden = 5;
        let input = 4;
        let w = Tensor::randn(vec![4 * hidden, input + hidden], &mut rng);
        let b = Tensor::randn(vec![4 * hidden], &mut rng);
        let x = Tensor::randn(vec![input], &mut rng);
        let h0 = Tensor::randn(vec![hidden], &mut rng);
        let c0 = Tensor::randn(vec![hidden], &mut rng);

        let mut ps = ParameterSet::new(0);
        let ws = ps.insert("w", w.clone());
        let bs = ps.insert("b", b.clone());
        let mut tape = Tape::new();
        let wv = tape.param(&ps, ws);
        let bv = tape.param(&ps, bs);
        let xv = tape.leaf(x.clone());
        let hv = tape.leaf(h0.clone());
        let cv = tape.leaf(c0.clone());
        let (h_t, c_t) = lstm_cell(&mut tape, xv, hv, cv, wv, bv);

        let mut h = h0.data.clone();
        let mut c = c0.data.clone();
        forward::lstm_cell(&w.data, &b.data, &x.data, &mut h, &mut c);
        for k in 0..hidden {
            assert!((h[k] - tape.value(h_t).data[k]).abs() < 1e-12);
            assert!((c[k] - tape.value(c_t).data[k]).abs() < 1e-12);
        }
    }
}
