//! LSTM-VAE over observation frames.
//!
//! Each frame (a variable-length list of neighbors) is fed to a recurrent
//! encoder in reverse canonical order so the most critical neighbor arrives
//! last; the final hidden state parameterizes a diagonal Gaussian over the
//! latent. A recurrent decoder unrolls the latent back into per-neighbor
//! features for the reconstruction term of the ELBO. The augmented latent an
//! agent's policy and critic consume stacks the four frame latents with the
//! one-hot encodings of the three past actions.

use crate::env::{NeighborEntry, Observation, ObservationFrame, HISTORY_ACTIONS, HISTORY_FRAMES};
use crate::nn::{
    forward, kl_diag_gaussian_vs_standard, lstm_cell, reparameterized_sample, scaled_uniform,
    ParameterSet, Tape, Tensor, Var,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Per-neighbor input features: planar offset, heading as (sin, cos), the
/// clamped safety value, and a presence flag (zero for the empty-frame token).
pub const FEATURE_DIM: usize = 6;
/// Supervisor action space size.
pub const N_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Observation ablation: encode only the current frame and drop the past
    /// actions instead of stacking the full history.
    pub single_frame: bool,
    /// Weight on the KL term (β-VAE); 1 is the plain ELBO. At full weight the
    /// posterior means collapse to near-zero amplitude on this data and the
    /// downstream policy cannot pick the state signal out of its input.
    pub kl_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { latent_dim: 16, hidden_dim: 64, single_frame: false, kl_weight: 0.1 }
    }
}

impl VaeConfig {
    /// Dimension of the stacked latent the policy and critic see.
    pub fn augmented_dim(&self) -> usize {
        if self.single_frame {
            self.latent_dim
        } else {
            HISTORY_FRAMES * self.latent_dim + HISTORY_ACTIONS * N_ACTIONS
        }
    }
}

pub fn entry_features(e: &NeighborEntry) -> [f64; FEATURE_DIM] {
    [e.rel.px, e.rel.py, e.rel.theta.sin(), e.rel.theta.cos(), e.value.clamp(-2.0, 5.0), 1.0]
}

/// Feature sequence in encoder order: least critical neighbor first, most
/// critical last. An empty frame yields a single all-zero token so the
/// recurrence always runs at least one step.
pub fn frame_feature_sequence(frame: &ObservationFrame) -> Vec<[f64; FEATURE_DIM]> {
    if frame.entries.is_empty() {
        return vec![[0.0; FEATURE_DIM]];
    }
    frame.entries.iter().rev().map(entry_features).collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct VaeSlots {
    pub enc_w: usize,
    pub enc_b: usize,
    pub mu_w: usize,
    pub mu_b: usize,
    pub lv_w: usize,
    pub lv_b: usize,
    pub dec_init_w: usize,
    pub dec_init_b: usize,
    pub dec_w: usize,
    pub dec_b: usize,
    pub dec_out_w: usize,
    pub dec_out_b: usize,
}

impl VaeSlots {
    pub fn resolve(ps: &ParameterSet) -> Self {
        let s = |n: &str| ps.slot(n).expect("vae parameter set is complete");
        Self {
            enc_w: s("enc_w"),
            enc_b: s("enc_b"),
            mu_w: s("mu_w"),
            mu_b: s("mu_b"),
            lv_w: s("lv_w"),
            lv_b: s("lv_b"),
            dec_init_w: s("dec_init_w"),
            dec_init_b: s("dec_init_b"),
            dec_w: s("dec_w"),
            dec_b: s("dec_b"),
            dec_out_w: s("dec_out_w"),
            dec_out_b: s("dec_out_b"),
        }
    }
}

fn lstm_bias(hidden: usize) -> Tensor {
    // forget gate biased open so early training does not wash out the cell
    let mut b = vec![0.0; 4 * hidden];
    for v in b.iter_mut().skip(hidden).take(hidden) {
        *v = 1.0;
    }
    Tensor::vector(b)
}

pub fn init_vae_params<R: Rng>(cfg: &VaeConfig, seed: u64, rng: &mut R) -> ParameterSet {
    let (h, l) = (cfg.hidden_dim, cfg.latent_dim);
    let mut ps = ParameterSet::new(seed);
    ps.insert("enc_w", scaled_uniform(4 * h, FEATURE_DIM + h, rng));
    ps.insert("enc_b", lstm_bias(h));
    ps.insert("mu_w", scaled_uniform(l, h, rng));
    ps.insert("mu_b", Tensor::zeros(vec![l]));
    ps.insert("lv_w", scaled_uniform(l, h, rng));
    ps.insert("lv_b", Tensor::zeros(vec![l]));
    ps.insert("dec_init_w", scaled_uniform(h, l, rng));
    ps.insert("dec_init_b", Tensor::zeros(vec![h]));
    ps.insert("dec_w", scaled_uniform(4 * h, FEATURE_DIM + h, rng));
    ps.insert("dec_b", lstm_bias(h));
    ps.insert("dec_out_w", scaled_uniform(FEATURE_DIM, h, rng));
    ps.insert("dec_out_b", Tensor::zeros(vec![FEATURE_DIM]));
    ps
}

/// Encode one frame on the tape; returns `(mu, log_var)`.
pub fn encode_frame(
    tape: &mut Tape,
    ps: &ParameterSet,
    cfg: &VaeConfig,
    frame: &ObservationFrame,
) -> (Var, Var) {
    let s = VaeSlots::resolve(ps);
    let w = tape.param(ps, s.enc_w);
    let b = tape.param(ps, s.enc_b);
    let mut h = tape.leaf(Tensor::zeros(vec![cfg.hidden_dim]));
    let mut c = tape.leaf(Tensor::zeros(vec![cfg.hidden_dim]));
    for feat in frame_feature_sequence(frame) {
        let x = tape.leaf(Tensor::vector(feat.to_vec()));
        let (h2, c2) = lstm_cell(tape, x, h, c, w, b);
        h = h2;
        c = c2;
    }
    let mu_w = tape.param(ps, s.mu_w);
    let mu_b = tape.param(ps, s.mu_b);
    let lv_w = tape.param(ps, s.lv_w);
    let lv_b = tape.param(ps, s.lv_b);
    let mu = tape.affine(mu_w, mu_b, h);
    let lv = tape.affine(lv_w, lv_b, h);
    (mu, lv)
}

/// Negative ELBO of one frame: Gaussian reconstruction negative
/// log-likelihood (unit observation variance) plus the KL to the standard
/// normal prior. `eps` supplies the reparameterization noise.
pub fn elbo_loss(
    tape: &mut Tape,
    ps: &ParameterSet,
    cfg: &VaeConfig,
    frame: &ObservationFrame,
    eps: &Tensor,
) -> Var {
    let s = VaeSlots::resolve(ps);
    let (mu, lv) = encode_frame(tape, ps, cfg, frame);
    let z = reparameterized_sample(tape, mu, lv, eps);
    let kl_raw = kl_diag_gaussian_vs_standard(tape, mu, lv);
    let kl = tape.scale(kl_raw, cfg.kl_weight);

    let init_w = tape.param(ps, s.dec_init_w);
    let init_b = tape.param(ps, s.dec_init_b);
    let dec_w = tape.param(ps, s.dec_w);
    let dec_b = tape.param(ps, s.dec_b);
    let out_w = tape.param(ps, s.dec_out_w);
    let out_b = tape.param(ps, s.dec_out_b);

    let h0 = tape.affine(init_w, init_b, z);
    let mut h = tape.tanh(h0);
    let mut c = tape.leaf(Tensor::zeros(vec![cfg.hidden_dim]));
    let zero_in = tape.leaf(Tensor::zeros(vec![FEATURE_DIM]));

    let seq = frame_feature_sequence(frame);
    let mut sq_sum: Option<Var> = None;
    for target in &seq {
        let (h2, c2) = lstm_cell(tape, zero_in, h, c, dec_w, dec_b);
        h = h2;
        c = c2;
        let xhat = tape.affine(out_w, out_b, h);
        let t = tape.leaf(Tensor::vector(target.to_vec()));
        let diff = tape.sub(xhat, t);
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        sq_sum = Some(match sq_sum {
            Some(acc) => tape.add(acc, s),
            None => s,
        });
    }
    let recon = tape.scale(sq_sum.expect("sequence is never empty"), 0.5);
    let d = (seq.len() * FEATURE_DIM) as f64;
    let recon = tape.add_scalar(recon, 0.5 * d * (2.0 * std::f64::consts::PI).ln());
    tape.add(recon, kl)
}

/// Forward-only encoder for the rollout hot path; no tape, no gradients.
pub struct VaeForward<'a> {
    ps: &'a ParameterSet,
    cfg: &'a VaeConfig,
    slots: VaeSlots,
}

impl<'a> VaeForward<'a> {
    pub fn new(ps: &'a ParameterSet, cfg: &'a VaeConfig) -> Self {
        let slots = VaeSlots::resolve(ps);
        Self { ps, cfg, slots }
    }

    /// `(mu, log_var)` for one frame.
    pub fn encode(&self, frame: &ObservationFrame) -> (Vec<f64>, Vec<f64>) {
        let w = &self.ps.tensor(self.slots.enc_w).data;
        let b = &self.ps.tensor(self.slots.enc_b).data;
        let mut h = vec![0.0; self.cfg.hidden_dim];
        let mut c = vec![0.0; self.cfg.hidden_dim];
        for feat in frame_feature_sequence(frame) {
            forward::lstm_cell(w, b, &feat, &mut h, &mut c);
        }
        let mut mu = vec![0.0; self.cfg.latent_dim];
        forward::affine(
            &self.ps.tensor(self.slots.mu_w).data,
            &self.ps.tensor(self.slots.mu_b).data,
            &h,
            &mut mu,
        );
        let mut lv = vec![0.0; self.cfg.latent_dim];
        forward::affine(
            &self.ps.tensor(self.slots.lv_w).data,
            &self.ps.tensor(self.slots.lv_b).data,
            &h,
            &mut lv,
        );
        (mu, lv)
    }

    /// Frame latent: the posterior mean, or a reparameterized sample when an
    /// RNG is supplied.
    pub fn latent<R: Rng>(&self, frame: &ObservationFrame, rng: Option<&mut R>) -> Vec<f64> {
        let (mut mu, lv) = self.encode(frame);
        if let Some(rng) = rng {
            let eps = Tensor::randn(vec![self.cfg.latent_dim], rng);
            for (k, m) in mu.iter_mut().enumerate() {
                *m += (0.5 * lv[k]).exp() * eps.data[k];
            }
        }
        mu
    }

    /// Stacked input for the policy and critic: frame latents newest-first,
    /// then one-hot past actions newest-first. In `single_frame` mode only
    /// the current frame's latent.
    pub fn augmented_latent<R: Rng>(&self, obs: &Observation, rng: Option<&mut R>) -> Vec<f64> {
        let mut rng = rng;
        let mut out = Vec::with_capacity(self.cfg.augmented_dim());
        if self.cfg.single_frame {
            out.extend(self.latent(&obs.frames[0], rng.as_deref_mut()));
            return out;
        }
        for frame in &obs.frames {
            out.extend(self.latent(frame, rng.as_deref_mut()));
        }
        for &a in &obs.past_actions {
            let mut one_hot = [0.0; N_ACTIONS];
            one_hot[(a as usize).min(N_ACTIONS - 1)] = 1.0;
            out.extend_from_slice(&one_hot);
        }
        out
    }
}
