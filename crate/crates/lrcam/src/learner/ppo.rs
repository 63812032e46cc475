//! PPO machinery: policy and critic heads, generalized advantage estimation,
//! the clipped surrogate with a KL penalty to the behavior policy, and the
//! bootstrapped critic regression against a slowly-tracking target network.

use crate::nn::{
    categorical_log_prob, forward, kl_categorical, scaled_uniform, ParameterSet, Tape, Tensor,
    Var,
};
use super::vae::{VaeConfig, N_ACTIONS};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    /// GAE trace decay; 1 reduces the estimator to discounted Monte-Carlo
    /// minus the baseline.
    pub lambda: f64,
    pub clip_eps: f64,
    /// Weight of the KL penalty to the rollout policy.
    pub kl_beta: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_vae: f64,
    /// Polyak factor for the target critic.
    pub tau: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 1.0,
            clip_eps: 0.2,
            kl_beta: 0.01,
            epochs: 5,
            minibatch: 64,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            lr_vae: 3e-4,
            tau: 0.005,
        }
    }
}

pub fn init_policy_params<R: Rng>(cfg: &VaeConfig, seed: u64, rng: &mut R) -> ParameterSet {
    let (z, h) = (cfg.augmented_dim(), cfg.hidden_dim);
    let mut ps = ParameterSet::new(seed);
    ps.insert("w1", scaled_uniform(h, z, rng));
    ps.insert("b1", Tensor::zeros(vec![h]));
    ps.insert("w2", scaled_uniform(N_ACTIONS, h, rng));
    ps.insert("b2", Tensor::zeros(vec![N_ACTIONS]));
    ps
}

pub fn init_critic_params<R: Rng>(cfg: &VaeConfig, seed: u64, rng: &mut R) -> ParameterSet {
    let (z, h) = (cfg.augmented_dim(), cfg.hidden_dim);
    let mut ps = ParameterSet::new(seed);
    ps.insert("w1", scaled_uniform(h, z, rng));
    ps.insert("b1", Tensor::zeros(vec![h]));
    ps.insert("w2", scaled_uniform(1, h, rng));
    ps.insert("b2", Tensor::zeros(vec![1]));
    ps
}

fn head_slots(ps: &ParameterSet) -> (usize, usize, usize, usize) {
    let s = |n: &str| ps.slot(n).expect("head parameter set is complete");
    (s("w1"), s("b1"), s("w2"), s("b2"))
}

fn head_tape(tape: &mut Tape, ps: &ParameterSet, z: Var) -> Var {
    let (w1, b1, w2, b2) = head_slots(ps);
    let w1 = tape.param(ps, w1);
    let b1 = tape.param(ps, b1);
    let w2 = tape.param(ps, w2);
    let b2 = tape.param(ps, b2);
    let a = tape.affine(w1, b1, z);
    let t = tape.tanh(a);
    tape.affine(w2, b2, t)
}

fn head_forward(ps: &ParameterSet, z: &[f64]) -> Vec<f64> {
    let (w1, b1, w2, b2) = head_slots(ps);
    let hidden = ps.tensor(b1).len();
    let mut a = vec![0.0; hidden];
    forward::affine(&ps.tensor(w1).data, &ps.tensor(b1).data, z, &mut a);
    for v in a.iter_mut() {
        *v = v.tanh();
    }
    let out_dim = ps.tensor(b2).len();
    let mut out = vec![0.0; out_dim];
    forward::affine(&ps.tensor(w2).data, &ps.tensor(b2).data, &a, &mut out);
    out
}

/// Action logits on the tape.
pub fn policy_logits(tape: &mut Tape, ps: &ParameterSet, z: Var) -> Var {
    head_tape(tape, ps, z)
}

/// Action probabilities, forward-only.
pub fn policy_forward(ps: &ParameterSet, z: &[f64]) -> Vec<f64> {
    forward::softmax(&head_forward(ps, z))
}

/// State value on the tape.
pub fn critic_value(tape: &mut Tape, ps: &ParameterSet, z: Var) -> Var {
    head_tape(tape, ps, z)
}

/// State value, forward-only.
pub fn critic_forward(ps: &ParameterSet, z: &[f64]) -> f64 {
    head_forward(ps, z)[0]
}

/// Generalized advantage estimation. `values` holds one more entry than
/// `rewards`: the bootstrap value of the state after the last transition
/// (zero when that state is terminal).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap");
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// One stored step of one agent's episode.
#[derive(Debug, Clone)]
pub struct Transition {
    /// Augmented latent the action was taken from (detached).
    pub latent: Vec<f64>,
    pub action: u8,
    pub reward: f64,
    /// Latent after the step; `None` at a terminal state (bootstrap zero).
    pub next_latent: Option<Vec<f64>>,
    /// Behavior-policy probabilities at rollout time.
    pub old_probs: Vec<f64>,
    pub old_log_prob: f64,
    /// GAE advantage, filled after the episode completes.
    pub advantage: f64,
}

/// Per-task on-policy buffer; cleared every training round.
#[derive(Debug, Default)]
pub struct ReplayBuffer {
    pub transitions: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }

    /// Standardize advantages to zero mean, unit variance across the buffer.
    pub fn normalize_advantages(&mut self) {
        let n = self.transitions.len();
        if n < 2 {
            return;
        }
        let mean = self.transitions.iter().map(|t| t.advantage).sum::<f64>() / n as f64;
        let var = self
            .transitions
            .iter()
            .map(|t| (t.advantage - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt().max(1e-8);
        for t in &mut self.transitions {
            t.advantage = (t.advantage - mean) / std;
        }
    }
}

/// Clipped-surrogate policy loss over a minibatch, plus the KL penalty to the
/// behavior policy. Gradients flow only into the policy head; the latents are
/// constants.
pub fn policy_loss(
    tape: &mut Tape,
    ps: &ParameterSet,
    batch: &[&Transition],
    clip_eps: f64,
    kl_beta: f64,
) -> Var {
    assert!(!batch.is_empty());
    let mut total: Option<Var> = None;
    for tr in batch {
        let z = tape.leaf(Tensor::vector(tr.latent.clone()));
        let logits = policy_logits(tape, ps, z);
        let logp = categorical_log_prob(tape, logits, tr.action as usize);
        let logp_diff = tape.add_scalar(logp, -tr.old_log_prob);
        let ratio = tape.exp(logp_diff);
        let surr1 = tape.scale(ratio, tr.advantage);
        let clipped = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
        let surr2 = tape.scale(clipped, tr.advantage);
        let surr = tape.min(surr1, surr2);
        let neg_surr = tape.neg(surr);
        let kl = kl_categorical(tape, &tr.old_probs, logits);
        let kl_term = tape.scale(kl, kl_beta);
        let term = tape.add(neg_surr, kl_term);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    tape.scale(total.unwrap(), 1.0 / batch.len() as f64)
}

/// Mean squared error of the critic against the one-step bootstrapped target
/// `r + gamma * V_target(z')`, with zero bootstrap at terminal states. The
/// targets are computed with the frozen target network, outside the tape.
pub fn critic_loss(
    tape: &mut Tape,
    ps: &ParameterSet,
    target_ps: &ParameterSet,
    batch: &[&Transition],
    gamma: f64,
) -> Var {
    assert!(!batch.is_empty());
    let mut total: Option<Var> = None;
    for tr in batch {
        let y = tr.reward
            + gamma
                * tr.next_latent
                    .as_ref()
                    .map(|z| critic_forward(target_ps, z))
                    .unwrap_or(0.0);
        let z = tape.leaf(Tensor::vector(tr.latent.clone()));
        let v = critic_value(tape, ps, z);
        let err = tape.add_scalar(v, -y);
        let sq = tape.square(err);
        total = Some(match total {
            Some(acc) => tape.add(acc, sq),
            None => sq,
        });
    }
    let total = total.unwrap();
    let s = tape.sum(total);
    tape.scale(s, 1.0 / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> VaeConfig {
        VaeConfig { latent_dim: 2, hidden_dim: 4, ..VaeConfig::default() }
    }

    #[test]
    fn gae_matches_recursion_oracle() {
        let rewards = [1.0, -0.5, 2.0, 0.0, 3.0];
        let values = [0.3, -0.1, 0.7, 0.2, -0.4, 0.9];
        let (gamma, lambda) = (0.95, 0.8);
        let adv = gae(&rewards, &values, gamma, lambda);

        // direct double-sum: A_t = sum_l (gamma*lambda)^l * delta_{t+l}
        let deltas: Vec<f64> = (0..rewards.len())
            .map(|t| rewards[t] + gamma * values[t + 1] - values[t])
            .collect();
        for t in 0..rewards.len() {
            let mut expect = 0.0;
            for (l, d) in deltas[t..].iter().enumerate() {
                expect += (gamma * lambda).powi(l as i32) * d;
            }
            assert!((adv[t] - expect).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn gae_lambda_one_is_discounted_return_minus_baseline() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, 0.1, -0.2, 0.0];
        let gamma = 0.9;
        let adv = gae(&rewards, &values, gamma, 1.0);
        let ret0 = 1.0 + 0.9 * 2.0 + 0.81 * 3.0;
        assert!((adv[0] - (ret0 - 0.5)).abs() < 1e-12);
    }

    fn make_transition(latent: Vec<f64>, action: u8, probs: Vec<f64>, advantage: f64) -> Transition {
        let old_log_prob = probs[action as usize].ln();
        Transition {
            latent,
            action,
            reward: 0.0,
            next_latent: None,
            old_probs: probs,
            old_log_prob,
            advantage,
        }
    }

    #[test]
    fn surrogate_is_clipped_and_kl_anchors() {
        // at the behavior policy (ratio = 1) the surrogate term is -A and the
        // KL vanishes, so loss = -A exactly
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = init_policy_params(&cfg, 1, &mut rng);
        let z = vec![0.25; cfg.augmented_dim()];
        let probs = policy_forward(&ps, &z);
        let tr = make_transition(z, 1, probs, 0.7);
        let mut tape = Tape::new();
        let loss = policy_loss(&mut tape, &ps, &[&tr], 0.2, 0.5);
        assert!((tape.value(loss).item() + 0.7).abs() < 1e-12);
    }

    #[test]
    fn policy_gradient_increases_advantaged_action() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = init_policy_params(&cfg, 7, &mut rng);
        let z = vec![0.5; cfg.augmented_dim()];
        let probs = policy_forward(&ps, &z);
        let tr = make_transition(z.clone(), 2, probs.clone(), 1.0);
        let mut adam = crate::nn::Adam::new(0.05, &ps);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let loss = policy_loss(&mut tape, &ps, &[&tr], 10.0, 0.0);
            tape.backward(loss, &mut ps);
            adam.step(&mut ps);
        }
        let after = policy_forward(&ps, &z);
        assert!(after[2] > probs[2], "p(a=2) should grow: {} -> {}", probs[2], after[2]);
    }

    #[test]
    fn critic_regresses_to_targets() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = init_critic_params(&cfg, 3, &mut rng);
        let target = ps.clone(); // frozen copy; next_latent is None anyway
        let z1 = vec![1.0; cfg.augmented_dim()];
        let z2 = vec![-1.0; cfg.augmented_dim()];
        let t1 = Transition {
            latent: z1.clone(),
            action: 0,
            reward: 2.0,
            next_latent: None,
            old_probs: vec![1.0, 0.0, 0.0],
            old_log_prob: 0.0,
            advantage: 0.0,
        };
        let t2 = Transition { latent: z2.clone(), reward: -1.0, ..t1.clone() };
        let mut adam = crate::nn::Adam::new(0.02, &ps);
        for _ in 0..400 {
            let mut tape = Tape::new();
            let loss = critic_loss(&mut tape, &ps, &target, &[&t1, &t2], 0.99);
            tape.backward(loss, &mut ps);
            adam.step(&mut ps);
        }
        assert!((critic_forward(&ps, &z1) - 2.0).abs() < 0.05);
        assert!((critic_forward(&ps, &z2) + 1.0).abs() < 0.05);
    }

    #[test]
    fn bootstrap_uses_target_network() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ps = init_critic_params(&cfg, 4, &mut rng);
        let mut target = ps.clone();
        // push the target output away by biasing its last layer
        let b2 = target.slot("b2").unwrap();
        target.tensor_mut(b2).data[0] = 10.0;
        let z = vec![0.3; cfg.augmented_dim()];
        let zn = vec![0.6; cfg.augmented_dim()];
        let tr = Transition {
            latent: z.clone(),
            action: 0,
            reward: 1.0,
            next_latent: Some(zn.clone()),
            old_probs: vec![1.0, 0.0, 0.0],
            old_log_prob: 0.0,
            advantage: 0.0,
        };
        let y = 1.0 + 0.9 * critic_forward(&target, &zn);
        let mut tape = Tape::new();
        let loss = critic_loss(&mut tape, &ps, &target, &[&tr], 0.9);
        let expected = (critic_forward(&ps, &z) - y).powi(2);
        assert!((tape.value(loss).item() - expected).abs() < 1e-10);
    }

    #[test]
    fn advantage_normalization() {
        let mut buf = ReplayBuffer::default();
        for a in [1.0, 2.0, 3.0, 4.0] {
            buf.transitions.push(Transition {
                latent: vec![],
                action: 0,
                reward: 0.0,
                next_latent: None,
                old_probs: vec![1.0],
                old_log_prob: 0.0,
                advantage: a,
            });
        }
        buf.normalize_advantages();
        let mean: f64 =
            buf.transitions.iter().map(|t| t.advantage).sum::<f64>() / buf.len() as f64;
        let var: f64 = buf.transitions.iter().map(|t| t.advantage.powi(2)).sum::<f64>()
            / buf.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
