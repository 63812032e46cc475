//! Learned supervisor training: an LSTM-VAE observation encoder and a PPO
//! policy/critic pair over the augmented latent, trained round by round on
//! fresh on-policy rollouts with an initial encoder-only heat-up phase.

pub mod ppo;
pub mod train;
pub mod vae;

pub use ppo::{
    critic_forward, critic_loss, critic_value, gae, init_critic_params, init_policy_params,
    policy_forward, policy_logits, policy_loss, PpoConfig, ReplayBuffer, Transition,
};
pub use train::{train, LearnerParams, RoundMetrics, TrainConfig, TrainError, TrainResult};
pub use vae::{
    elbo_loss, encode_frame, entry_features, frame_feature_sequence, init_vae_params, VaeConfig,
    VaeForward, FEATURE_DIM, N_ACTIONS,
};
