//! Least-restrictive supervisors: map an agent's observation to an action in
//! {default, turning-right, turning-left}.
//!
//! The classical variant thresholds the minimum pairwise safety value and
//! steers against the most critical neighbor with the bang-bang avoidance
//! control; a hysteresis band prevents chattering at the boundary. The
//! learned variant encodes the observation history with the trained VAE and
//! evaluates the trained policy head.

use crate::env::{Observation, ObservationFrame};
use crate::learner::policy_forward;
use crate::learner::vae::VaeForward;
use crate::learner::{LearnerParams, VaeConfig};
use crate::reachability::ValueFunction;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisorKind {
    Classical,
    Learned,
    AlwaysDefault,
    AlwaysInterrupt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisionDecision {
    pub action: u8,
    pub min_value: f64,
    pub interrupted: bool,
}

impl SupervisionDecision {
    fn new(action: u8, min_value: f64) -> Self {
        Self { action, min_value, interrupted: action != 0 }
    }
}

/// Width of the dead-band on the bang-bang turn argument; ties and near-ties
/// resolve to turning right (action 2).
const TIE_BAND: f64 = 0.2;

/// Once a direction is held against a neighbor, it flips when the argument
/// crosses this much past zero on the other side.
const FLIP_BAND: f64 = 0.02;

/// Value-threshold baseline. Owns its per-agent hysteresis state.
#[derive(Debug, Clone)]
pub struct ClassicalSupervisor {
    pub threshold: f64,
    pub hysteresis: f64,
    interrupting: bool,
    /// Turn direction, decided on the first interrupt of the episode and kept
    /// for all later ones. The sign of the bang-bang argument chatters right
    /// on the symmetric (e.g. head-on) manifold; re-deciding it every step
    /// makes the agent wobble in place, and re-deciding it per interrupt makes
    /// successive avoidance maneuvers alternate handedness so no net lateral
    /// offset ever accumulates and symmetric pairs livelock.
    /// Held turn direction and the neighbor it was decided against.
    latched: Option<(usize, u8)>,
    /// Test hook: override the dead-band width.
    pub tie_band: f64,
}

impl ClassicalSupervisor {
    pub fn new(threshold: f64, hysteresis: f64) -> Self {
        Self { threshold, hysteresis, interrupting: false, latched: None, tie_band: TIE_BAND }
    }

    pub fn reset(&mut self) {
        self.interrupting = false;
        self.latched = None;
    }

    /// Decide from the agent's current frame (relative states and pairwise
    /// safety values, most critical first).
    pub fn supervise(&mut self, frame: &ObservationFrame, vf: &ValueFunction) -> SupervisionDecision {
        let min_value = frame.min_value();
        let bound = if self.interrupting { self.threshold + self.hysteresis } else { self.threshold };
        let Some(critical) = frame.most_critical() else {
            self.reset();
            return SupervisionDecision::new(0, min_value);
        };
        if min_value <= bound {
            self.interrupting = true;
            // Bang-bang turn from the Hamiltonian-maximizing argument. On
            // (near-)symmetric encounters the argument is ~0 and its raw sign
            // is grid-interpolation noise, so against a fixed neighbor the
            // direction only changes on a decisive signal: ties resolve to
            // turning right (action 2), and a held direction flips only when
            // the argument clears the dead-band on the opposite side
            // (re-deciding the raw sign every step makes the agent wobble in
            // place and symmetric pairs mirror each other forever). When the
            // most critical neighbor changes the hold is discarded: that is a
            // new encounter, and delaying the turn against it by the width of
            // the dead-band loses the race.
            let (qx, qy, qt) = vf.gradient_at(&critical.rel);
            let a = qx * critical.rel.py - qy * critical.rel.px - qt;
            let held = match self.latched {
                Some((who, dir)) if who == critical.neighbor => Some(dir),
                _ => None,
            };
            let action = match held {
                None => {
                    if a > self.tie_band {
                        1
                    } else {
                        2
                    }
                }
                // Once engaged, flip as soon as the argument decisively
                // changes sign: rapid alternation near the singular surface is
                // the bang-bang realization of running straight away, and
                // suppressing it traps the agent on a tight circle.
                Some(1) if a < -FLIP_BAND => 2,
                Some(2) if a > FLIP_BAND => 1,
                Some(dir) => dir,
            };
            self.latched = Some((critical.neighbor, action));
            SupervisionDecision::new(action, min_value)
        } else {
            self.reset();
            SupervisionDecision::new(0, min_value)
        }
    }
}

/// Trained LSTM-VAE encoder plus policy head.
pub struct LearnedSupervisor {
    params: LearnerParams,
    vae_cfg: VaeConfig,
    /// Sample actions (training) instead of argmax (evaluation).
    pub stochastic: bool,
}

impl LearnedSupervisor {
    pub fn new(params: LearnerParams, vae_cfg: VaeConfig, stochastic: bool) -> Self {
        Self { params, vae_cfg, stochastic }
    }

    pub fn params(&self) -> &LearnerParams {
        &self.params
    }

    /// Evaluation mode takes the argmax over action probabilities, ties
    /// broken by lowest action index; training mode samples.
    pub fn supervise(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> SupervisionDecision {
        let encoder = VaeForward::new(&self.params.vae, &self.vae_cfg);
        let latent = encoder.augmented_latent(obs, self.stochastic.then_some(&mut *rng));
        let probs = policy_forward(&self.params.policy, &latent);
        let action = if self.stochastic {
            crate::nn::categorical_sample(&probs, rng) as u8
        } else {
            argmax_lowest_index(&probs) as u8
        };
        SupervisionDecision::new(action, obs.frames[0].min_value())
    }
}

fn argmax_lowest_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// One supervisor instance per agent.
pub enum AgentSupervisor {
    Classical(ClassicalSupervisor),
    Learned(std::sync::Arc<LearnedSupervisor>),
    AlwaysDefault,
    AlwaysInterrupt,
}

impl AgentSupervisor {
    pub fn decide(
        &mut self,
        obs: &Observation,
        vf: &ValueFunction,
        rng: &mut ChaCha8Rng,
    ) -> SupervisionDecision {
        match self {
            AgentSupervisor::Classical(c) => c.supervise(&obs.frames[0], vf),
            AgentSupervisor::Learned(l) => l.supervise(obs, rng),
            AgentSupervisor::AlwaysDefault => {
                SupervisionDecision::new(0, obs.frames[0].min_value())
            }
            AgentSupervisor::AlwaysInterrupt => {
                SupervisionDecision::new(1, obs.frames[0].min_value())
            }
        }
    }
}
