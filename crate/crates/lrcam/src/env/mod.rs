//! Multi-agent episodic environment: spawning, default controllers, state
//! noise, collision/termination detection, observation assembly, and metrics.

mod observation;
mod task;
mod trace;

pub use observation::{
    History, NeighborEntry, Observation, ObservationFrame, HISTORY_ACTIONS, HISTORY_FRAMES,
};
pub use task::{spawn_task, Scenario, SpawnError, SpawnedTask, TaskSpec};
pub use trace::{
    restrictiveness_factor, success_rate, success_rate_subset, AgentStatus, AgentStep,
    EpisodeTrace, TraceError, TraceStep,
};

use crate::dynamics::{
    relative_state, step_agent, wrap_angle, AgentState, ControlInput, DynamicsParams,
};
use crate::reachability::ValueFunction;
use crate::reward::{step_reward, RewardConfig, RewardKind, StepOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Heading gain of the goal-reaching default controller.
const HEADING_GAIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub dynamics: DynamicsParams,
    /// Collision radius; matches the value function's `GameParams.d`.
    pub collision_radius: f64,
    pub goal_tolerance: f64,
    /// Std-dev of the zero-mean Gaussian noise on observed positions (m).
    pub noise_pos: f64,
    /// Std-dev of the noise on observed headings (rad).
    pub noise_theta: f64,
    /// Dubins mode: the default controller always commands `v_max`, matching
    /// the game dynamics the value function was solved for.
    pub fixed_speed: bool,
    /// Remove agents from the arena when they finish instead of letting them
    /// stop-and-stay as obstacles.
    pub remove_finished: bool,
    /// Observation truncation: keep only the `m` most critical neighbors.
    pub max_neighbors: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsParams::default(),
            collision_radius: 0.35,
            goal_tolerance: 0.15,
            noise_pos: 0.01,
            noise_theta: 0.01,
            fixed_speed: false,
            remove_finished: false,
            max_neighbors: None,
        }
    }
}

/// Goal-reaching proportional controller. Heading error is servoed with a
/// saturated proportional law; speed backs off with heading error and with
/// distance once within `3d` of the goal.
pub fn default_controller(
    state: &AgentState,
    goal: (f64, f64),
    params: &DynamicsParams,
    collision_radius: f64,
    fixed_speed: bool,
) -> ControlInput {
    let dx = goal.0 - state.px;
    let dy = goal.1 - state.py;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist < 1e-9 && !fixed_speed {
        return ControlInput::new(0.0, 0.0);
    }
    let bearing = dy.atan2(dx);
    let err = wrap_angle(bearing - state.theta);
    let omega = (HEADING_GAIN * err).clamp(-params.omega_max, params.omega_max);
    let v = if fixed_speed {
        params.v_max
    } else {
        params.v_max * err.cos().max(0.0) * (dist / (3.0 * collision_radius)).min(1.0)
    };
    ControlInput::new(v, omega)
}

/// Map a discrete action to a control: 0 passes the default controller
/// through, 1 is turning-right `(v_max, +ω_max)`, 2 is turning-left
/// `(v_max, -ω_max)`.
pub fn action_to_control(action: u8, default: ControlInput, params: &DynamicsParams) -> ControlInput {
    match action {
        0 => default,
        1 => ControlInput::new(params.v_max, params.omega_max),
        _ => ControlInput::new(params.v_max, -params.omega_max),
    }
}

/// Running episode state.
pub struct Env {
    pub config: EnvConfig,
    pub reward_cfg: RewardConfig,
    pub reward_kind: RewardKind,
    vf: Arc<ValueFunction>,
    goals: Vec<(f64, f64)>,
    states: Vec<AgentState>,
    statuses: Vec<AgentStatus>,
    histories: Vec<History>,
    observed: Vec<AgentState>,
    t: usize,
    horizon: usize,
    noise_rng: ChaCha8Rng,
    trace: EpisodeTrace,
}

impl Env {
    pub fn new(
        config: EnvConfig,
        spec: &TaskSpec,
        vf: Arc<ValueFunction>,
        reward_kind: RewardKind,
        reward_cfg: RewardConfig,
    ) -> Result<Self, SpawnError> {
        let mut spawn_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let spawned = spawn_task(spec, config.collision_radius, &mut spawn_rng)?;
        let n = spec.n_agents;
        let statuses: Vec<AgentStatus> = (0..n)
            .map(|i| {
                if spec.frozen_agents.contains(&i) {
                    AgentStatus::Frozen
                } else {
                    AgentStatus::Active
                }
            })
            .collect();
        let mut env = Self {
            trace: EpisodeTrace {
                steps: Vec::new(),
                final_status: statuses.clone(),
                collision_radius: config.collision_radius,
            },
            noise_rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15),
            goals: spawned.goals,
            states: spawned.starts,
            statuses,
            histories: Vec::new(),
            observed: Vec::new(),
            t: 0,
            horizon: spec.horizon,
            config,
            vf,
            reward_kind,
            reward_cfg,
        };
        env.refresh_observed();
        let frames: Vec<ObservationFrame> = (0..n).map(|i| env.build_frame(i)).collect();
        env.histories = frames.into_iter().map(History::new).collect();
        Ok(env)
    }

    pub fn n_agents(&self) -> usize {
        self.states.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn status(&self, agent: usize) -> AgentStatus {
        self.statuses[agent]
    }

    pub fn state(&self, agent: usize) -> &AgentState {
        &self.states[agent]
    }

    pub fn goal(&self, agent: usize) -> (f64, f64) {
        self.goals[agent]
    }

    pub fn value_function(&self) -> &ValueFunction {
        &self.vf
    }

    /// The current canonical frame seen by `agent` (noisy states).
    pub fn frame(&self, agent: usize) -> &ObservationFrame {
        self.histories[agent].current_frame()
    }

    pub fn observation(&self, agent: usize) -> Observation {
        self.histories[agent].observation()
    }

    /// Noisy observed state of `agent`, the one default controllers act on.
    pub fn observed_state(&self, agent: usize) -> &AgentState {
        &self.observed[agent]
    }

    pub fn done(&self) -> bool {
        self.t >= self.horizon || self.statuses.iter().all(|s| s.is_terminal())
    }

    pub fn into_trace(mut self) -> EpisodeTrace {
        self.trace.final_status = self.statuses.clone();
        self.trace
    }

    fn present(&self, agent: usize) -> bool {
        match self.statuses[agent] {
            AgentStatus::Active | AgentStatus::Frozen => true,
            AgentStatus::Success => !self.config.remove_finished,
            _ => false,
        }
    }

    fn refresh_observed(&mut self) {
        self.observed = self
            .states
            .iter()
            .map(|s| {
                AgentState::new(
                    s.px + self.config.noise_pos * normal(&mut self.noise_rng),
                    s.py + self.config.noise_pos * normal(&mut self.noise_rng),
                    s.theta + self.config.noise_theta * normal(&mut self.noise_rng),
                )
            })
            .collect();
    }

    fn build_frame(&self, agent: usize) -> ObservationFrame {
        let mut entries = Vec::new();
        for j in 0..self.n_agents() {
            if j == agent || !self.present(j) {
                continue;
            }
            let rel = relative_state(&self.observed[agent], &self.observed[j]);
            let value = self.vf.value_at(&rel);
            entries.push(NeighborEntry { neighbor: j, rel, value });
        }
        ObservationFrame::new(entries, self.config.max_neighbors)
    }

    /// Advance one time step. `actions[i]` is ignored for agents that are
    /// already terminal or frozen. Returns per-agent rewards.
    pub fn step(&mut self, actions: &[u8]) -> Vec<f64> {
        assert_eq!(actions.len(), self.n_agents());
        assert!(!self.done(), "step() on a finished episode");
        let n = self.n_agents();
        let pre_states = self.states.clone();
        let was_active: Vec<bool> =
            self.statuses.iter().map(|&s| s == AgentStatus::Active).collect();

        // apply controls on ground truth
        for i in 0..n {
            if self.statuses[i] != AgentStatus::Active {
                continue;
            }
            let default = default_controller(
                &self.observed[i],
                self.goals[i],
                &self.config.dynamics,
                self.config.collision_radius,
                self.config.fixed_speed,
            );
            let u = action_to_control(actions[i], default, &self.config.dynamics);
            self.states[i] = step_agent(&self.states[i], &u, &self.config.dynamics)
                .expect("controls are in bounds by construction");
        }

        // ground-truth collision detection among present agents
        let mut collided = vec![false; n];
        for i in 0..n {
            for j in i + 1..n {
                if !self.present(i) || !self.present(j) {
                    continue;
                }
                if self.states[i].planar_distance(&self.states[j]) <= self.config.collision_radius {
                    collided[i] = true;
                    collided[j] = true;
                }
            }
        }

        let mut rewards = vec![0.0; n];
        let mut finished = vec![false; n];
        for i in 0..n {
            if self.statuses[i] != AgentStatus::Active {
                continue;
            }
            if collided[i] {
                self.statuses[i] = AgentStatus::Collision;
            } else {
                let (gx, gy) = self.goals[i];
                let dist = ((self.states[i].px - gx).powi(2) + (self.states[i].py - gy).powi(2)).sqrt();
                if dist <= self.config.goal_tolerance {
                    self.statuses[i] = AgentStatus::Success;
                    finished[i] = true;
                }
            }
        }

        for i in 0..n {
            if !was_active[i] {
                continue;
            }
            let min_value = self.min_pair_quantity(i);
            let outcome = StepOutcome::new(
                self.statuses[i] == AgentStatus::Collision,
                finished[i],
                min_value,
                actions[i],
            );
            rewards[i] = step_reward(self.reward_kind, &outcome, &self.reward_cfg);
        }

        // record the step: pre-step pose, the action taken from it
        let mut pair_values = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let rel = relative_state(&pre_states[i], &pre_states[j]);
                pair_values.push(self.vf.value_at(&rel));
            }
        }
        let agents = (0..n)
            .map(|i| {
                let acting = was_active[i];
                let action = if acting { actions[i] } else { 0 };
                AgentStep {
                    px: pre_states[i].px,
                    py: pre_states[i].py,
                    theta: pre_states[i].theta,
                    action,
                    interrupt: acting && action != 0,
                    acting,
                    reward: rewards[i],
                    status: self.statuses[i],
                }
            })
            .collect();
        self.trace.steps.push(TraceStep { t: self.t, agents, pair_values });

        self.t += 1;
        if self.t >= self.horizon {
            for s in self.statuses.iter_mut() {
                if *s == AgentStatus::Active {
                    *s = AgentStatus::Timeout;
                }
            }
        }

        // refresh noisy observations and roll histories
        self.refresh_observed();
        for i in 0..n {
            let frame = self.build_frame(i);
            self.histories[i].push_action(actions[i]);
            self.histories[i].push_frame(frame);
        }

        rewards
    }

    /// Min over present others of the pairwise quantity the reward uses:
    /// safety value for the HJ reward, Euclidean distance for the ablation.
    fn min_pair_quantity(&self, agent: usize) -> f64 {
        let mut min_v = f64::INFINITY;
        for j in 0..self.n_agents() {
            if j == agent || !self.present(j) {
                continue;
            }
            let q = match self.reward_kind {
                RewardKind::Hj => {
                    let rel = relative_state(&self.states[agent], &self.states[j]);
                    self.vf.value_at(&rel)
                }
                RewardKind::Distance => self.states[agent].planar_distance(&self.states[j]),
            };
            min_v = min_v.min(q);
        }
        min_v
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    crate::nn::Tensor::randn(vec![1], rng).data[0]
}
