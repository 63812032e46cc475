//! Supervised episode execution shared by `run` and `ablate`: spawn a task,
//! let each agent's supervisor pick actions until the episode ends, and
//! return the trace.

use crate::errors::CliError;
use lrcam::config::RunConfig;
use lrcam::env::{Env, EpisodeTrace};
use lrcam::reachability::ValueFunction;
use lrcam::supervisor::{
    AgentSupervisor, ClassicalSupervisor, LearnedSupervisor, SupervisorKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub struct EpisodeSetup {
    pub cfg: RunConfig,
    pub vf: Arc<ValueFunction>,
    /// Agents `0..adopters` use the configured supervisor; the rest run the
    /// unsupervised default controller.
    pub adopters: usize,
    pub learned: Option<Arc<LearnedSupervisor>>,
}

impl EpisodeSetup {
    fn supervisor_for(&self, agent: usize) -> AgentSupervisor {
        if agent >= self.adopters {
            return AgentSupervisor::AlwaysDefault;
        }
        match self.cfg.supervisor.kind {
            SupervisorKind::Classical => AgentSupervisor::Classical(ClassicalSupervisor::new(
                self.cfg.supervisor.threshold,
                self.cfg.supervisor.hysteresis,
            )),
            SupervisorKind::Learned => AgentSupervisor::Learned(Arc::clone(
                self.learned.as_ref().expect("learned supervisor loaded before fan-out"),
            )),
            SupervisorKind::AlwaysDefault => AgentSupervisor::AlwaysDefault,
            SupervisorKind::AlwaysInterrupt => AgentSupervisor::AlwaysInterrupt,
        }
    }
}

/// Run one seeded episode. The seed is a pure function of `(rep, trial)`, so
/// results do not depend on worker scheduling.
pub fn run_episode(setup: &EpisodeSetup, rep: usize, trial: usize) -> Result<EpisodeTrace, CliError> {
    let cfg = &setup.cfg;
    let mut task = cfg.task.clone();
    task.seed = cfg.seed.wrapping_add((rep * cfg.trials + trial) as u64);

    let mut env = Env::new(
        cfg.env.clone(),
        &task,
        Arc::clone(&setup.vf),
        cfg.reward_kind,
        cfg.reward,
    )?;
    let n = env.n_agents();
    let mut supervisors: Vec<AgentSupervisor> = (0..n).map(|i| setup.supervisor_for(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed ^ 0x5eed_5eed_5eed_5eed);

    while !env.done() {
        let actions: Vec<u8> = (0..n)
            .map(|i| {
                let obs = env.observation(i);
                supervisors[i].decide(&obs, &setup.vf, &mut rng).action
            })
            .collect();
        env.step(&actions);
    }
    Ok(env.into_trace())
}
