//! Task generation: moderate (annulus) and difficult (circle-crossing)
//! scenarios.

use crate::dynamics::AgentState;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scenario {
    /// Starts and goals sampled in the annulus `[r1, r2]` with perturbation.
    Moderate { r1: f64, r2: f64 },
    /// Starts equally spaced on the circle of radius `r` with angular jitter;
    /// goals antipodal, so every agent crosses the center.
    Difficult { r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub n_agents: usize,
    pub scenario: Scenario,
    pub seed: u64,
    /// Agents held stationary for the whole episode (static-obstacle mode).
    #[serde(default)]
    pub frozen_agents: Vec<usize>,
    pub horizon: usize,
    /// Angular jitter (radians) applied to difficult-scenario start angles.
    #[serde(default = "default_jitter")]
    pub angular_jitter: f64,
}

fn default_jitter() -> f64 {
    10.0 * PI / 180.0
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), SpawnError> {
        if self.n_agents < 2 {
            return Err(SpawnError::Degenerate("need at least 2 agents".into()));
        }
        if let Scenario::Moderate { r1, r2 } = self.scenario {
            if r1 > r2 || r1 < 0.0 {
                return Err(SpawnError::Degenerate(format!("bad annulus [{r1}, {r2}]")));
            }
        }
        if self.horizon == 0 {
            return Err(SpawnError::Degenerate("zero horizon".into()));
        }
        if self.frozen_agents.iter().any(|&i| i >= self.n_agents) {
            return Err(SpawnError::Degenerate("frozen index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SpawnError {
    #[error("degenerate task spec: {0}")]
    Degenerate(String),
    #[error("could not satisfy spawn separation after {0} attempts")]
    SeparationFailed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpawnedTask {
    pub starts: Vec<AgentState>,
    pub goals: Vec<(f64, f64)>,
}

const MAX_ATTEMPTS: usize = 1000;

/// Sample initial states and goals. Starts keep pairwise planar distance
/// `> 2d`; initial headings face the goal.
pub fn spawn_task<R: Rng>(
    spec: &TaskSpec,
    collision_radius: f64,
    rng: &mut R,
) -> Result<SpawnedTask, SpawnError> {
    spec.validate()?;
    let n = spec.n_agents;
    let min_sep = 2.0 * collision_radius;

    for _ in 0..MAX_ATTEMPTS {
        let (positions, goals) = match spec.scenario {
            Scenario::Moderate { r1, r2 } => {
                let mut pos = Vec::with_capacity(n);
                let mut goals = Vec::with_capacity(n);
                for _ in 0..n {
                    pos.push(annulus_point(r1, r2, rng));
                    goals.push(annulus_point(r1, r2, rng));
                }
                // small positional perturbation on starts
                for p in pos.iter_mut() {
                    p.0 += rng.gen_range(-0.05..0.05);
                    p.1 += rng.gen_range(-0.05..0.05);
                }
                (pos, goals)
            }
            Scenario::Difficult { r } => {
                let mut pos = Vec::with_capacity(n);
                let mut goals = Vec::with_capacity(n);
                for k in 0..n {
                    let jitter = if spec.angular_jitter > 0.0 {
                        rng.gen_range(-spec.angular_jitter..spec.angular_jitter)
                    } else {
                        0.0
                    };
                    let ang = 2.0 * PI * k as f64 / n as f64 + jitter;
                    pos.push((r * ang.cos(), r * ang.sin()));
                    goals.push((-r * ang.cos(), -r * ang.sin()));
                }
                (pos, goals)
            }
        };

        let ok_sep = (0..n).all(|i| {
            (i + 1..n).all(|j| {
                let dx = positions[i].0 - positions[j].0;
                let dy = positions[i].1 - positions[j].1;
                (dx * dx + dy * dy).sqrt() > min_sep
            })
        });
        let ok_goals = (0..n).all(|i| {
            (i + 1..n).all(|j| {
                let dx = goals[i].0 - goals[j].0;
                let dy = goals[i].1 - goals[j].1;
                (dx * dx + dy * dy).sqrt() > 1e-6
            })
        });
        if !ok_sep || !ok_goals {
            continue;
        }

        let starts = positions
            .iter()
            .zip(&goals)
            .map(|(&(x, y), &(gx, gy))| AgentState::new(x, y, (gy - y).atan2(gx - x)))
            .collect();
        return Ok(SpawnedTask { starts, goals });
    }
    Err(SpawnError::SeparationFailed(MAX_ATTEMPTS))
}

fn annulus_point<R: Rng>(r1: f64, r2: f64, rng: &mut R) -> (f64, f64) {
    let ang = rng.gen_range(0.0..2.0 * PI);
    let radius = if r2 > r1 { rng.gen_range(r1..=r2) } else { r1 };
    (radius * ang.cos(), radius * ang.sin())
}
