//! Episode traces (JSON lines) and the evaluation metrics computed from them.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentStatus {
    Active,
    Success,
    Collision,
    Timeout,
    Frozen,
}

impl AgentStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, AgentStatus::Active)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub action: u8,
    pub interrupt: bool,
    /// True when the agent actually took an action this step (it was active
    /// at the start of the step).
    pub acting: bool,
    pub reward: f64,
    pub status: AgentStatus,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub agents: Vec<AgentStep>,
    /// Pairwise safety values in `(i, j), i < j` order, row by row.
    pub pair_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    /// Terminal status per agent at episode end.
    pub final_status: Vec<AgentStatus>,
    /// Collision radius used, for plotting.
    pub collision_radius: f64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("empty trace file")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    collision_radius: f64,
    final_status: Vec<AgentStatus>,
}

impl EpisodeTrace {
    /// First line is a header with the collision radius and final statuses;
    /// each following line is one `TraceStep`.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), TraceError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = TraceHeader {
            collision_radius: self.collision_radius,
            final_status: self.final_status.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for step in &self.steps {
            writeln!(out, "{}", serde_json::to_string(step).expect("step serializes"))?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, TraceError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines().enumerate();
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader = serde_json::from_str(&first?)
            .map_err(|source| TraceError::Parse { line: 1, source })?;
        let mut steps = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let step: TraceStep = serde_json::from_str(&line)
                .map_err(|source| TraceError::Parse { line: idx + 1, source })?;
            steps.push(step);
        }
        Ok(Self {
            steps,
            final_status: header.final_status,
            collision_radius: header.collision_radius,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.final_status.len()
    }
}

/// Fraction of agent-episodes ending in success, counting every non-frozen
/// agent across all traces.
pub fn success_rate(traces: &[EpisodeTrace]) -> f64 {
    success_rate_subset(traces, |_| true)
}

/// Success rate restricted to agents selected by `include` (by agent index).
pub fn success_rate_subset(traces: &[EpisodeTrace], include: impl Fn(usize) -> bool) -> f64 {
    let mut total = 0usize;
    let mut good = 0usize;
    for trace in traces {
        for (i, &status) in trace.final_status.iter().enumerate() {
            if status == AgentStatus::Frozen || !include(i) {
                continue;
            }
            total += 1;
            if status == AgentStatus::Success {
                good += 1;
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    good as f64 / total as f64
}

/// Fraction of interrupting actions (action != 0) over all actions taken by
/// agents while still active.
pub fn restrictiveness_factor(traces: &[EpisodeTrace]) -> f64 {
    let mut total = 0usize;
    let mut interrupts = 0usize;
    for trace in traces {
        for step in &trace.steps {
            for agent in &step.agents {
                if !agent.acting {
                    continue;
                }
                total += 1;
                if agent.action != 0 {
                    interrupts += 1;
                }
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    interrupts as f64 / total as f64
}
