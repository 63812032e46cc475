//! Observation assembly: per-step frames of relative states ordered by
//! safety value, stacked with a short history of frames and actions.

use crate::dynamics::RelativeState;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Number of stacked frames (current plus three past).
pub const HISTORY_FRAMES: usize = 4;
/// Number of past actions carried alongside the frames.
pub const HISTORY_ACTIONS: usize = 3;

/// One neighbor as seen by an agent at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub neighbor: usize,
    pub rel: RelativeState,
    /// Pairwise safety value `R_ij` (HJ) for this neighbor.
    pub value: f64,
}

/// Neighbors sorted ascending by safety value (most critical first), ties
/// broken by neighbor index. The sequence consumer reads entries in reverse
/// so the most critical neighbor is fed last.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub entries: Vec<NeighborEntry>,
}

impl ObservationFrame {
    /// Sort into canonical order, then keep the `max_neighbors` most critical
    /// when the policy was trained for fewer neighbors than are present.
    pub fn new(mut entries: Vec<NeighborEntry>, max_neighbors: Option<usize>) -> Self {
        entries.sort_by(|a, b| {
            a.value.partial_cmp(&b.value).unwrap().then(a.neighbor.cmp(&b.neighbor))
        });
        if let Some(m) = max_neighbors {
            entries.truncate(m);
        }
        Self { entries }
    }

    pub fn min_value(&self) -> f64 {
        self.entries.first().map(|e| e.value).unwrap_or(f64::INFINITY)
    }

    /// Entry with the lowest safety value, if any neighbor is present.
    pub fn most_critical(&self) -> Option<&NeighborEntry> {
        self.entries.first()
    }
}

/// Stacked observation: frames at `t, t-1, t-2, t-3` and actions
/// `a_{t-1}, a_{t-2}, a_{t-3}`. At episode start missing history repeats the
/// initial frame and action 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `frames[0]` is the current frame, `frames[k]` is `t-k`.
    pub frames: [ObservationFrame; HISTORY_FRAMES],
    /// `past_actions[0]` is `a_{t-1}`.
    pub past_actions: [u8; HISTORY_ACTIONS],
}

/// Per-agent rolling history of frames and actions.
#[derive(Debug, Clone)]
pub struct History {
    frames: VecDeque<ObservationFrame>,
    actions: VecDeque<u8>,
}

impl History {
    pub fn new(initial: ObservationFrame) -> Self {
        let mut frames = VecDeque::with_capacity(HISTORY_FRAMES);
        frames.push_front(initial);
        Self { frames, actions: VecDeque::with_capacity(HISTORY_ACTIONS) }
    }

    pub fn push_frame(&mut self, frame: ObservationFrame) {
        if self.frames.len() == HISTORY_FRAMES {
            self.frames.pop_back();
        }
        self.frames.push_front(frame);
    }

    pub fn push_action(&mut self, action: u8) {
        if self.actions.len() == HISTORY_ACTIONS {
            self.actions.pop_back();
        }
        self.actions.push_front(action);
    }

    pub fn current_frame(&self) -> &ObservationFrame {
        &self.frames[0]
    }

    pub fn observation(&self) -> Observation {
        let pad = self.frames.back().expect("history always holds a frame").clone();
        let mut frames: [ObservationFrame; HISTORY_FRAMES] = Default::default();
        for (k, slot) in frames.iter_mut().enumerate() {
            *slot = self.frames.get(k).unwrap_or(&pad).clone();
        }
        let mut past_actions = [0u8; HISTORY_ACTIONS];
        for (k, slot) in past_actions.iter_mut().enumerate() {
            *slot = *self.actions.get(k).unwrap_or(&0);
        }
        Observation { frames, past_actions }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(neighbor: usize, value: f64) -> NeighborEntry {
        NeighborEntry { neighbor, rel: RelativeState::new(0.0, 0.0, 0.0), value }
    }

    #[test]
    fn frames_sorted_ascending_with_index_tiebreak() {
        let f = ObservationFrame::new(
            vec![entry(3, 0.5), entry(1, -0.2), entry(2, 0.5), entry(0, 1.0)],
            None,
        );
        let order: Vec<usize> = f.entries.iter().map(|e| e.neighbor).collect();
        assert_eq!(order, vec![1, 2, 3, 0]);
        assert!(f.entries.windows(2).all(|w| w[0].value <= w[1].value));
    }

    #[test]
    fn truncation_keeps_most_critical() {
        let entries: Vec<_> = (0..8).map(|i| entry(i, i as f64 * 0.3 - 0.5)).collect();
        let f = ObservationFrame::new(entries, Some(6));
        assert_eq!(f.entries.len(), 6);
        assert!((f.entries[0].value - (-0.5)).abs() < 1e-12);
        assert!((f.entries[5].value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn padding_at_episode_start() {
        let h = History::new(ObservationFrame::new(vec![entry(1, 0.7)], None));
        let obs = h.observation();
        for f in &obs.frames {
            assert_eq!(f, &obs.frames[0]);
        }
        assert_eq!(obs.past_actions, [0, 0, 0]);
    }

    #[test]
    fn history_rolls() {
        let mut h = History::new(ObservationFrame::new(vec![entry(1, 0.0)], None));
        for step in 1..=5 {
            h.push_action((step % 3) as u8);
            h.push_frame(ObservationFrame::new(vec![entry(1, step as f64)], None));
        }
        let obs = h.observation();
        // newest first
        assert!((obs.frames[0].min_value() - 5.0).abs() < 1e-12);
        assert!((obs.frames[3].min_value() - 2.0).abs() < 1e-12);
        assert_eq!(obs.past_actions, [5 % 3, 4 % 3, 3 % 3]);
    }

    #[test]
    fn two_agent_frame_has_one_entry() {
        let f = ObservationFrame::new(vec![entry(1, 0.3)], None);
        assert_eq!(f.entries.len(), 1);
    }
}
