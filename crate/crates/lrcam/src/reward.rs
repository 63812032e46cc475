//! Per-step reward: the safety-value-shaped variant and the distance-based
//! ablation.
//!
//! Branch precedence (fixed here because the published rows overlap):
//! collision > success > danger > wrong-interrupt > zero. The danger branch
//! scales the most negative pairwise quantity by `k`; interrupting while every
//! pair is comfortably safe costs a flat penalty; staying on the default
//! controller in safety costs nothing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub k: f64,
    pub safe_threshold: f64,
    pub danger_threshold: f64,
    pub wrong_interrupt_penalty: f64,
    pub collision_penalty: f64,
    pub success_bonus: f64,
    pub d: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            k: 10.0,
            safe_threshold: 1.0,
            danger_threshold: 0.0,
            wrong_interrupt_penalty: -5.0,
            collision_penalty: -300.0,
            success_bonus: 300.0,
            d: 0.35,
        }
    }
}

/// Which reward shaping a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Hj,
    Distance,
}

/// One agent's step summary, as seen by the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub collided: bool,
    pub finished: bool,
    /// min over the other agents of the pairwise safety value (HJ reward) or
    /// of the Euclidean distance (distance reward).
    pub min_value: f64,
    pub action: u8,
}

impl StepOutcome {
    pub fn new(collided: bool, finished: bool, min_value: f64, action: u8) -> Self {
        debug_assert!(!(collided && finished), "collided and finished are mutually exclusive");
        Self { collided, finished, min_value, action }
    }
}

/// Safety-value reward. `outcome.min_value` is `min_j R_ij`.
pub fn hj_reward(outcome: &StepOutcome, cfg: &RewardConfig) -> f64 {
    if outcome.collided {
        return cfg.collision_penalty;
    }
    if outcome.finished {
        return cfg.success_bonus;
    }
    if outcome.min_value <= cfg.danger_threshold {
        return cfg.k * outcome.min_value;
    }
    if outcome.min_value >= cfg.safe_threshold && outcome.action != 0 {
        return cfg.wrong_interrupt_penalty;
    }
    0.0
}

/// Distance ablation. `outcome.min_value` is `min_j L2_ij`; the danger branch
/// fires at `L2 <= d` and scales `min_j(L2_ij - d)`.
pub fn distance_reward(outcome: &StepOutcome, cfg: &RewardConfig) -> f64 {
    if outcome.collided {
        return cfg.collision_penalty;
    }
    if outcome.finished {
        return cfg.success_bonus;
    }
    if outcome.min_value <= cfg.d {
        return cfg.k * (outcome.min_value - cfg.d);
    }
    if outcome.min_value >= cfg.safe_threshold && outcome.action != 0 {
        return cfg.wrong_interrupt_penalty;
    }
    0.0
}

pub fn step_reward(kind: RewardKind, outcome: &StepOutcome, cfg: &RewardConfig) -> f64 {
    match kind {
        RewardKind::Hj => hj_reward(outcome, cfg),
        RewardKind::Distance => distance_reward(outcome, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn hj_branches() {
        let c = cfg();
        assert_eq!(hj_reward(&StepOutcome::new(false, false, 1.4, 1), &c), -5.0);
        assert_eq!(hj_reward(&StepOutcome::new(false, false, -0.2, 0), &c), -2.0);
        assert_eq!(hj_reward(&StepOutcome::new(true, false, 0.7, 2), &c), -300.0);
        assert_eq!(hj_reward(&StepOutcome::new(false, true, 2.0, 0), &c), 300.0);
        assert_eq!(hj_reward(&StepOutcome::new(false, false, 0.5, 0), &c), 0.0);
        // in (0, 1) with an interrupt: no continuous reward
        assert_eq!(hj_reward(&StepOutcome::new(false, false, 0.5, 1), &c), 0.0);
        // safe and following the default controller is never punished
        assert_eq!(hj_reward(&StepOutcome::new(false, false, 3.0, 0), &c), 0.0);
    }

    #[test]
    fn hj_precedence_overlaps() {
        let c = cfg();
        // a collision step also has min_value <= 0; terminal row wins
        assert_eq!(hj_reward(&StepOutcome::new(true, false, -0.9, 1), &c), -300.0);
        // finishing while another pair is safe-but-interrupting: success wins
        assert_eq!(hj_reward(&StepOutcome::new(false, true, 1.5, 2), &c), 300.0);
        // exactly at the danger threshold the danger branch fires (value 0)
        assert_eq!(hj_reward(&StepOutcome::new(false, false, 0.0, 1), &c), 0.0);
    }

    #[test]
    fn distance_branches() {
        let c = cfg();
        assert_eq!(distance_reward(&StepOutcome::new(false, false, 1.2, 2), &c), -5.0);
        let r = distance_reward(&StepOutcome::new(false, false, 0.30, 0), &c);
        assert!((r - (-0.5)).abs() < 1e-12, "got {r}");
        assert_eq!(distance_reward(&StepOutcome::new(false, true, 5.0, 0), &c), 300.0);
        assert_eq!(distance_reward(&StepOutcome::new(true, false, 0.1, 0), &c), -300.0);
        // between d and 1: nothing
        assert_eq!(distance_reward(&StepOutcome::new(false, false, 0.6, 1), &c), 0.0);
    }

    proptest! {
        #[test]
        fn exactly_one_branch_fires(
            collided in any::<bool>(),
            finished in any::<bool>(),
            min_value in -3.0..3.0f64,
            action in 0u8..3,
        ) {
            prop_assume!(!(collided && finished));
            let c = cfg();
            let o = StepOutcome::new(collided, finished, min_value, action);
            let r = hj_reward(&o, &c);
            let expected = if collided {
                c.collision_penalty
            } else if finished {
                c.success_bonus
            } else if min_value <= 0.0 {
                c.k * min_value
            } else if min_value >= 1.0 && action != 0 {
                c.wrong_interrupt_penalty
            } else {
                0.0
            };
            prop_assert_eq!(r, expected);
        }

        #[test]
        fn danger_branch_monotone(a in -3.0..0.0f64, b in -3.0..0.0f64) {
            let c = cfg();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let r_lo = hj_reward(&StepOutcome::new(false, false, lo, 0), &c);
            let r_hi = hj_reward(&StepOutcome::new(false, false, hi, 0), &c);
            prop_assert!(r_lo <= r_hi);
        }
    }
}
