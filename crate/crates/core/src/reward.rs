//! Shaped trajectory rewards and group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::error::EpisodeError;
use crate::eval::Tier;

pub const STEP_FORMAT_REWARD: f64 = 0.02;
pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Format reward of one model turn.
pub fn step_format_reward(valid: bool) -> f64 {
    if valid {
        STEP_FORMAT_REWARD
    } else {
        -STEP_FORMAT_REWARD
    }
}

pub fn completion_reward(tier: Tier) -> f64 {
    match tier {
        Tier::Correct => 1.0,
        Tier::Reasonable => 0.3,
        Tier::CompletedWithinSteps => 0.1,
        Tier::Fail => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_comp: f64,
    pub gamma: f64,
    pub decay_exponent: f64,
    pub step_sum: f64,
    pub total: f64,
}

/// Reward of one trajectory whose turns had the given format validity.
/// `group_min_len` is the shortest trajectory length in its rollout group.
pub fn trajectory_reward(
    step_valid: &[bool],
    tier: Tier,
    group_min_len: usize,
    gamma: f64,
) -> Result<RewardBreakdown, EpisodeError> {
    if group_min_len == 0 {
        return Err(EpisodeError::Contract("group minimum length must be >= 1".into()));
    }
    if step_valid.len() < group_min_len {
        return Err(EpisodeError::Contract(format!(
            "trajectory length {} below group minimum {group_min_len}",
            step_valid.len()
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EpisodeError::Contract(format!("gamma {gamma} outside (0, 1]")));
    }
    let r_comp = completion_reward(tier);
    let len = step_valid.len() as f64;
    let min = group_min_len as f64;
    let decay_exponent = (len - min) / min;
    let step_sum: f64 = step_valid.iter().map(|v| step_format_reward(*v)).sum();
    let total = r_comp * gamma.powf(decay_exponent) + step_sum;
    Ok(RewardBreakdown {
        r_comp,
        gamma,
        decay_exponent,
        step_sum,
        total,
    })
}

/// Rewards for a rollout group, each trajectory decayed against the group's
/// shortest length.
pub fn group_rewards(
    group: &[(Vec<bool>, Tier)],
    gamma: f64,
) -> Result<Vec<RewardBreakdown>, EpisodeError> {
    let min = group
        .iter()
        .map(|(v, _)| v.len())
        .min()
        .ok_or_else(|| EpisodeError::Contract("empty group".into()))?;
    group
        .iter()
        .map(|(v, t)| trajectory_reward(v, *t, min, gamma))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub group_size: usize,
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub epsilon: f64,
    pub advantages: Vec<f64>,
}

pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageGroup, EpisodeError> {
    if rewards.is_empty() {
        return Err(EpisodeError::Contract("empty reward group".into()));
    }
    let n = rewards.len() as f64;
    // Offsets from the first reward keep the mean exact for constant groups.
    let r0 = rewards[0];
    let mean = r0 + rewards.iter().map(|r| r - r0).sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect();
    Ok(AdvantageGroup {
        group_size: rewards.len(),
        rewards: rewards.to_vec(),
        mean,
        std,
        epsilon,
        advantages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers_map_to_completion_values() {
        assert_eq!(completion_reward(Tier::Correct), 1.0);
        assert_eq!(completion_reward(Tier::Reasonable), 0.3);
        assert_eq!(completion_reward(Tier::CompletedWithinSteps), 0.1);
        assert_eq!(completion_reward(Tier::Fail), 0.0);
    }

    #[test]
    fn constant_groups_have_exactly_zero_advantage() {
        for r in [0.1 + 0.2, -0.7, 1.04, 1e-9] {
            let g = group_advantages(&vec![r; 7], DEFAULT_EPSILON).unwrap();
            assert!(g.advantages.iter().all(|a| *a == 0.0), "{:?}", g.advantages);
        }
    }

    #[test]
    fn format_reward_sign() {
        assert_eq!(step_format_reward(true), 0.02);
        assert_eq!(step_format_reward(false), -0.02);
        let five: f64 = (0..5).map(|_| step_format_reward(true)).sum();
        assert!((five - 0.10).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_group_minimum() {
        assert!(trajectory_reward(&[true], Tier::Correct, 0, 0.95).is_err());
        assert!(trajectory_reward(&[true], Tier::Correct, 2, 0.95).is_err());
    }

    #[test]
    fn equal_length_has_unit_decay() {
        let r = trajectory_reward(&[true; 7], Tier::Correct, 7, 0.5).unwrap();
        assert_eq!(r.decay_exponent, 0.0);
        assert!((r.total - (1.0 + 7.0 * 0.02)).abs() < 1e-12);
    }

    #[test]
    fn empty_group_is_error() {
        assert!(group_advantages(&[], DEFAULT_EPSILON).is_err());
    }
}
