//! Exploration from intermediate states and prompt-level rejection.

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::first_return::IntermediateState;
use crate::policy::PolicyParams;
use crate::rng::RngStream;
use crate::types::{PromptGroup, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupClass {
    AllRight,
    AllWrong,
    Mixed,
}

/// `M` continuations sampled from one intermediate state.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub state_index: usize,
    /// Number of response tokens fixed by the state; continuation tokens follow.
    pub prefix_len: usize,
    /// Each rollout's response starts with the state's prefix.
    pub rollouts: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub value: f64,
}

impl RolloutGroup {
    pub fn class(&self) -> GroupClass {
        classify_group(&self.rewards)
    }

    pub fn continuation_tokens(&self) -> usize {
        self.rollouts.iter().map(|r| r.len() - self.prefix_len).sum()
    }
}

pub fn partial_rollouts(
    params: &PolicyParams,
    state: &IntermediateState,
    m: usize,
    env: &EnvConfig,
    rng: &mut RngStream,
) -> Result<RolloutGroup> {
    if m == 0 {
        return Err(Error::Contract("rollouts per state must be >= 1".into()));
    }
    let rollouts: Vec<Trajectory> = (0..m)
        .map(|_| params.continue_from(&state.prompt, &state.prefix, env, rng, true))
        .collect();
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
    let value = empirical_value(&rewards)?;
    Ok(RolloutGroup {
        state_index: state.j,
        prefix_len: state.prefix.len(),
        rollouts,
        rewards,
        value,
    })
}

/// `V(S) = (1/M) Σ r_m`.
pub fn empirical_value(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Contract("empirical value of an empty reward list".into()));
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

pub fn classify_group(rewards: &[f64]) -> GroupClass {
    if rewards.iter().all(|&r| r == 1.0) {
        GroupClass::AllRight
    } else if rewards.iter().all(|&r| r == 0.0) {
        GroupClass::AllWrong
    } else {
        GroupClass::Mixed
    }
}

/// Keeps groups whose rewards contain both 0 and 1, in input order.
pub fn rejection_filter(groups: Vec<PromptGroup>) -> (Vec<PromptGroup>, usize) {
    let before = groups.len();
    let kept: Vec<PromptGroup> = groups
        .into_iter()
        .filter(|g| classify_group(&g.rewards()) == GroupClass::Mixed)
        .collect();
    let rejected = before - kept.len();
    (kept, rejected)
}
