//! Domain types shared by every stage of the pipeline.
//!
//! Positions are always relative to the response: response token `k` (1-based in
//! prose) lives at index `k - 1` of [`Trajectory::response`]. Prompt tokens never
//! take part in entropy statistics or advantage entries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token ids are dense integers in `[0, vocab size)`.
pub type Token = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
    names: Option<Vec<String>>,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("vocab size must be >= 2, got {size}")));
        }
        Ok(Self { size, names: None })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut vocab = Self::new(names.len())?;
        vocab.names = Some(names);
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, token: Token) -> bool {
        (token as usize) < self.size
    }

    pub fn name(&self, token: Token) -> String {
        match &self.names {
            Some(names) if self.contains(token) => names[token as usize].clone(),
            _ => token.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u64,
    pub tokens: Vec<Token>,
    pub env_tag: String,
}

impl Prompt {
    pub fn new(id: u64, tokens: Vec<Token>, env_tag: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Contract("prompt tokens must be nonempty".into()));
        }
        Ok(Self {
            id,
            tokens,
            env_tag: env_tag.into(),
        })
    }
}

/// A sampled response with per-token statistics under the generating policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_id: u64,
    pub response: Vec<Token>,
    pub logprobs: Vec<f64>,
    /// Entropy of the next-token distribution at each response position, in nats.
    pub entropies: Vec<f64>,
    #[serde(with = "binary_reward")]
    pub reward: f64,
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn is_correct(&self) -> bool {
        self.reward == 1.0
    }
}

// Binary rewards are written as the integers 0 and 1.
mod binary_reward {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(reward: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *reward == 0.0 || *reward == 1.0 {
            s.serialize_u8(*reward as u8)
        } else {
            s.serialize_f64(*reward)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

/// First invariant a trajectory breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    EmptyResponse,
    LogprobsLengthMismatch,
    EntropiesLengthMismatch,
    PositiveLogprob,
    NegativeEntropy,
    NonFiniteValue,
    RewardNotBinary,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            Violation::EmptyResponse => "empty response",
            Violation::LogprobsLengthMismatch => "logprobs length mismatch",
            Violation::EntropiesLengthMismatch => "entropies length mismatch",
            Violation::PositiveLogprob => "logprob greater than zero",
            Violation::NegativeEntropy => "entropy less than zero",
            Violation::NonFiniteValue => "non-finite logprob or entropy",
            Violation::RewardNotBinary => "reward not binary",
        };
        f.write_str(msg)
    }
}

pub fn validate_trajectory(traj: &Trajectory) -> std::result::Result<(), Violation> {
    if traj.response.is_empty() {
        return Err(Violation::EmptyResponse);
    }
    if traj.logprobs.len() != traj.response.len() {
        return Err(Violation::LogprobsLengthMismatch);
    }
    if traj.entropies.len() != traj.response.len() {
        return Err(Violation::EntropiesLengthMismatch);
    }
    if traj
        .logprobs
        .iter()
        .chain(&traj.entropies)
        .any(|v| !v.is_finite())
    {
        return Err(Violation::NonFiniteValue);
    }
    if traj.logprobs.iter().any(|&lp| lp > 0.0) {
        return Err(Violation::PositiveLogprob);
    }
    if traj.entropies.iter().any(|&h| h < 0.0) {
        return Err(Violation::NegativeEntropy);
    }
    if traj.reward != 0.0 && traj.reward != 1.0 {
        return Err(Violation::RewardNotBinary);
    }
    Ok(())
}

/// Stage-1 rollouts sampled independently for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGroup {
    pub prompt: Prompt,
    pub trajectories: Vec<Trajectory>,
}

impl PromptGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }
}

/// A trajectory as it appears in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub snapshot_id: u64,
    #[serde(flatten)]
    pub trajectory: Trajectory,
    /// Entropy-sensitive positions (1-based) when the trajectory was segmented.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<usize>>,
}
