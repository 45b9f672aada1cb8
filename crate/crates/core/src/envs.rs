//! Synthetic generation tasks with binary terminal rewards.
//!
//! Both families emit fixed-length answers: an episode ends once the response
//! reaches `prompt_len` tokens, or earlier at `max_response_len` (truncated).

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RngStream};
use crate::types::{Prompt, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvFamily {
    /// Reproduce the prompt verbatim.
    CopySeq,
    /// Emit `prompt_len` bits whose XOR matches the prompt's XOR.
    ParitySum,
}

impl EnvFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvFamily::CopySeq => "copy_seq",
            EnvFamily::ParitySum => "parity_sum",
        }
    }
}

impl fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub family: EnvFamily,
    pub vocab_size: usize,
    pub prompt_len: usize,
    pub max_response_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("env.vocab_size must be >= 2".into()));
        }
        if self.prompt_len == 0 {
            return Err(Error::Config("env.prompt_len must be >= 1".into()));
        }
        if self.max_response_len == 0 {
            return Err(Error::Config("env.max_response_len must be >= 1".into()));
        }
        if self.family == EnvFamily::CopySeq && self.max_response_len < self.prompt_len {
            return Err(Error::Config(
                "copy_seq needs env.max_response_len >= env.prompt_len".into(),
            ));
        }
        Ok(())
    }

    /// Number of distinct tokens a prompt position can hold.
    pub fn prompt_alphabet(&self) -> usize {
        match self.family {
            EnvFamily::CopySeq => self.vocab_size,
            EnvFamily::ParitySum => 2,
        }
    }

    /// Longest response any episode can produce.
    pub fn episode_len(&self) -> usize {
        self.prompt_len.min(self.max_response_len)
    }
}

pub fn sample_prompt(config: &EnvConfig, id: u64, rng: &mut RngStream) -> Prompt {
    let alphabet = config.prompt_alphabet() as Token;
    let tokens = (0..config.prompt_len)
        .map(|_| rng.gen_range(0..alphabet))
        .collect();
    Prompt {
        id,
        tokens,
        env_tag: config.family.as_str().to_string(),
    }
}

/// The `index`-th prompt of the stream named `tag`; a pure function of the env seed.
pub fn prompt_at(config: &EnvConfig, tag: u64, index: u64) -> Prompt {
    let mut rng = rng::stream(config.seed, &[rng::tag::PROMPTS, tag, index]);
    sample_prompt(config, index, &mut rng)
}

pub fn verify(config: &EnvConfig, prompt: &Prompt, response: &[Token]) -> f64 {
    let correct = match config.family {
        EnvFamily::CopySeq => response == prompt.tokens.as_slice(),
        EnvFamily::ParitySum => {
            response.len() == config.prompt_len
                && response.iter().all(|&t| t <= 1)
                && parity(response) == parity(&prompt.tokens)
        }
    };
    if correct {
        1.0
    } else {
        0.0
    }
}

fn parity(bits: &[Token]) -> Token {
    bits.iter().fold(0, |acc, &b| acc ^ (b & 1))
}

pub fn is_terminal(config: &EnvConfig, response_so_far: &[Token]) -> bool {
    let n = response_so_far.len();
    n >= config.prompt_len || n >= config.max_response_len
}

/// Terminal because of the length cap rather than a complete answer.
pub fn is_truncated(config: &EnvConfig, response: &[Token]) -> bool {
    response.len() >= config.max_response_len && response.len() < config.prompt_len
}
