//! TOML training configuration. Every section rejects unknown keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::learner::{ClipRange, OptimizerKind, DEFAULT_EPS_HIGH, DEFAULT_EPS_LOW};
use crate::policy::PolicyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fr3e,
    GrpoPp,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fr3e => "fr3e",
            Algorithm::GrpoPp => "grpo_pp",
        }
    }
}

fn default_steps() -> u64 {
    300
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_batch_groups() -> usize {
    64
}
fn default_group_size() -> usize {
    8
}
fn default_eps_low() -> f64 {
    DEFAULT_EPS_LOW
}
fn default_eps_high() -> f64 {
    DEFAULT_EPS_HIGH
}
fn one() -> usize {
    1
}
fn default_max_waves() -> usize {
    8
}
fn default_checkpoint_every() -> u64 {
    10
}
fn default_top_k() -> usize {
    3
}
fn default_rollouts_per_state() -> usize {
    4
}
fn yes() -> bool {
    true
}
fn default_eval_prompts() -> usize {
    32
}
fn default_eval_rollouts() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 0.05 for SGD and 0.005 for Adam.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_batch_groups")]
    pub batch_groups: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_eps_low")]
    pub eps_low: f64,
    #[serde(default = "default_eps_high")]
    pub eps_high: f64,
    #[serde(default = "one")]
    pub mini_epochs: usize,
    /// Mini-batches per epoch; the released batch is split into this many parts.
    #[serde(default = "one")]
    pub minibatches: usize,
    #[serde(default)]
    pub normalize_std: bool,
    /// Generation waves per step before updating on whatever is buffered.
    #[serde(default = "default_max_waves")]
    pub max_waves: usize,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

impl TrainSection {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.optimizer {
            OptimizerKind::Sgd => 0.05,
            OptimizerKind::Adam => 0.005,
        })
    }

    pub fn clip(&self) -> ClipRange {
        ClipRange {
            eps_low: self.eps_low,
            eps_high: self.eps_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fr3eSection {
    /// Anchors per base trajectory; 0 disables segmentation.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Rollouts per intermediate state; 0 disables stage 2.
    #[serde(default = "default_rollouts_per_state")]
    pub rollouts_per_state: usize,
    #[serde(default = "yes")]
    pub include_base_loss: bool,
}

impl Default for Fr3eSection {
    fn default() -> Self {
        Self {
            top_k: default_top_k(),
            rollouts_per_state: default_rollouts_per_state(),
            include_base_loss: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_prompts")]
    pub prompts: usize,
    #[serde(default = "default_eval_rollouts")]
    pub rollouts: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            prompts: default_eval_prompts(),
            rollouts: default_eval_rollouts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub fr3e: Fr3eSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let p = &self.policy;
        if p.context_window == 0 {
            return Err(Error::Config("policy.context_window must be >= 1".into()));
        }
        if p.hidden_width == 0 {
            return Err(Error::Config("policy.hidden_width must be >= 1".into()));
        }
        if !(p.init_scale.is_finite() && p.init_scale >= 0.0) {
            return Err(Error::Config("policy.init_scale must be finite and >= 0".into()));
        }
        if p.max_table_rows == 0 {
            return Err(Error::Config("policy.max_table_rows must be >= 1".into()));
        }
        let t = &self.train;
        if t.group_size < 2 {
            return Err(Error::Config("train.group_size must be >= 2".into()));
        }
        if t.batch_groups == 0 {
            return Err(Error::Config("train.batch_groups must be >= 1".into()));
        }
        let lr = t.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.eps_low) || !(t.eps_high >= 0.0 && t.eps_high.is_finite()) {
            return Err(Error::Config("train.eps_low must be in [0,1) and train.eps_high >= 0".into()));
        }
        if t.mini_epochs == 0 || t.minibatches == 0 {
            return Err(Error::Config("train.mini_epochs and train.minibatches must be >= 1".into()));
        }
        if t.max_waves == 0 {
            return Err(Error::Config("train.max_waves must be >= 1".into()));
        }
        if t.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be >= 1".into()));
        }
        if self.eval.prompts == 0 || self.eval.rollouts == 0 {
            return Err(Error::Config("eval.prompts and eval.rollouts must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[env]
family = "parity_sum"
vocab_size = 2
prompt_len = 6
max_response_len = 6

[policy]
arch = "tabular_softmax"

[train]
algorithm = "fr3e"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = TrainConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.train.eps_low, 0.22);
        assert_eq!(c.train.eps_high, 0.28);
        assert_eq!(c.train.group_size, 8);
        assert_eq!(c.train.batch_groups, 64);
        assert_eq!(c.train.learning_rate(), 0.005);
        assert_eq!(c.fr3e.top_k, 3);
        assert_eq!(c.fr3e.rollouts_per_state, 4);
        assert!(c.fr3e.include_base_loss);
        assert_eq!(c.policy.context_window, 8);
        assert_eq!((c.eval.prompts, c.eval.rollouts), (32, 8));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("algorithm = \"fr3e\"", "algorithm = \"fr3e\"\nkl_coef = 0.1");
        assert!(TrainConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(TrainConfig::parse(&text).is_err());
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        let text = MINIMAL.replace("algorithm = \"fr3e\"", "algorithm = \"fr3e\"\ngroup_size = 1");
        assert!(TrainConfig::parse(&text).is_err());
        let text = MINIMAL.replace("vocab_size = 2", "vocab_size = 1");
        assert!(TrainConfig::parse(&text).is_err());
        let text = MINIMAL.replace("arch = \"tabular_softmax\"", "arch = \"transformer\"");
        assert!(TrainConfig::parse(&text).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::parse(MINIMAL).unwrap();
        assert_eq!(TrainConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
