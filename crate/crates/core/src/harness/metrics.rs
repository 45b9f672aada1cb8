//! Per-step training metrics and their CSV rendering.

use std::fmt::Write as _;

use crate::explore::GroupClass;

/// Counts of All-Right / All-Wrong / Mixed groups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub all_right: usize,
    pub all_wrong: usize,
    pub mixed: usize,
}

impl ClassCounts {
    pub fn add(&mut self, class: GroupClass) {
        match class {
            GroupClass::AllRight => self.all_right += 1,
            GroupClass::AllWrong => self.all_wrong += 1,
            GroupClass::Mixed => self.mixed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.all_right + self.all_wrong + self.mixed
    }

    pub fn merge(&mut self, other: ClassCounts) {
        self.all_right += other.all_right;
        self.all_wrong += other.all_wrong;
        self.mixed += other.mixed;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Mean entropy over stage-1 response tokens generated this step.
    pub mean_token_entropy: f64,
    pub mean_response_length: f64,
    pub stage1: ClassCounts,
    pub stage2: ClassCounts,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    pub loss: f64,
    pub rejected_prompts: usize,
    /// Groups in the update batch.
    pub batch_groups: usize,
    pub update_tokens: usize,
    pub eval_success_rate: Option<f64>,
    pub generated_tokens: u64,
    pub cumulative_generated_tokens: u64,
}

pub const METRICS_COLUMNS: &[&str] = &[
    "step",
    "mean_token_entropy",
    "mean_response_length",
    "stage1_all_right",
    "stage1_all_wrong",
    "stage1_mixed",
    "stage2_all_right",
    "stage2_all_wrong",
    "stage2_mixed",
    "advantage_mean",
    "advantage_std",
    "loss",
    "rejected_prompts",
    "batch_groups",
    "update_tokens",
    "eval_success_rate",
    "generated_tokens",
    "cumulative_generated_tokens",
];

/// Shortest round-trip decimal, switching to exponent form for very small or
/// large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl StepMetrics {
    /// Values in `METRICS_COLUMNS` order.
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            fmt_f64(self.mean_token_entropy),
            fmt_f64(self.mean_response_length),
            self.stage1.all_right.to_string(),
            self.stage1.all_wrong.to_string(),
            self.stage1.mixed.to_string(),
            self.stage2.all_right.to_string(),
            self.stage2.all_wrong.to_string(),
            self.stage2.mixed.to_string(),
            fmt_f64(self.advantage_mean),
            fmt_f64(self.advantage_std),
            fmt_f64(self.loss),
            self.rejected_prompts.to_string(),
            self.batch_groups.to_string(),
            self.update_tokens.to_string(),
            self.eval_success_rate.map(fmt_f64).unwrap_or_default(),
            self.generated_tokens.to_string(),
            self.cumulative_generated_tokens.to_string(),
        ]
    }
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for m in metrics {
        let _ = writeln!(out, "{}", m.fields().join(","));
    }
    out
}
