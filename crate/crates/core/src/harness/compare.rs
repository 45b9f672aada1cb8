//! Head-to-head runs of two configurations on the same environment.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::metrics::{fmt_f64, StepMetrics, METRICS_COLUMNS};
use super::train::{train, TrainOptions, TrainOutcome};

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub label_a: String,
    pub label_b: String,
    pub a: TrainOutcome,
    pub b: TrainOutcome,
}

pub fn compare(config_a: &TrainConfig, config_b: &TrainConfig) -> Result<CompareReport> {
    if config_a.env != config_b.env {
        return Err(Error::Config("compared configs must share the [env] section".into()));
    }
    if config_a.policy != config_b.policy {
        return Err(Error::Config("compared configs must share the [policy] section".into()));
    }
    let a = train(config_a, TrainOptions::default())?;
    let b = train(config_b, TrainOptions::default())?;
    Ok(CompareReport {
        label_a: config_a.train.algorithm.as_str().to_string(),
        label_b: config_b.train.algorithm.as_str().to_string(),
        a,
        b,
    })
}

fn last_eval(metrics: &[StepMetrics]) -> Option<f64> {
    metrics.iter().rev().find_map(|m| m.eval_success_rate)
}

fn trend(first: usize, last: usize) -> &'static str {
    match last.cmp(&first) {
        std::cmp::Ordering::Greater => "up",
        std::cmp::Ordering::Less => "down",
        std::cmp::Ordering::Equal => "flat",
    }
}

impl CompareReport {
    /// One row per step with `a_` and `b_` prefixed metric columns.
    pub fn step_csv(&self) -> String {
        let mut out = String::from("step");
        for prefix in ["a", "b"] {
            for col in &METRICS_COLUMNS[1..] {
                let _ = write!(out, ",{prefix}_{col}");
            }
        }
        out.push('\n');
        let width = METRICS_COLUMNS.len() - 1;
        let rows = self.a.metrics.len().max(self.b.metrics.len());
        for i in 0..rows {
            let _ = write!(out, "{}", i + 1);
            for run in [&self.a.metrics, &self.b.metrics] {
                match run.get(i) {
                    Some(m) => {
                        for f in &m.fields()[1..] {
                            let _ = write!(out, ",{f}");
                        }
                    }
                    None => out.push_str(&",".repeat(width)),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Both runs merged on exact cumulative generated-token counts.
    pub fn token_csv(&self) -> String {
        let mut rows: Vec<(u64, &str, &StepMetrics)> = self
            .a
            .metrics
            .iter()
            .map(|m| (m.cumulative_generated_tokens, "a", m))
            .chain(self.b.metrics.iter().map(|m| (m.cumulative_generated_tokens, "b", m)))
            .collect();
        rows.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(y.1)).then(x.2.step.cmp(&y.2.step)));
        let mut out = String::from(
            "cumulative_generated_tokens,run,step,mean_token_entropy,stage2_all_right,stage2_all_wrong,eval_success_rate\n",
        );
        for (tokens, run, m) in rows {
            let _ = writeln!(
                out,
                "{tokens},{run},{},{},{},{},{}",
                m.step,
                fmt_f64(m.mean_token_entropy),
                m.stage2.all_right,
                m.stage2.all_wrong,
                m.eval_success_rate.map(fmt_f64).unwrap_or_default()
            );
        }
        out
    }

    pub fn verdict(&self) -> String {
        let mut out = String::new();
        for (name, label, run) in [("a", &self.label_a, &self.a), ("b", &self.label_b, &self.b)] {
            let m = &run.metrics;
            let (Some(first), Some(last)) = (m.first(), m.last()) else {
                let _ = writeln!(out, "{name} ({label}): no steps");
                continue;
            };
            let _ = writeln!(
                out,
                "{name} ({label}): steps={} final_success_rate={} final_mean_entropy={} \
                 stage1_all_right {}->{} ({}) stage1_all_wrong {}->{} ({}) \
                 stage2_all_right {}->{} ({}) stage2_all_wrong {}->{} ({}) generated_tokens={}",
                m.len(),
                last_eval(m).map(fmt_f64).unwrap_or_else(|| "n/a".into()),
                fmt_f64(last.mean_token_entropy),
                first.stage1.all_right,
                last.stage1.all_right,
                trend(first.stage1.all_right, last.stage1.all_right),
                first.stage1.all_wrong,
                last.stage1.all_wrong,
                trend(first.stage1.all_wrong, last.stage1.all_wrong),
                first.stage2.all_right,
                last.stage2.all_right,
                trend(first.stage2.all_right, last.stage2.all_right),
                first.stage2.all_wrong,
                last.stage2.all_wrong,
                trend(first.stage2.all_wrong, last.stage2.all_wrong),
                last.cumulative_generated_tokens,
            );
        }
        let (sa, sb) = (last_eval(&self.a.metrics), last_eval(&self.b.metrics));
        if let (Some(sa), Some(sb)) = (sa, sb) {
            let winner = match sa.total_cmp(&sb) {
                std::cmp::Ordering::Greater => format!("a ({})", self.label_a),
                std::cmp::Ordering::Less => format!("b ({})", self.label_b),
                std::cmp::Ordering::Equal => "tie".into(),
            };
            let _ = writeln!(out, "higher final success rate: {winner}");
        }
        if let (Some(la), Some(lb)) = (self.a.metrics.last(), self.b.metrics.last()) {
            let higher = match la.mean_token_entropy.total_cmp(&lb.mean_token_entropy) {
                std::cmp::Ordering::Greater => format!("a ({})", self.label_a),
                std::cmp::Ordering::Less => format!("b ({})", self.label_b),
                std::cmp::Ordering::Equal => "tie".into(),
            };
            let _ = writeln!(out, "higher final mean token entropy: {higher}");
        }
        out
    }
}
