//! Offline reports: high-entropy token ranking and checkpoint accuracy matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::envs::EnvConfig;
use crate::policy::PolicyParams;
use crate::types::{Token, TrajectoryRecord};

use super::eval::evaluate;
use super::metrics::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStat {
    pub token: Token,
    pub count: usize,
    pub mean_entropy: f64,
}

/// Tokens ranked by the mean entropy of the distributions they were sampled
/// from. Tokens seen fewer than `min_count` times are left out; ties in mean
/// entropy go to the smaller token id.
pub fn entropy_token_report(records: &[TrajectoryRecord], top_n: usize, min_count: usize) -> Vec<TokenStat> {
    let mut sums: BTreeMap<Token, (usize, f64)> = BTreeMap::new();
    for rec in records {
        let t = &rec.trajectory;
        for (&tok, &h) in t.response.iter().zip(&t.entropies) {
            let e = sums.entry(tok).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += h;
        }
    }
    let mut stats: Vec<TokenStat> = sums
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_count.max(1))
        .map(|(token, (count, sum))| TokenStat {
            token,
            count,
            mean_entropy: sum / count as f64,
        })
        .collect();
    stats.sort_by(|a, b| b.mean_entropy.total_cmp(&a.mean_entropy).then(a.token.cmp(&b.token)));
    stats.truncate(top_n);
    stats
}

pub fn token_report_csv(stats: &[TokenStat]) -> String {
    let mut out = String::from("rank,token,count,mean_entropy\n");
    for (i, s) in stats.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", i + 1, s.token, s.count, fmt_f64(s.mean_entropy));
    }
    out
}

/// Success rates with problems as rows and checkpoint steps as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    pub problem_ids: Vec<u64>,
    pub steps: Vec<u64>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn column_means(&self) -> Vec<f64> {
        (0..self.steps.len())
            .map(|c| self.cells.iter().map(|r| r[c]).sum::<f64>() / self.cells.len().max(1) as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("problem_id");
        for s in &self.steps {
            let _ = write!(out, ",step_{s}");
        }
        out.push('\n');
        for (id, row) in self.problem_ids.iter().zip(&self.cells) {
            let _ = write!(out, "{id}");
            for v in row {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }
}

pub fn accuracy_matrix(
    checkpoints: &[(u64, PolicyParams)],
    env: &EnvConfig,
    n_prompts: usize,
    rollouts_per_prompt: usize,
) -> AccuracyMatrix {
    let columns: Vec<_> = checkpoints
        .iter()
        .map(|(_, p)| evaluate(p, env, n_prompts, rollouts_per_prompt))
        .collect();
    let problem_ids = columns.first().map(|c| c.prompt_ids.clone()).unwrap_or_default();
    let cells = (0..problem_ids.len())
        .map(|row| columns.iter().map(|c| c.per_prompt[row]).collect())
        .collect();
    AccuracyMatrix {
        problem_ids,
        steps: checkpoints.iter().map(|(s, _)| *s).collect(),
        cells,
    }
}
