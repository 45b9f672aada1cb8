//! Fixed-prompt-set evaluation (avg@k).

use rayon::prelude::*;

use crate::envs::{self, EnvConfig};
use crate::policy::PolicyParams;
use crate::rng;
use crate::types::Prompt;

/// Stream tag of the evaluation prompt set.
pub const EVAL_PROMPT_STREAM: u64 = rng::tag::EVAL_PROMPTS;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub success_rate: f64,
    pub prompt_ids: Vec<u64>,
    pub per_prompt: Vec<f64>,
}

/// The evaluation problems; a pure function of the env seed.
pub fn eval_prompts(env: &EnvConfig, n_prompts: usize) -> Vec<Prompt> {
    (0..n_prompts as u64)
        .map(|i| envs::prompt_at(env, EVAL_PROMPT_STREAM, i))
        .collect()
}

pub fn evaluate(params: &PolicyParams, env: &EnvConfig, n_prompts: usize, rollouts_per_prompt: usize) -> EvalResult {
    assert!(n_prompts >= 1 && rollouts_per_prompt >= 1, "evaluation needs prompts and rollouts");
    let prompts = eval_prompts(env, n_prompts);
    let per_prompt: Vec<f64> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let correct: f64 = (0..rollouts_per_prompt as u64)
                .map(|r| {
                    let mut stream = rng::stream(env.seed, &[rng::tag::EVAL_ROLLOUTS, i as u64, r]);
                    params.generate(prompt, env, &mut stream, false).reward
                })
                .sum();
            correct / rollouts_per_prompt as f64
        })
        .collect();
    let success_rate = per_prompt.iter().sum::<f64>() / per_prompt.len() as f64;
    EvalResult {
        success_rate,
        prompt_ids: prompts.iter().map(|p| p.id).collect(),
        per_prompt,
    }
}
