//! The two-stage training loop and the GRPO++ baseline.
//!
//! One step:
//!
//! 1. Generate `G` stage-1 rollouts for a wave of fresh prompts, drop prompts
//!    whose rewards are all 0 or all 1, and buffer the rest. Repeat until a full
//!    batch is buffered or `max_waves` is reached.
//! 2. Build the advantage batch. GRPO++ uses group-relative stage-1 advantages
//!    only. FR3E segments the shortest correct rollout at its highest-entropy
//!    positions, explores `M` continuations from each intermediate state, and
//!    adds value-modulated advantages on the continuation tokens (plus the
//!    stage-1 terms when `include_base_loss` is set).
//! 3. Run `mini_epochs` passes of clip-higher updates over shuffled mini-batches.
//!
//! Every random draw comes from a stream derived from `train.seed` and the
//! draw's coordinates (step, prompt index, rollout index), so results do not
//! depend on thread scheduling.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::envs;
use crate::error::{Error, Result};
use crate::explore::{classify_group, partial_rollouts, GroupClass};
use crate::first_return::{build_states, entropy_profile, segment, select_base_trajectory, topk_positions};
use crate::learner::{
    apply_update, clip_higher_loss, fr3e_advantages, stage1_batch, AdvantageBatch, BatchAccumulator, OptimState,
};
use crate::policy::PolicyParams;
use crate::rng;
use crate::types::{PromptGroup, TrajectoryRecord};

use super::config::{Algorithm, TrainConfig};
use super::eval::evaluate;
use super::metrics::{ClassCounts, StepMetrics};

/// Stream tag of the training prompt sequence.
pub const TRAIN_PROMPT_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub log_trajectories: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
    /// `(step, params)`, starting with the initial parameters at step 0.
    pub checkpoints: Vec<(u64, PolicyParams)>,
    pub records: Vec<TrajectoryRecord>,
}

/// A kept stage-1 group and the draw index of its prompt.
#[derive(Debug, Clone)]
struct BufferedGroup {
    group: PromptGroup,
    draw_index: u64,
}

/// Everything one prompt contributes to an update.
#[derive(Debug, Clone, Default)]
struct PromptUnit {
    stage1: AdvantageBatch,
    stage2: AdvantageBatch,
    stage2_classes: ClassCounts,
    stage2_tokens: u64,
    positions: Option<Vec<usize>>,
}

struct Wave {
    groups: Vec<(u64, PromptGroup)>,
    classes: ClassCounts,
    tokens: u64,
    entropy_sum: f64,
}

pub fn train(config: &TrainConfig, options: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = PolicyParams::from_config(&config.policy, &config.env)?;
    let t = &config.train;
    let mut optim = OptimState::new(t.optimizer, t.learning_rate(), params.values().len());
    let mut accumulator = BatchAccumulator::new(t.batch_groups)?;
    let mut next_draw: u64 = 0;
    let mut cumulative_tokens: u64 = 0;
    let mut snapshot: u64 = 0;
    let mut metrics = Vec::with_capacity(t.steps as usize);
    let mut checkpoints = vec![(0, params.clone())];
    let mut records = Vec::new();

    for step in 1..=t.steps {
        // stage 1: generate, filter, accumulate
        let mut stage1 = ClassCounts::default();
        let mut generated: u64 = 0;
        let mut entropy_sum = 0.0;
        let mut waves = 0;
        while !accumulator.ready() && waves < t.max_waves {
            let wave = generate_wave(config, &params, next_draw);
            next_draw += t.batch_groups as u64;
            waves += 1;
            stage1.merge(wave.classes);
            generated += wave.tokens;
            entropy_sum += wave.entropy_sum;
            if options.log_trajectories {
                for (_, g) in &wave.groups {
                    records.extend(g.trajectories.iter().map(|traj| TrajectoryRecord {
                        step,
                        snapshot_id: snapshot,
                        trajectory: traj.clone(),
                        positions: None,
                    }));
                }
            }
            accumulator.push_wave(
                wave.groups
                    .into_iter()
                    .filter(|(_, g)| classify_group(&g.rewards()) == GroupClass::Mixed)
                    .map(|(draw_index, group)| BufferedGroup { group, draw_index }),
            );
        }
        let stage1_tokens = generated;
        let batch = accumulator.release().unwrap_or_else(|| accumulator.drain_all());

        // stage 2 and advantage construction, one unit per prompt
        let units: Vec<PromptUnit> = batch
            .par_iter()
            .map(|b| build_unit(config, &params, step, b))
            .collect::<Result<_>>()
            .map_err(|e| Error::Contract(format!("step {step}: {e}")))?;
        let mut stage2 = ClassCounts::default();
        for u in &units {
            stage2.merge(u.stage2_classes);
            generated += u.stage2_tokens;
        }
        if options.log_trajectories {
            for (b, u) in batch.iter().zip(&units) {
                if let Some(positions) = &u.positions {
                    if let Ok((_, base)) = select_base_trajectory(&b.group) {
                        records.push(TrajectoryRecord {
                            step,
                            snapshot_id: snapshot,
                            trajectory: base.clone(),
                            positions: Some(positions.clone()),
                        });
                    }
                }
            }
        }

        let full: AdvantageBatch = concat_units(&units, &(0..units.len()).collect::<Vec<_>>());
        let (advantage_mean, advantage_std) = full.advantage_stats();
        let update_tokens = full.len();

        // updates
        let mut first_epoch_loss = 0.0;
        let mut first_epoch_parts = 0;
        for epoch in 0..t.mini_epochs {
            let mut order: Vec<usize> = (0..units.len()).collect();
            order.shuffle(&mut rng::stream(t.seed, &[rng::tag::SHUFFLE, step, epoch as u64]));
            let per = units.len().div_ceil(t.minibatches).max(1);
            for chunk in order.chunks(per) {
                let mut idx = chunk.to_vec();
                idx.sort_unstable();
                let mb = concat_units(&units, &idx);
                if mb.is_empty() {
                    continue;
                }
                let out = clip_higher_loss(&mb, &params, t.clip())
                    .map_err(|e| Error::Contract(format!("step {step}: {e}")))?;
                params = apply_update(&params, &out.gradient, &mut optim)
                    .map_err(|e| Error::Contract(format!("step {step}: {e}")))?;
                snapshot += 1;
                if epoch == 0 {
                    first_epoch_loss += out.loss;
                    first_epoch_parts += 1;
                }
            }
        }

        cumulative_tokens += generated;
        let is_checkpoint = step % t.checkpoint_every == 0 || step == t.steps;
        let eval_success_rate = is_checkpoint
            .then(|| evaluate(&params, &config.env, config.eval.prompts, config.eval.rollouts).success_rate);
        if is_checkpoint {
            checkpoints.push((step, params.clone()));
        }
        let stage1_groups = stage1.total();
        let responses = stage1_groups * t.group_size;
        metrics.push(StepMetrics {
            step,
            mean_token_entropy: ratio(entropy_sum, stage1_tokens as f64),
            mean_response_length: ratio(stage1_tokens as f64, responses as f64),
            stage1,
            stage2,
            advantage_mean,
            advantage_std,
            loss: ratio(first_epoch_loss, first_epoch_parts as f64),
            rejected_prompts: stage1.all_right + stage1.all_wrong,
            batch_groups: batch.len(),
            update_tokens,
            eval_success_rate,
            generated_tokens: generated,
            cumulative_generated_tokens: cumulative_tokens,
        });
    }

    Ok(TrainOutcome {
        params,
        metrics,
        checkpoints,
        records,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn generate_wave(config: &TrainConfig, params: &PolicyParams, first_draw: u64) -> Wave {
    let t = &config.train;
    let groups: Vec<(u64, PromptGroup)> = (first_draw..first_draw + t.batch_groups as u64)
        .into_par_iter()
        .map(|draw| {
            let prompt = envs::prompt_at(&config.env, TRAIN_PROMPT_STREAM, draw);
            let trajectories = (0..t.group_size as u64)
                .map(|i| {
                    let mut stream = rng::stream(t.seed, &[rng::tag::STAGE1, draw, i]);
                    params.generate(&prompt, &config.env, &mut stream, true)
                })
                .collect();
            (draw, PromptGroup { prompt, trajectories })
        })
        .collect();
    let mut classes = ClassCounts::default();
    let mut tokens = 0;
    let mut entropy_sum = 0.0;
    for (_, g) in &groups {
        classes.add(classify_group(&g.rewards()));
        for traj in &g.trajectories {
            tokens += traj.len() as u64;
            entropy_sum += traj.entropies.iter().sum::<f64>();
        }
    }
    Wave {
        groups,
        classes,
        tokens,
        entropy_sum,
    }
}

fn build_unit(config: &TrainConfig, params: &PolicyParams, step: u64, buffered: &BufferedGroup) -> Result<PromptUnit> {
    let t = &config.train;
    let group = &buffered.group;
    let mut unit = PromptUnit::default();
    let fr3e = config.train.algorithm == Algorithm::Fr3e;
    if !fr3e || config.fr3e.include_base_loss {
        unit.stage1 = stage1_batch(std::slice::from_ref(group), t.normalize_std)?;
    }
    if !fr3e || config.fr3e.top_k == 0 || config.fr3e.rollouts_per_state == 0 {
        return Ok(unit);
    }

    let (_, base) = select_base_trajectory(group)?;
    let profile = entropy_profile(params, &group.prompt, base);
    let positions = topk_positions(&profile, config.fr3e.top_k)?;
    let seg = segment(base, &positions)?;
    let states = build_states(&group.prompt, base, &seg);
    let explored = &states[1..];
    let rollout_groups = explored
        .iter()
        .map(|state| {
            let mut stream = rng::stream(
                t.seed,
                &[rng::tag::STAGE2, step, buffered.draw_index, state.j as u64],
            );
            partial_rollouts(params, state, config.fr3e.rollouts_per_state, &config.env, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    let v0 = crate::explore::empirical_value(&group.rewards())?;
    let (stage2, _) = fr3e_advantages(explored, &rollout_groups, v0)?;
    for g in &rollout_groups {
        unit.stage2_classes.add(g.class());
        unit.stage2_tokens += g.continuation_tokens() as u64;
    }
    unit.stage2 = stage2;
    unit.positions = Some(positions);
    Ok(unit)
}

/// Units in the given order, stage-1 entries before stage-2 within each unit.
fn concat_units(units: &[PromptUnit], order: &[usize]) -> AdvantageBatch {
    let mut out = AdvantageBatch::default();
    for &i in order {
        out.append(units[i].stage1.clone());
        out.append(units[i].stage2.clone());
    }
    out
}
