//! Advantages, the clip-higher surrogate, optimizers and batch accumulation.
//!
//! Credit is outcome-level: every token a rollout contributes carries the same
//! advantage. Stage-1 rollouts use the group-relative advantage `r_i − mean(r)`.
//! Stage-2 continuations from state `S_j` use `α_j · (r_{j,m} − V(S_j))` with
//! `α_j = exp(−(V(S_j) − V(S_{j−1})))`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explore::RolloutGroup;
use crate::first_return::IntermediateState;
use crate::policy::{Context, PolicyParams};
use crate::types::{PromptGroup, Token, Trajectory};

pub const DEFAULT_EPS_LOW: f64 = 0.22;
pub const DEFAULT_EPS_HIGH: f64 = 0.28;

/// Centered group advantage, optionally divided by the sample standard deviation.
pub fn group_advantage(rewards: &[f64], normalize_std: bool) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Contract("group advantage of an empty group".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    if !normalize_std {
        return Ok(centered);
    }
    let var = if rewards.len() > 1 {
        centered.iter().map(|c| c * c).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if var <= 0.0 {
        return Err(Error::Contract(
            "std-normalised advantage of a group with identical rewards".into(),
        ));
    }
    let std = var.sqrt();
    Ok(centered.into_iter().map(|c| c / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationFactor {
    pub j: usize,
    pub alpha: f64,
    pub delta_v: f64,
}

/// `α = 1 / exp(V(S_j) − V(S_{j−1}))`: below 1 when the value improved.
pub fn modulation_factor(j: usize, v_j: f64, v_prev: f64) -> ModulationFactor {
    let delta_v = v_j - v_prev;
    ModulationFactor {
        j,
        alpha: (-delta_v).exp(),
        delta_v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Stage1,
    Stage2,
}

/// Token sequence an entry is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEntry {
    pub sequence: usize,
    /// 0-based index into the sequence's response.
    pub position: usize,
    pub advantage: f64,
    pub behavior_logprob: f64,
}

/// Per-token training signal in deterministic summation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdvantageBatch {
    pub sequences: Vec<ScoredSequence>,
    pub entries: Vec<TokenEntry>,
}

impl AdvantageBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds one entry per response token from `from` onward, all with `advantage`.
    pub fn push_trajectory(
        &mut self,
        prompt: &[Token],
        traj: &Trajectory,
        from: usize,
        advantage: f64,
        source: Source,
    ) {
        let sequence = self.sequences.len();
        self.sequences.push(ScoredSequence {
            prompt: prompt.to_vec(),
            response: traj.response.clone(),
            source,
        });
        self.entries.extend((from..traj.len()).map(|position| TokenEntry {
            sequence,
            position,
            advantage,
            behavior_logprob: traj.logprobs[position],
        }));
    }

    pub fn append(&mut self, mut other: AdvantageBatch) {
        let offset = self.sequences.len();
        self.sequences.append(&mut other.sequences);
        self.entries.extend(other.entries.into_iter().map(|mut e| {
            e.sequence += offset;
            e
        }));
    }

    pub fn source_of(&self, entry: &TokenEntry) -> Source {
        self.sequences[entry.sequence].source
    }

    /// Mean and population standard deviation of the per-token advantages.
    pub fn advantage_stats(&self) -> (f64, f64) {
        if self.entries.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.entries.len() as f64;
        let mean = self.entries.iter().map(|e| e.advantage).sum::<f64>() / n;
        let var = self
            .entries
            .iter()
            .map(|e| (e.advantage - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }
}

/// Stage-1 entries for every token of every rollout in `groups`.
pub fn stage1_batch(groups: &[PromptGroup], normalize_std: bool) -> Result<AdvantageBatch> {
    let mut batch = AdvantageBatch::default();
    for g in groups {
        let adv = group_advantage(&g.rewards(), normalize_std)?;
        for (traj, a) in g.trajectories.iter().zip(adv) {
            batch.push_trajectory(&g.prompt.tokens, traj, 0, a, Source::Stage1);
        }
    }
    Ok(batch)
}

/// Modulated advantages for stage-2 continuations.
///
/// `states[i]` and `groups[i]` must describe the same state, with indices
/// running `1, 2, …`. `v0` is the value of `S_0`. Prefix tokens get no entry.
pub fn fr3e_advantages(
    states: &[IntermediateState],
    groups: &[RolloutGroup],
    v0: f64,
) -> Result<(AdvantageBatch, Vec<ModulationFactor>)> {
    if states.len() != groups.len() {
        return Err(Error::Contract(format!(
            "{} states but {} rollout groups",
            states.len(),
            groups.len()
        )));
    }
    let mut batch = AdvantageBatch::default();
    let mut factors = Vec::with_capacity(groups.len());
    let mut v_prev = v0;
    for (i, (state, group)) in states.iter().zip(groups).enumerate() {
        if state.j != i + 1 || group.state_index != state.j || group.prefix_len != state.prefix.len() {
            return Err(Error::Contract(format!(
                "rollout group {i} is not aligned with state S_{}",
                state.j
            )));
        }
        let factor = modulation_factor(state.j, group.value, v_prev);
        for (rollout, &r) in group.rollouts.iter().zip(&group.rewards) {
            let a = factor.alpha * (r - group.value);
            batch.push_trajectory(&state.prompt.tokens, rollout, group.prefix_len, a, Source::Stage2);
        }
        factors.push(factor);
        v_prev = group.value;
    }
    Ok((batch, factors))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipRange {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        Self {
            eps_low: DEFAULT_EPS_LOW,
            eps_high: DEFAULT_EPS_HIGH,
        }
    }
}

impl ClipRange {
    pub fn clip(&self, ratio: f64) -> f64 {
        ratio.clamp(1.0 - self.eps_low, 1.0 + self.eps_high)
    }

    /// `(min(ρA, clip(ρ)A), unclipped branch attains the min)`. Ties go to the
    /// unclipped branch.
    pub fn surrogate(&self, ratio: f64, advantage: f64) -> (f64, bool) {
        let unclipped = ratio * advantage;
        let clipped = self.clip(ratio) * advantage;
        if unclipped <= clipped {
            (unclipped, true)
        } else {
            (clipped, false)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLoss {
    pub loss: f64,
    /// Gradient of `loss` (descent direction is its negative).
    pub gradient: Vec<f64>,
    pub clipped_tokens: usize,
}

/// `−(1/N) Σ min(ρA, clip(ρ, 1−ε_low, 1+ε_high)A)` over all `N` batch tokens.
pub fn clip_higher_loss(
    batch: &AdvantageBatch,
    params: &PolicyParams,
    clip: ClipRange,
) -> Result<SurrogateLoss> {
    if batch.is_empty() {
        return Err(Error::Contract("surrogate loss of an empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut gradient = vec![0.0; params.values().len()];
    let mut total = 0.0;
    let mut clipped_tokens = 0;
    for entry in &batch.entries {
        let seq = &batch.sequences[entry.sequence];
        let ctx = Context::new(&seq.prompt, &seq.response[..entry.position]);
        let token = seq.response[entry.position];
        let logp = params.log_prob(&ctx, token);
        let ratio = (logp - entry.behavior_logprob).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!(
                "probability ratio for sequence {} position {}",
                entry.sequence, entry.position
            )));
        }
        let (value, unclipped) = clip.surrogate(ratio, entry.advantage);
        total += value;
        if unclipped {
            if entry.advantage != 0.0 {
                params.accumulate_grad_log_prob(&ctx, token, -ratio * entry.advantage / n, &mut gradient);
            }
        } else {
            clipped_tokens += 1;
        }
    }
    Ok(SurrogateLoss {
        loss: -total / n,
        gradient,
        clipped_tokens,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { dim } else { 0 };
        Self {
            kind,
            lr,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
        }
    }
}

/// One descent step on the loss gradient.
pub fn apply_update(params: &PolicyParams, gradient: &[f64], optim: &mut OptimState) -> Result<PolicyParams> {
    let dim = params.values().len();
    if gradient.len() != dim {
        return Err(Error::Contract(format!(
            "gradient has {} entries, parameters have {dim}",
            gradient.len()
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} = {}", gradient[i])));
    }
    optim.step += 1;
    let mut values = params.values().to_vec();
    match optim.kind {
        OptimizerKind::Sgd => {
            for (v, g) in values.iter_mut().zip(gradient) {
                *v -= optim.lr * g;
            }
        }
        OptimizerKind::Adam => {
            if optim.first_moment.len() != dim {
                return Err(Error::Contract("optimizer moments do not match parameters".into()));
            }
            let t = optim.step as i32;
            let c1 = 1.0 - optim.beta1.powi(t);
            let c2 = 1.0 - optim.beta2.powi(t);
            for i in 0..dim {
                let g = gradient[i];
                let m = &mut optim.first_moment[i];
                *m = optim.beta1 * *m + (1.0 - optim.beta1) * g;
                let s = &mut optim.second_moment[i];
                *s = optim.beta2 * *s + (1.0 - optim.beta2) * g * g;
                let m_hat = optim.first_moment[i] / c1;
                let v_hat = optim.second_moment[i] / c2;
                values[i] -= optim.lr * m_hat / (v_hat.sqrt() + optim.eps);
            }
        }
    }
    params.with_values(values)
}

/// FIFO buffer that releases fixed-size batches across generation waves.
#[derive(Debug, Clone)]
pub struct BatchAccumulator<T> {
    target: usize,
    buffer: VecDeque<T>,
}

impl<T> BatchAccumulator<T> {
    pub fn new(target: usize) -> Result<Self> {
        if target == 0 {
            return Err(Error::Config("batch target must be >= 1".into()));
        }
        Ok(Self {
            target,
            buffer: VecDeque::new(),
        })
    }

    pub fn push_wave(&mut self, wave: impl IntoIterator<Item = T>) {
        self.buffer.extend(wave);
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.target
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Exactly `target` items in arrival order, once enough are buffered.
    pub fn release(&mut self) -> Option<Vec<T>> {
        self.ready().then(|| self.buffer.drain(..self.target).collect())
    }

    /// Everything buffered, regardless of target; used when generation gives up.
    pub fn drain_all(&mut self) -> Vec<T> {
        self.buffer.drain(..).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvFamily};
    use crate::policy::{Arch, PolicyConfig};
    use crate::types::Prompt;

    #[test]
    fn centered_group_advantage() {
        assert_eq!(group_advantage(&[1.0, 0.0, 1.0, 0.0], false).unwrap(), vec![0.5, -0.5, 0.5, -0.5]);
        let a = group_advantage(&[1.0, 0.0], true).unwrap();
        let expect = 0.5 / 0.5f64.sqrt();
        assert!((a[0] - expect).abs() < 1e-15 && (a[1] + expect).abs() < 1e-15);
        assert!(group_advantage(&[1.0, 1.0], true).is_err());
        assert_eq!(group_advantage(&[1.0, 1.0], false).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn modulation_examples() {
        assert_eq!(modulation_factor(1, 0.5, 0.5).alpha, 1.0);
        assert!((modulation_factor(1, 1.0, 0.0).alpha - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!((modulation_factor(1, 0.0, 1.0).alpha - 2.718_281_828_459_045).abs() < 1e-12);
    }

    #[test]
    fn surrogate_branches() {
        let c = ClipRange::default();
        assert_eq!(c.surrogate(1.0, 0.7), (0.7, true));
        let (v, unclipped) = c.surrogate(1.5, 1.0);
        assert!((v - 1.28).abs() < 1e-12 && !unclipped);
        let (v, unclipped) = c.surrogate(0.5, -1.0);
        assert!((v + 0.78).abs() < 1e-12 && !unclipped);
        // below the band with a positive advantage the ratio term is smaller
        assert_eq!(c.surrogate(0.5, 1.0), (0.5, true));
        // boundary kink resolves to the unclipped branch
        assert!(c.surrogate(1.28, 1.0).1);
    }

    #[test]
    fn accumulator_fifo() {
        let mut acc = BatchAccumulator::new(4).unwrap();
        acc.push_wave(0..3);
        assert!(acc.release().is_none());
        acc.push_wave(3..6);
        assert_eq!(acc.release().unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(acc.buffered(), 2);
        acc.push_wave(6..16);
        assert_eq!(acc.release().unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(acc.buffered(), 8);
        assert!(BatchAccumulator::<u8>::new(0).is_err());
    }

    fn small_policy() -> PolicyParams {
        let env = EnvConfig {
            family: EnvFamily::CopySeq,
            vocab_size: 2,
            prompt_len: 2,
            max_response_len: 2,
            seed: 0,
        };
        let cfg = PolicyConfig {
            arch: Arch::TabularSoftmax,
            init_scale: 0.5,
            seed: 3,
            ..PolicyConfig::default()
        };
        PolicyParams::from_config(&cfg, &env).unwrap()
    }

    #[test]
    fn sgd_and_adam_updates() {
        let p = small_policy();
        let dim = p.values().len();
        let mut sgd = OptimState::new(OptimizerKind::Sgd, 0.1, dim);
        let zero = apply_update(&p, &vec![0.0; dim], &mut sgd).unwrap();
        assert_eq!(zero.values(), p.values());
        let g: Vec<f64> = (0..dim).map(|i| i as f64 * 0.01).collect();
        let stepped = apply_update(&p, &g, &mut sgd).unwrap();
        for ((a, b), gi) in stepped.values().iter().zip(p.values()).zip(&g) {
            assert_eq!(*a, b - 0.1 * gi);
        }
        let mut a1 = OptimState::new(OptimizerKind::Adam, 0.01, dim);
        let mut a2 = a1.clone();
        let x = apply_update(&p, &g, &mut a1).unwrap();
        let y = apply_update(&p, &g, &mut a2).unwrap();
        assert_eq!(x.values(), y.values());
        // first Adam step moves each coordinate with nonzero gradient by ~lr
        assert!((x.values()[1] - (p.values()[1] - 0.01)).abs() < 1e-6);
        let mut bad = g.clone();
        bad[0] = f64::INFINITY;
        assert!(apply_update(&p, &bad, &mut sgd).is_err());
        assert!(apply_update(&p, &g[1..], &mut sgd).is_err());
    }

    fn one_token_batch(p: &PolicyParams, ratio: f64, advantage: f64) -> AdvantageBatch {
        let prompt = vec![1u32, 0];
        let ctx = Context::new(&prompt, &[]);
        let lp = p.log_prob(&ctx, 1);
        let traj = Trajectory {
            prompt_id: 0,
            response: vec![1, 0],
            logprobs: vec![lp - ratio.ln(), -0.5],
            entropies: vec![0.0; 2],
            reward: 0.0,
            truncated: false,
        };
        let mut b = AdvantageBatch::default();
        b.push_trajectory(&prompt, &traj, 0, advantage, Source::Stage1);
        b.entries.truncate(1);
        b
    }

    #[test]
    fn single_token_losses() {
        let p = small_policy();
        let ctx_prompt = [1u32, 0];
        let ctx = Context::new(&ctx_prompt, &[]);
        let a = 0.8;
        let out = clip_higher_loss(&one_token_batch(&p, 1.0, a), &p, ClipRange::default()).unwrap();
        assert!((out.loss + a).abs() < 1e-12);
        let g = p.grad_log_prob(&ctx, 1);
        for (x, y) in out.gradient.iter().zip(&g) {
            assert!((x + a * y).abs() < 1e-12);
        }
        let out = clip_higher_loss(&one_token_batch(&p, 1.5, 1.0), &p, ClipRange::default()).unwrap();
        assert!((out.loss + 1.28).abs() < 1e-12);
        assert!(out.gradient.iter().all(|g| *g == 0.0));
        assert_eq!(out.clipped_tokens, 1);
        let out = clip_higher_loss(&one_token_batch(&p, 0.5, -1.0), &p, ClipRange::default()).unwrap();
        assert!((out.loss - 0.78).abs() < 1e-12);
        assert!(out.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn infinite_ratio_is_rejected() {
        let p = small_policy();
        let mut b = one_token_batch(&p, 1.0, 1.0);
        b.entries[0].behavior_logprob = f64::NEG_INFINITY;
        assert!(clip_higher_loss(&b, &p, ClipRange::default()).is_err());
        assert!(clip_higher_loss(&AdvantageBatch::default(), &p, ClipRange::default()).is_err());
    }

    fn rollout_group(j: usize, prefix: &[u32], rewards: &[f64]) -> (IntermediateState, RolloutGroup) {
        let prompt = Prompt::new(0, vec![1, 1, 0], "parity_sum").unwrap();
        let rollouts: Vec<Trajectory> = rewards
            .iter()
            .map(|&r| {
                let mut response = prefix.to_vec();
                response.resize(3, 0);
                Trajectory {
                    prompt_id: 0,
                    logprobs: vec![-0.69; 3],
                    entropies: vec![0.69; 3],
                    response,
                    reward: r,
                    truncated: false,
                }
            })
            .collect();
        let value = crate::explore::empirical_value(rewards).unwrap();
        (
            IntermediateState { j, prompt, prefix: prefix.to_vec() },
            RolloutGroup {
                state_index: j,
                prefix_len: prefix.len(),
                rollouts,
                rewards: rewards.to_vec(),
                value,
            },
        )
    }

    #[test]
    fn modulated_advantages_on_continuations_only() {
        let (s1, g1) = rollout_group(1, &[1], &[1.0, 0.0]);
        let (batch, factors) = fr3e_advantages(std::slice::from_ref(&s1), std::slice::from_ref(&g1), 0.5).unwrap();
        assert_eq!(factors[0].alpha, 1.0);
        // two continuation tokens per rollout, positions 1 and 2
        assert_eq!(batch.len(), 4);
        assert!(batch.entries.iter().all(|e| e.position >= 1));
        let adv: Vec<f64> = batch.entries.iter().map(|e| e.advantage).collect();
        assert_eq!(adv, vec![0.5, 0.5, -0.5, -0.5]);

        let (s2, g2) = rollout_group(2, &[1, 0], &[1.0, 1.0, 1.0]);
        let (batch, factors) = fr3e_advantages(&[s1.clone(), s2.clone()], &[g1.clone(), g2], 0.5).unwrap();
        assert!((factors[1].alpha - (-0.5f64).exp()).abs() < 1e-15);
        assert!(batch.entries[4..].iter().all(|e| e.advantage == 0.0));

        assert!(fr3e_advantages(std::slice::from_ref(&s1), &[], 0.5).is_err());
        assert!(fr3e_advantages(std::slice::from_ref(&s2), &[g1], 0.5).is_err());
    }
}
