//! Differentiable autoregressive token policies.
//!
//! Two architectures share one flat parameter vector representation:
//!
//! - `tabular_softmax`: one logit row per distinct context window (the last `c`
//!   tokens of prompt ⧺ response). Rows are enumerated up front from the
//!   environment's reachable contexts; anything else falls back to a shared
//!   default row, so the parameter count never changes during training.
//! - `mlp`: `logits = W2 · relu(W1 · onehot(last c tokens) + b1) + b2`.
//!   Slot `i` of the one-hot input holds the `i`-th most recent token; slots
//!   before the start of the context stay zero. Parameters are laid out as
//!   `W1 (h × cV, row-major) | b1 (h) | W2 (V × h, row-major) | b2 (V)`.
//!
//! Sampling draws one uniform `u ∈ [0, 1)` per token and walks the cumulative
//! distribution in ascending token id order.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvConfig};
use crate::error::{Error, Result};
use crate::first_return::token_entropy;
use crate::rng::{self, RngStream};
use crate::types::{Prompt, Token, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    TabularSoftmax,
    Mlp,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::TabularSoftmax => "tabular_softmax",
            Arch::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tabular_softmax" => Some(Arch::TabularSoftmax),
            "mlp" => Some(Arch::Mlp),
            _ => None,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_context_window() -> usize {
    8
}
fn default_hidden_width() -> usize {
    16
}
fn default_init_scale() -> f64 {
    0.1
}
fn default_max_table_rows() -> usize {
    1 << 16
}

/// The `[policy]` section of a training config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub arch: Arch,
    #[serde(default = "default_context_window")]
    pub context_window: usize,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_table_rows")]
    pub max_table_rows: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            arch: Arch::TabularSoftmax,
            context_window: default_context_window(),
            hidden_width: default_hidden_width(),
            init_scale: default_init_scale(),
            seed: 0,
            max_table_rows: default_max_table_rows(),
        }
    }
}

/// Shape of the contexts a tabular policy enumerates rows for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpace {
    pub prompt_len: usize,
    pub prompt_alphabet: usize,
    /// Responses are at most this long; contexts with a full response are never queried.
    pub episode_len: usize,
}

impl KeySpace {
    pub fn for_env(env: &EnvConfig) -> Self {
        Self {
            prompt_len: env.prompt_len,
            prompt_alphabet: env.prompt_alphabet(),
            episode_len: env.episode_len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TabularLayout {
    pub window: usize,
    pub vocab: usize,
    pub key_space: KeySpace,
    pub max_rows: usize,
    rows: HashMap<Vec<Token>, usize>,
}

impl TabularLayout {
    pub fn new(window: usize, vocab: usize, key_space: KeySpace, max_rows: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("policy.context_window must be >= 1".into()));
        }
        if vocab < 2 {
            return Err(Error::Config("vocab size must be >= 2".into()));
        }
        let rows = enumerate_windows(window, vocab, key_space, max_rows);
        Ok(Self {
            window,
            vocab,
            key_space,
            max_rows,
            rows,
        })
    }

    /// Keyed rows, not counting the shared default row.
    pub fn keyed_rows(&self) -> usize {
        self.rows.len()
    }

    fn default_row(&self) -> usize {
        self.rows.len()
    }

    pub fn row_for(&self, ctx: &Context<'_>) -> usize {
        let key = ctx.window(self.window);
        self.rows.get(&key).copied().unwrap_or(self.default_row())
    }

    pub fn param_count(&self) -> usize {
        (self.rows.len() + 1) * self.vocab
    }
}

// Enumerates every reachable window in a fixed order: by response length, then
// lexicographically with the oldest token most significant.
fn enumerate_windows(
    window: usize,
    vocab: usize,
    ks: KeySpace,
    max_rows: usize,
) -> HashMap<Vec<Token>, usize> {
    let mut rows = HashMap::new();
    'outer: for resp_len in 0..ks.episode_len.max(1) {
        let n = ks.prompt_len + resp_len;
        let w = window.min(n);
        let radix: Vec<usize> = (n - w..n)
            .map(|pos| if pos < ks.prompt_len { ks.prompt_alphabet } else { vocab })
            .collect();
        let mut digits = vec![0usize; w];
        loop {
            if rows.len() >= max_rows {
                break 'outer;
            }
            let key: Vec<Token> = digits.iter().map(|&d| d as Token).collect();
            let next = rows.len();
            rows.entry(key).or_insert(next);
            // odometer increment, least significant digit last
            let mut i = w;
            loop {
                if i == 0 {
                    continue 'outer;
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < radix[i] {
                    break;
                }
                digits[i] = 0;
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpLayout {
    pub window: usize,
    pub vocab: usize,
    pub hidden: usize,
}

impl MlpLayout {
    pub fn new(window: usize, vocab: usize, hidden: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("policy.context_window must be >= 1".into()));
        }
        if hidden == 0 {
            return Err(Error::Config("policy.hidden_width must be >= 1".into()));
        }
        if vocab < 2 {
            return Err(Error::Config("vocab size must be >= 2".into()));
        }
        Ok(Self { window, vocab, hidden })
    }

    fn inputs(&self) -> usize {
        self.window * self.vocab
    }

    fn b1_offset(&self) -> usize {
        self.hidden * self.inputs()
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.vocab * self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.b2_offset() + self.vocab
    }

    /// Column of `W1` fed by each occupied one-hot slot.
    fn active_inputs(&self, ctx: &Context<'_>) -> Vec<usize> {
        ctx.window(self.window)
            .iter()
            .rev()
            .enumerate()
            .map(|(slot, &tok)| slot * self.vocab + tok as usize)
            .collect()
    }

    fn hidden_pre(&self, theta: &[f64], active: &[usize]) -> Vec<f64> {
        let inputs = self.inputs();
        (0..self.hidden)
            .map(|h| {
                let row = &theta[h * inputs..(h + 1) * inputs];
                active.iter().fold(theta[self.b1_offset() + h], |acc, &i| acc + row[i])
            })
            .collect()
    }

    fn logits(&self, theta: &[f64], ctx: &Context<'_>) -> Vec<f64> {
        let active = self.active_inputs(ctx);
        let hidden: Vec<f64> = self
            .hidden_pre(theta, &active)
            .into_iter()
            .map(|a| a.max(0.0))
            .collect();
        (0..self.vocab)
            .map(|v| {
                let row = &theta[self.w2_offset() + v * self.hidden..][..self.hidden];
                row.iter()
                    .zip(&hidden)
                    .fold(theta[self.b2_offset() + v], |acc, (w, x)| acc + w * x)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Layout {
    Tabular(TabularLayout),
    Mlp(MlpLayout),
}

impl Layout {
    pub fn build(config: &PolicyConfig, env: &EnvConfig) -> Result<Self> {
        match config.arch {
            Arch::TabularSoftmax => Ok(Layout::Tabular(TabularLayout::new(
                config.context_window,
                env.vocab_size,
                KeySpace::for_env(env),
                config.max_table_rows,
            )?)),
            Arch::Mlp => Ok(Layout::Mlp(MlpLayout::new(
                config.context_window,
                env.vocab_size,
                config.hidden_width,
            )?)),
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Layout::Tabular(_) => Arch::TabularSoftmax,
            Layout::Mlp(_) => Arch::Mlp,
        }
    }

    pub fn vocab(&self) -> usize {
        match self {
            Layout::Tabular(t) => t.vocab,
            Layout::Mlp(m) => m.vocab,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layout::Tabular(t) => t.param_count(),
            Layout::Mlp(m) => m.param_count(),
        }
    }
}

/// The conditioning state: prompt followed by the response generated so far.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub prompt: &'a [Token],
    pub response: &'a [Token],
}

impl<'a> Context<'a> {
    pub fn new(prompt: &'a [Token], response: &'a [Token]) -> Self {
        Self { prompt, response }
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The last `c` tokens, oldest first.
    pub fn window(&self, c: usize) -> Vec<Token> {
        let n = self.len();
        let start = n.saturating_sub(c);
        (start..n)
            .map(|i| {
                if i < self.prompt.len() {
                    self.prompt[i]
                } else {
                    self.response[i - self.prompt.len()]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
}

/// Parameters θ together with the architecture they belong to.
///
/// The layout is shared between snapshots; only `values` changes across updates.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::Contract(format!(
                "parameter vector has {} entries, {} expects {}",
                values.len(),
                layout.arch(),
                layout.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.param_count()];
        Self { layout, values }
    }

    /// Uniform initialisation in `[-scale, scale]`, seeded by `seed`.
    pub fn init(layout: Arc<Layout>, scale: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let values = (0..layout.param_count())
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 })
            .collect();
        Self { layout, values }
    }

    pub fn from_config(config: &PolicyConfig, env: &EnvConfig) -> Result<Self> {
        let layout = Arc::new(Layout::build(config, env)?);
        Ok(Self::init(layout, config.init_scale, config.seed))
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn vocab(&self) -> usize {
        self.layout.vocab()
    }

    pub fn logits(&self, ctx: &Context<'_>) -> Vec<f64> {
        match self.layout.as_ref() {
            Layout::Tabular(t) => {
                let row = t.row_for(ctx);
                self.values[row * t.vocab..(row + 1) * t.vocab].to_vec()
            }
            Layout::Mlp(m) => m.logits(&self.values, ctx),
        }
    }

    pub fn log_probs(&self, ctx: &Context<'_>) -> Vec<f64> {
        log_softmax(&self.logits(ctx))
    }

    pub fn distribution(&self, ctx: &Context<'_>) -> TokenDistribution {
        TokenDistribution {
            probs: self.log_probs(ctx).into_iter().map(f64::exp).collect(),
        }
    }

    pub fn log_prob(&self, ctx: &Context<'_>, token: Token) -> f64 {
        self.log_probs(ctx)[token as usize]
    }

    pub fn grad_log_prob(&self, ctx: &Context<'_>, token: Token) -> Vec<f64> {
        let mut grad = vec![0.0; self.values.len()];
        self.accumulate_grad_log_prob(ctx, token, 1.0, &mut grad);
        grad
    }

    /// Adds `scale · ∇θ log π(token | ctx)` into `grad`. Returns `log π(token | ctx)`.
    pub fn accumulate_grad_log_prob(
        &self,
        ctx: &Context<'_>,
        token: Token,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        debug_assert_eq!(grad.len(), self.values.len());
        let logits = self.logits(ctx);
        let logp = log_softmax(&logits);
        let t = token as usize;
        // d log π_t / d z_v = 1[v = t] − π_v
        let dz: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(v, lp)| f64::from(u8::from(v == t)) - lp.exp())
            .collect();
        match self.layout.as_ref() {
            Layout::Tabular(tab) => {
                let row = tab.row_for(ctx);
                let g = &mut grad[row * tab.vocab..(row + 1) * tab.vocab];
                for (gi, d) in g.iter_mut().zip(&dz) {
                    *gi += scale * d;
                }
            }
            Layout::Mlp(m) => {
                let theta = &self.values;
                let active = m.active_inputs(ctx);
                let pre = m.hidden_pre(theta, &active);
                let (w2, b2) = (m.w2_offset(), m.b2_offset());
                for v in 0..m.vocab {
                    grad[b2 + v] += scale * dz[v];
                    for (h, &a) in pre.iter().enumerate() {
                        if a > 0.0 {
                            grad[w2 + v * m.hidden + h] += scale * dz[v] * a;
                        }
                    }
                }
                let inputs = m.inputs();
                for (h, &a) in pre.iter().enumerate() {
                    if a <= 0.0 {
                        continue;
                    }
                    let dh: f64 = (0..m.vocab)
                        .map(|v| dz[v] * theta[w2 + v * m.hidden + h])
                        .sum::<f64>()
                        * scale;
                    grad[m.b1_offset() + h] += dh;
                    for &i in &active {
                        grad[h * inputs + i] += dh;
                    }
                }
            }
        }
        logp[t]
    }

    /// Central-difference estimate of `∇θ log π(token | ctx)`.
    pub fn finite_diff_grad(&self, ctx: &Context<'_>, token: Token, h: f64) -> Vec<f64> {
        assert!(h > 0.0, "finite-difference step must be positive");
        let mut probe = self.clone();
        (0..self.values.len())
            .map(|i| {
                let orig = self.values[i];
                probe.values[i] = orig + h;
                let up = probe.log_prob(ctx, token);
                probe.values[i] = orig - h;
                let down = probe.log_prob(ctx, token);
                probe.values[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Samples a full response from the prompt.
    pub fn generate(
        &self,
        prompt: &Prompt,
        env: &EnvConfig,
        rng: &mut RngStream,
        record_entropy: bool,
    ) -> Trajectory {
        self.continue_from(prompt, &[], env, rng, record_entropy)
    }

    /// Scores `prefix` as already-generated response tokens, then keeps sampling
    /// until the episode is terminal. The returned response starts with `prefix`.
    ///
    /// When `record_entropy` is false the entropy slots are left at zero.
    pub fn continue_from(
        &self,
        prompt: &Prompt,
        prefix: &[Token],
        env: &EnvConfig,
        rng: &mut RngStream,
        record_entropy: bool,
    ) -> Trajectory {
        let mut response = Vec::with_capacity(env.episode_len());
        let mut logprobs = Vec::with_capacity(env.episode_len());
        let mut entropies = Vec::with_capacity(env.episode_len());
        let mut record = |lp: &[f64], token: Token| {
            logprobs.push(lp[token as usize]);
            entropies.push(if record_entropy {
                token_entropy(&TokenDistribution {
                    probs: lp.iter().map(|l| l.exp()).collect(),
                })
            } else {
                0.0
            });
        };
        for &token in prefix {
            let lp = self.log_probs(&Context::new(&prompt.tokens, &response));
            record(&lp, token);
            response.push(token);
        }
        while !envs::is_terminal(env, &response) {
            let lp = self.log_probs(&Context::new(&prompt.tokens, &response));
            let token = sample_inverse_cdf(&lp, rng.gen::<f64>());
            record(&lp, token);
            response.push(token);
        }
        Trajectory {
            prompt_id: prompt.id,
            reward: envs::verify(env, prompt, &response),
            truncated: envs::is_truncated(env, &response),
            response,
            logprobs,
            entropies,
        }
    }
}

/// Log-softmax with max subtraction; the log-sum-exp uses `ln_1p` so that a
/// dominant logit yields a tiny negative log-probability rather than zero.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let (argmax, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, z)| if z > best.1 { (i, z) } else { best });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, z)| (z - max).exp())
        .sum();
    let lse = rest.ln_1p();
    logits.iter().map(|z| (z - max) - lse).collect()
}

/// Inverse-CDF sampling over ascending token ids.
pub fn sample_inverse_cdf(logprobs: &[f64], u: f64) -> Token {
    let mut cumulative = 0.0;
    let mut last_nonzero = 0;
    for (v, lp) in logprobs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_nonzero = v;
        }
        cumulative += p;
        if u < cumulative {
            return v as Token;
        }
    }
    last_nonzero as Token
}
