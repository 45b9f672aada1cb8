//! Plain-text parameter checkpoints.
//!
//! ```text
//! fr3e-checkpoint 1
//! step 10
//! arch tabular_softmax
//! vocab_size 2
//! context_window 8
//! hidden_width 16
//! prompt_len 3
//! prompt_alphabet 2
//! episode_len 3
//! max_table_rows 65536
//! params 114
//! 0.25
//! -0.125
//! ...
//! ```
//!
//! Header lines are `key value`; after `params N` come exactly `N` values, one
//! per line, in shortest round-trip decimal form.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::policy::{Arch, KeySpace, Layout, MlpLayout, PolicyParams, TabularLayout};

const MAGIC: &str = "fr3e-checkpoint 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub params: PolicyParams,
}

pub fn encode_checkpoint(step: u64, params: &PolicyParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "step {step}");
    let layout = params.layout();
    let _ = writeln!(out, "arch {}", layout.arch());
    let _ = writeln!(out, "vocab_size {}", layout.vocab());
    match layout.as_ref() {
        Layout::Tabular(t) => {
            let _ = writeln!(out, "context_window {}", t.window);
            let _ = writeln!(out, "prompt_len {}", t.key_space.prompt_len);
            let _ = writeln!(out, "prompt_alphabet {}", t.key_space.prompt_alphabet);
            let _ = writeln!(out, "episode_len {}", t.key_space.episode_len);
            let _ = writeln!(out, "max_table_rows {}", t.max_rows);
        }
        Layout::Mlp(m) => {
            let _ = writeln!(out, "context_window {}", m.window);
            let _ = writeln!(out, "hidden_width {}", m.hidden);
        }
    }
    let _ = writeln!(out, "params {}", params.values().len());
    for v in params.values() {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn decode_checkpoint(text: &str) -> Result<Checkpoint> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(bad(format!("missing `{MAGIC}` header")));
    }
    let mut header: HashMap<&str, &str> = HashMap::new();
    let count = loop {
        let line = lines.next().ok_or_else(|| bad("missing `params` line".into()))?;
        let (key, value) = line
            .trim()
            .split_once(' ')
            .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
        if key == "params" {
            break value
                .parse::<usize>()
                .map_err(|e| bad(format!("params count: {e}")))?;
        }
        header.insert(key, value);
    };
    let num = |key: &str| -> Result<usize> {
        header
            .get(key)
            .ok_or_else(|| bad(format!("missing `{key}`")))?
            .parse::<usize>()
            .map_err(|e| bad(format!("{key}: {e}")))
    };
    let step = num("step")? as u64;
    let arch_name = header.get("arch").ok_or_else(|| bad("missing `arch`".into()))?;
    let arch = Arch::parse(arch_name).ok_or_else(|| bad(format!("unknown arch `{arch_name}`")))?;
    let layout = match arch {
        Arch::TabularSoftmax => Layout::Tabular(TabularLayout::new(
            num("context_window")?,
            num("vocab_size")?,
            KeySpace {
                prompt_len: num("prompt_len")?,
                prompt_alphabet: num("prompt_alphabet")?,
                episode_len: num("episode_len")?,
            },
            num("max_table_rows")?,
        )?),
        Arch::Mlp => Layout::Mlp(MlpLayout::new(
            num("context_window")?,
            num("vocab_size")?,
            num("hidden_width")?,
        )?),
    };
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("value `{l}`: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != count {
        return Err(bad(format!("expected {count} values, found {}", values.len())));
    }
    let params = PolicyParams::new(Arc::new(layout), values)?;
    Ok(Checkpoint { step, params })
}

pub fn write_checkpoint(path: &Path, step: u64, params: &PolicyParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(step, params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    decode_checkpoint(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// File name used for the checkpoint at `step`.
pub fn checkpoint_file_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvFamily};
    use crate::policy::{Context, PolicyConfig};

    fn env() -> EnvConfig {
        EnvConfig {
            family: EnvFamily::ParitySum,
            vocab_size: 3,
            prompt_len: 4,
            max_response_len: 4,
            seed: 0,
        }
    }

    #[test]
    fn round_trip_both_architectures() {
        for arch in [Arch::TabularSoftmax, Arch::Mlp] {
            let cfg = PolicyConfig {
                arch,
                init_scale: 0.7,
                hidden_width: 5,
                seed: 11,
                ..PolicyConfig::default()
            };
            let p = PolicyParams::from_config(&cfg, &env()).unwrap();
            let text = encode_checkpoint(20, &p);
            let back = decode_checkpoint(&text).unwrap();
            assert_eq!(back.step, 20);
            assert_eq!(back.params.values(), p.values());
            let prompt = [1, 0, 1, 1];
            let ctx = Context::new(&prompt, &[2]);
            assert_eq!(back.params.logits(&ctx), p.logits(&ctx));
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let p = PolicyParams::from_config(&PolicyConfig::default(), &env()).unwrap();
        let text = encode_checkpoint(0, &p);
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(decode_checkpoint(&cut).is_err());
        assert!(decode_checkpoint("nonsense").is_err());
    }
}
