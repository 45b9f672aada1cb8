//! Anchor discovery on a correct base trajectory.
//!
//! The response is profiled token by token, the `K` highest-entropy positions
//! become segmentation anchors, and the blocks between anchors define the
//! intermediate states that exploration restarts from. All positions here are
//! 1-based response positions; position `k` refers to `response[k - 1]`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::policy::{Context, PolicyParams, TokenDistribution};
use crate::types::{Prompt, PromptGroup, Token, Trajectory};

/// `−Σ p ln p` in nats, with `0 · ln 0 = 0`. Clamped to `[0, ln |V|]`.
pub fn token_entropy(dist: &TokenDistribution) -> f64 {
    let h: f64 = dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.clamp(0.0, (dist.probs.len() as f64).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub values: Vec<f64>,
}

impl EntropyProfile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Recomputes `H_k` for every response position under `params`.
pub fn entropy_profile(params: &PolicyParams, prompt: &Prompt, traj: &Trajectory) -> EntropyProfile {
    let values = (0..traj.response.len())
        .map(|k| token_entropy(&params.distribution(&Context::new(&prompt.tokens, &traj.response[..k]))))
        .collect();
    EntropyProfile { values }
}

/// Top-`K` entropy positions, restricted to `1..=L-1`, ties to the smaller index,
/// returned ascending. Asking for more anchors than eligible positions yields all
/// of them.
pub fn topk_positions(profile: &EntropyProfile, k: usize) -> Result<Vec<usize>> {
    if profile.is_empty() {
        return Err(Error::Contract("cannot select anchors from an empty profile".into()));
    }
    if k == 0 {
        return Err(Error::Contract("top_k must be >= 1".into()));
    }
    let eligible = profile.len() - 1;
    let mut order: Vec<usize> = (0..eligible).collect();
    // stable sort keeps ascending index order among equal entropies
    order.sort_by(|&a, &b| profile.values[b].total_cmp(&profile.values[a]));
    let mut picked: Vec<usize> = order.into_iter().take(k).map(|i| i + 1).collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    /// Anchors `k_1 < … < k_K`.
    pub positions: Vec<usize>,
    /// Half-open ranges into the response; block `n` covers `(k_{n-1}, k_n]`.
    pub blocks: Vec<Range<usize>>,
}

impl Segmentation {
    pub fn k_effective(&self) -> usize {
        self.positions.len()
    }
}

pub fn segment(traj: &Trajectory, positions: &[usize]) -> Result<Segmentation> {
    let len = traj.response.len();
    let mut prev = 0;
    let mut blocks = Vec::with_capacity(positions.len() + 1);
    for &k in positions {
        if k == 0 || k >= len {
            return Err(Error::Contract(format!(
                "anchor {k} outside 1..={} for a response of length {len}",
                len.saturating_sub(1)
            )));
        }
        if k <= prev {
            return Err(Error::Contract(format!(
                "anchors must be strictly increasing, got {k} after {prev}"
            )));
        }
        blocks.push(prev..k);
        prev = k;
    }
    blocks.push(prev..len);
    Ok(Segmentation {
        positions: positions.to_vec(),
        blocks,
    })
}

/// `S_j`: the prompt followed by blocks `B_1..B_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntermediateState {
    pub j: usize,
    pub prompt: Prompt,
    /// Response tokens fixed by the state (`B_1 ⧺ … ⧺ B_j`).
    pub prefix: Vec<Token>,
}

impl IntermediateState {
    /// Full token sequence: prompt then prefix.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = self.prompt.tokens.clone();
        out.extend_from_slice(&self.prefix);
        out
    }
}

/// States `S_0..S_K`.
pub fn build_states(prompt: &Prompt, traj: &Trajectory, seg: &Segmentation) -> Vec<IntermediateState> {
    let mut states = Vec::with_capacity(seg.positions.len() + 1);
    states.push(IntermediateState {
        j: 0,
        prompt: prompt.clone(),
        prefix: Vec::new(),
    });
    for (j, block) in seg.blocks.iter().take(seg.positions.len()).enumerate() {
        states.push(IntermediateState {
            j: j + 1,
            prompt: prompt.clone(),
            prefix: traj.response[..block.end].to_vec(),
        });
    }
    states
}

/// Shortest correct trajectory; ties go to the earliest one.
pub fn select_base_trajectory(group: &PromptGroup) -> Result<(usize, &Trajectory)> {
    group
        .trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_correct())
        .min_by_key(|(i, t)| (t.len(), *i))
        .ok_or_else(|| {
            Error::Contract(format!(
                "prompt {} has no correct trajectory to segment",
                group.prompt.id
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvFamily};
    use crate::policy::{Arch, PolicyConfig};
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution { probs: p.to_vec() }
    }

    fn traj(response: Vec<Token>, reward: f64) -> Trajectory {
        let n = response.len();
        Trajectory {
            prompt_id: 0,
            response,
            logprobs: vec![-0.5; n],
            entropies: vec![0.5; n],
            reward,
            truncated: false,
        }
    }

    fn profile(v: &[f64]) -> EntropyProfile {
        EntropyProfile { values: v.to_vec() }
    }

    #[test]
    fn entropy_identities() {
        assert!((token_entropy(&dist(&[0.25; 4])) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(token_entropy(&dist(&[1.0, 0.0, 0.0, 0.0])), 0.0);
        assert!((token_entropy(&dist(&[0.5, 0.5, 0.0, 0.0])) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn topk_picks_largest_and_sorts() {
        // position 5 (= L) is never eligible
        assert_eq!(topk_positions(&profile(&[0.1, 0.9, 0.5, 0.7, 0.2]), 2).unwrap(), vec![2, 4]);
        assert_eq!(topk_positions(&profile(&[0.1, 0.9, 0.5, 0.7]), 2).unwrap(), vec![2, 3]);
    }

    #[test]
    fn topk_ties_prefer_smaller_index() {
        assert_eq!(topk_positions(&profile(&[0.5, 0.5, 0.1]), 1).unwrap(), vec![1]);
    }

    #[test]
    fn topk_clamps_to_eligible_positions() {
        assert_eq!(topk_positions(&profile(&[0.3, 0.1, 0.9]), 10).unwrap(), vec![1, 2]);
        assert!(topk_positions(&profile(&[0.3]), 2).unwrap().is_empty());
        assert!(topk_positions(&profile(&[]), 2).is_err());
    }

    #[test]
    fn segment_blocks_follow_anchors() {
        let t = traj(vec![1, 2, 3, 4, 5, 6], 1.0);
        let s = segment(&t, &[2, 4]).unwrap();
        assert_eq!(s.blocks, vec![0..2, 2..4, 4..6]);
        let whole = segment(&traj(vec![1, 2, 3, 4, 5], 1.0), &[]).unwrap();
        assert_eq!(whole.blocks, vec![0..5]);
    }

    #[test]
    fn segment_rejects_bad_anchors() {
        let t = traj(vec![1, 2, 3, 4], 1.0);
        assert!(segment(&t, &[0]).is_err());
        assert!(segment(&t, &[4]).is_err());
        assert!(segment(&t, &[2, 2]).is_err());
        assert!(segment(&t, &[3, 1]).is_err());
    }

    #[test]
    fn states_extend_prompt() {
        let prompt = Prompt::new(3, vec![9, 9], "copy_seq").unwrap();
        let t = traj(vec![1, 2, 3, 4, 5, 6], 1.0);
        let s = segment(&t, &[2, 4]).unwrap();
        let states = build_states(&prompt, &t, &s);
        assert_eq!(states.len(), 3);
        assert_eq!(states[0].tokens(), prompt.tokens);
        for (state, k) in states.iter().skip(1).zip(&s.positions) {
            assert_eq!(state.tokens().len(), prompt.tokens.len() + k);
        }
        assert_eq!(states[2].prefix, vec![1, 2, 3, 4]);
    }

    #[test]
    fn base_trajectory_is_shortest_correct() {
        let prompt = Prompt::new(0, vec![1], "t").unwrap();
        let g = PromptGroup {
            prompt: prompt.clone(),
            trajectories: vec![
                traj(vec![0; 4], 0.0),
                traj(vec![0; 5], 1.0),
                traj(vec![0; 3], 1.0),
            ],
        };
        assert_eq!(select_base_trajectory(&g).unwrap().0, 2);
        let g = PromptGroup {
            prompt: prompt.clone(),
            trajectories: vec![traj(vec![0; 4], 1.0), traj(vec![0; 4], 0.0)],
        };
        assert_eq!(select_base_trajectory(&g).unwrap().0, 0);
        let g = PromptGroup {
            prompt,
            trajectories: vec![traj(vec![0; 4], 0.0), traj(vec![0; 4], 0.0)],
        };
        assert!(select_base_trajectory(&g).is_err());
    }

    #[test]
    fn profile_reproduces_recorded_entropies() {
        let env = EnvConfig {
            family: EnvFamily::ParitySum,
            vocab_size: 3,
            prompt_len: 6,
            max_response_len: 6,
            seed: 0,
        };
        let cfg = PolicyConfig {
            arch: Arch::Mlp,
            init_scale: 1.0,
            hidden_width: 6,
            ..PolicyConfig::default()
        };
        let p = PolicyParams::from_config(&cfg, &env).unwrap();
        let prompt = crate::envs::prompt_at(&env, 0, 0);
        let t = p.generate(&prompt, &env, &mut crate::rng::stream(4, &[]), true);
        let prof = entropy_profile(&p, &prompt, &t);
        assert_eq!(prof.values, t.entropies);
        assert_eq!(prof.len(), 6);
    }

    proptest! {
        #[test]
        fn topk_ignores_permutations_of_equal_values(
            vals in prop::collection::vec(0u8..3, 2..12),
            k in 1usize..6,
        ) {
            // entries drawn from few levels so ties are common
            let prof = profile(&vals.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let picked = topk_positions(&prof, k).unwrap();
            prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(picked.len(), k.min(vals.len() - 1));
            // every unpicked eligible position is either lower-valued, or equal-valued with a larger index
            let worst = picked.iter().map(|&p| prof.values[p - 1]).fold(f64::INFINITY, f64::min);
            for pos in 1..vals.len() {
                if !picked.contains(&pos) {
                    let v = prof.values[pos - 1];
                    prop_assert!(v < worst || (v == worst && picked.iter().all(|&p| prof.values[p - 1] > v || p < pos)));
                }
            }
        }

        #[test]
        fn segmentation_partitions_response(
            response in prop::collection::vec(0u32..5, 1..20),
            k in 1usize..8,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, &[]);
            let prof = profile(&(0..response.len()).map(|_| rng.gen::<f64>()).collect::<Vec<_>>());
            let t = traj(response.clone(), 1.0);
            let positions = topk_positions(&prof, k).unwrap();
            let seg = segment(&t, &positions).unwrap();
            let joined: Vec<u32> = seg.blocks.iter().flat_map(|b| t.response[b.clone()].to_vec()).collect();
            prop_assert_eq!(joined, response);
            prop_assert!(seg.blocks[..seg.k_effective()].iter().all(|b| !b.is_empty()));
        }
    }
}
