//! Synthetic reasoning workloads with a hidden ground truth.
//!
//! Everything about a thought (length, reward, whether it ends the branch,
//! the answer it gives) is a pure function of the query seed and the slot
//! path from the root, so expanding the same slot twice, speculatively or
//! not, yields the same content.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    /// Log-space mean of tokens per thought.
    pub length_mu: f64,
    /// Log-space spread of tokens per thought.
    pub length_sigma: f64,
    /// Inclusive range of answer depths for ordinary branches.
    pub shallow_depth: [u32; 2],
    /// Inclusive range of answer depths for deep-dominant branches.
    pub deep_depth: [u32; 2],
    /// Probability that a top-level branch is deep-dominant.
    pub skew: f64,
    pub reward_noise_sigma: f64,
    pub on_path_reward: f64,
    pub off_path_reward: f64,
    /// Probability that a child of an on-path node stays on the golden path.
    pub golden_path_density: f64,
    pub prompt_tokens: u32,
    pub answer_alphabet_size: u32,
    /// Probability of the golden answer at a shallow terminal step.
    pub shallow_correct_rate: f64,
    /// Probability of the golden answer at a deep terminal step.
    pub deep_correct_rate: f64,
    /// Added to the correct rate on the golden path.
    pub on_path_correct_bonus: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            length_mu: libm::log(70.0),
            length_sigma: 0.35,
            shallow_depth: [3, 6],
            deep_depth: [11, 16],
            skew: 0.0,
            reward_noise_sigma: 0.05,
            on_path_reward: 0.8,
            off_path_reward: 0.3,
            golden_path_density: 0.5,
            prompt_tokens: 128,
            answer_alphabet_size: 4,
            shallow_correct_rate: 0.7,
            deep_correct_rate: 0.25,
            on_path_correct_bonus: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("workload field `{0}` is out of range")]
    OutOfRange(&'static str),
    #[error("at least one query is required")]
    NoQueries,
}

fn unit(name: &'static str, v: f64) -> Result<(), WorkloadError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(WorkloadError::OutOfRange(name))
    }
}

impl WorkloadSpec {
    /// Long-tail step lengths for breadth-first workloads.
    pub fn long_tail() -> Self {
        Self {
            length_sigma: 0.6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !self.length_mu.is_finite() {
            return Err(WorkloadError::OutOfRange("length_mu"));
        }
        if !(self.length_sigma >= 0.0) || !self.length_sigma.is_finite() {
            return Err(WorkloadError::OutOfRange("length_sigma"));
        }
        for (name, r) in [("shallow_depth", self.shallow_depth), ("deep_depth", self.deep_depth)] {
            if r[0] == 0 || r[0] > r[1] {
                return Err(WorkloadError::OutOfRange(name));
            }
        }
        if !(self.reward_noise_sigma >= 0.0) || !self.reward_noise_sigma.is_finite() {
            return Err(WorkloadError::OutOfRange("reward_noise_sigma"));
        }
        unit("skew", self.skew)?;
        unit("on_path_reward", self.on_path_reward)?;
        unit("off_path_reward", self.off_path_reward)?;
        unit("shallow_correct_rate", self.shallow_correct_rate)?;
        unit("deep_correct_rate", self.deep_correct_rate)?;
        unit("on_path_correct_bonus", self.on_path_correct_bonus)?;
        if !(self.golden_path_density > 0.0 && self.golden_path_density <= 1.0) {
            return Err(WorkloadError::OutOfRange("golden_path_density"));
        }
        if self.answer_alphabet_size < 2 {
            return Err(WorkloadError::OutOfRange("answer_alphabet_size"));
        }
        Ok(())
    }

    pub fn oracle(&self) -> RewardOracle {
        RewardOracle {
            on_path: self.on_path_reward,
            off_path: self.off_path_reward,
            noise_sigma: self.reward_noise_sigma,
            golden_path_density: self.golden_path_density,
        }
    }
}

/// Ground-truth reward levels and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOracle {
    pub on_path: f64,
    pub off_path: f64,
    pub noise_sigma: f64,
    pub golden_path_density: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub index: u32,
    pub query_seed: u64,
    pub golden_label: String,
}

/// Everything the simulator reveals about one thought.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeContent {
    pub token_len: u32,
    pub reward: f64,
    pub on_golden_path: bool,
    pub terminal: bool,
    pub answer: Option<String>,
}

const TAG_GOLDEN: u64 = 0x676f_6c64;
const TAG_DEPTH: u64 = 0x6465_7074;
const TAG_LABEL: u64 = 0x6c61_6265;
const TAG_NODE: u64 = 0x6e6f_6465;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(h: u64, x: u64) -> u64 {
    splitmix(h ^ splitmix(x))
}

fn to_unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn rng_for(h: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(h)
}

pub fn label(k: u32) -> String {
    format!("a{k}")
}

/// Hashes of every prefix of `path`, root first.
fn prefix_hashes(query_seed: u64, path: &[u32]) -> Vec<u64> {
    let mut h = splitmix(query_seed);
    let mut out = Vec::with_capacity(path.len() + 1);
    out.push(h);
    for &s in path {
        h = mix(h, s as u64 + 1);
        out.push(h);
    }
    out
}

fn golden_along(oracle: &RewardOracle, hashes: &[u64]) -> bool {
    hashes[1..]
        .iter()
        .all(|&h| to_unit(mix(h, TAG_GOLDEN)) < oracle.golden_path_density)
}

pub fn on_golden_path(oracle: &RewardOracle, query_seed: u64, path: &[u32]) -> bool {
    golden_along(oracle, &prefix_hashes(query_seed, path))
}

fn draw_reward(oracle: &RewardOracle, on_path: bool, rng: &mut ChaCha8Rng) -> f64 {
    let base = if on_path { oracle.on_path } else { oracle.off_path };
    let noise = if oracle.noise_sigma > 0.0 {
        Normal::new(0.0, oracle.noise_sigma)
            .expect("validated sigma")
            .sample(rng)
    } else {
        0.0
    };
    (base + noise).clamp(0.0, 1.0)
}

fn node_rng(hashes: &[u64]) -> ChaCha8Rng {
    rng_for(mix(*hashes.last().expect("root hash"), TAG_NODE))
}

/// Process reward of the thought at `path`.
pub fn oracle_reward(oracle: &RewardOracle, query_seed: u64, path: &[u32]) -> f64 {
    let hashes = prefix_hashes(query_seed, path);
    let on_path = golden_along(oracle, &hashes);
    let mut rng = node_rng(&hashes);
    // the length draw comes first in `content`; keep the stream aligned
    let _ = rng.next_u64();
    draw_reward(oracle, on_path, &mut rng)
}

/// Depth at which the top-level branch `branch` produces its answers.
pub fn terminal_depth(wl: &WorkloadSpec, query_seed: u64, branch: u32) -> u32 {
    let mut rng = rng_for(mix(mix(splitmix(query_seed), TAG_DEPTH), branch as u64));
    let deep = rng.random::<f64>() < wl.skew;
    let [lo, hi] = if deep { wl.deep_depth } else { wl.shallow_depth };
    rng.random_range(lo..=hi)
}

pub fn golden_label(wl: &WorkloadSpec, query_seed: u64) -> String {
    let mut rng = rng_for(mix(splitmix(query_seed), TAG_LABEL));
    label(rng.random_range(0..wl.answer_alphabet_size))
}

/// Probability that a terminal step at `depth` answers correctly.
pub fn correct_rate(wl: &WorkloadSpec, depth: u32, on_path: bool) -> f64 {
    let base = if depth <= wl.shallow_depth[1] {
        wl.shallow_correct_rate
    } else {
        wl.deep_correct_rate
    };
    let bonus = if on_path { wl.on_path_correct_bonus } else { 0.0 };
    (base + bonus).min(1.0)
}

fn sample_len(wl: &WorkloadSpec, rng: &mut ChaCha8Rng) -> u32 {
    let x = if wl.length_sigma > 0.0 {
        LogNormal::new(wl.length_mu, wl.length_sigma)
            .expect("validated lognormal")
            .sample(rng)
    } else {
        // consume the same number of draws as the noisy branch
        let _ = rng.next_u64();
        libm::exp(wl.length_mu)
    };
    let r = libm::round(x);
    if r < 1.0 {
        1
    } else if r > u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

/// Content of the thought at `path` (the root has the empty path).
pub fn content(wl: &WorkloadSpec, query_seed: u64, path: &[u32]) -> NodeContent {
    let oracle = wl.oracle();
    let hashes = prefix_hashes(query_seed, path);
    let on_path = golden_along(&oracle, &hashes);
    let mut rng = node_rng(&hashes);
    let mut len_rng = rng_for(rng.next_u64());
    let token_len = sample_len(wl, &mut len_rng);
    let reward = draw_reward(&oracle, on_path, &mut rng);
    let depth = path.len() as u32;
    let terminal = match path.first() {
        Some(&b) => depth >= terminal_depth(wl, query_seed, b),
        None => false,
    };
    let answer = terminal.then(|| {
        let golden = golden_label(wl, query_seed);
        if rng.random::<f64>() < correct_rate(wl, depth, on_path) {
            golden
        } else {
            let others: Vec<String> = (0..wl.answer_alphabet_size)
                .map(label)
                .filter(|l| *l != golden)
                .collect();
            others[rng.random_range(0..others.len())].clone()
        }
    });
    NodeContent {
        token_len,
        reward,
        on_golden_path: on_path,
        terminal,
        answer,
    }
}

/// `n_queries` query seeds and their golden answers, reproducible from `seed`.
pub fn generate_workload(
    n_queries: u32,
    wl: &WorkloadSpec,
    seed: u64,
) -> Result<Vec<QuerySpec>, WorkloadError> {
    if n_queries == 0 {
        return Err(WorkloadError::NoQueries);
    }
    wl.validate()?;
    let mut rng = rng_for(seed);
    Ok((0..n_queries)
        .map(|index| {
            let query_seed = rng.next_u64();
            QuerySpec {
                index,
                query_seed,
                golden_label: golden_label(wl, query_seed),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths(n: usize, seed: u64) -> impl Iterator<Item = Vec<u32>> {
        let mut rng = rng_for(seed);
        (0..n).map(move |_| {
            let d = rng.random_range(1..8);
            (0..d).map(|_| rng.random_range(0..4)).collect()
        })
    }

    #[test]
    fn content_is_pure() {
        let wl = WorkloadSpec::default();
        for p in paths(200, 1) {
            assert_eq!(content(&wl, 42, &p), content(&wl, 42, &p));
            let o = wl.oracle();
            assert_eq!(oracle_reward(&o, 42, &p), content(&wl, 42, &p).reward);
        }
    }

    #[test]
    fn median_length_in_step_range() {
        let wl = WorkloadSpec::default();
        let mut lens: Vec<u32> = (0..10_000u64).map(|i| content(&wl, i, &[0, 1]).token_len).collect();
        lens.sort_unstable();
        let median = lens[lens.len() / 2];
        assert!((50..=100).contains(&median), "median {median}");
        let wl = WorkloadSpec::long_tail();
        let mut lens: Vec<u32> = (0..10_000u64).map(|i| content(&wl, i, &[2]).token_len).collect();
        lens.sort_unstable();
        assert!((50..=100).contains(&lens[lens.len() / 2]));
    }

    #[test]
    fn zero_sigma_lengths_are_constant() {
        let wl = WorkloadSpec {
            length_sigma: 0.0,
            ..WorkloadSpec::default()
        };
        for p in paths(100, 3) {
            assert_eq!(content(&wl, 9, &p).token_len, 70);
        }
    }

    #[test]
    fn zero_noise_rewards_are_levels() {
        let wl = WorkloadSpec {
            reward_noise_sigma: 0.0,
            ..WorkloadSpec::default()
        };
        let o = wl.oracle();
        let mut seen = [false; 2];
        for p in paths(500, 4) {
            let c = content(&wl, 5, &p);
            let expect = if c.on_golden_path { 0.8 } else { 0.3 };
            assert_eq!(c.reward, expect);
            assert_eq!(on_golden_path(&o, 5, &p), c.on_golden_path);
            seen[c.on_golden_path as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn noise_mean_matches_base() {
        let o = RewardOracle {
            noise_sigma: 0.1,
            ..WorkloadSpec::default().oracle()
        };
        for (level, want) in [(true, 0.8), (false, 0.3)] {
            let mut sum = 0.0;
            let mut n = 0;
            let mut seed = 0u64;
            while n < 10_000 {
                seed += 1;
                if on_golden_path(&o, seed, &[0]) == level {
                    sum += oracle_reward(&o, seed, &[0]);
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            assert!((mean - want).abs() < 0.01, "mean {mean} vs {want}");
        }
    }

    #[test]
    fn golden_children_need_golden_parents() {
        let o = WorkloadSpec::default().oracle();
        for p in paths(500, 6) {
            if on_golden_path(&o, 11, &p) {
                assert!(on_golden_path(&o, 11, &p[..p.len() - 1]));
            }
        }
    }

    #[test]
    fn workload_is_deterministic() {
        let wl = WorkloadSpec::default();
        assert_eq!(generate_workload(20, &wl, 7).unwrap(), generate_workload(20, &wl, 7).unwrap());
        assert_ne!(generate_workload(20, &wl, 7).unwrap(), generate_workload(20, &wl, 8).unwrap());
        assert_eq!(generate_workload(0, &wl, 7), Err(WorkloadError::NoQueries));
    }

    #[test]
    fn skew_sets_deep_fraction() {
        let wl = WorkloadSpec {
            skew: 0.1,
            ..WorkloadSpec::default()
        };
        let qs = generate_workload(1000, &wl, 99).unwrap();
        let deep = qs
            .iter()
            .filter(|q| terminal_depth(&wl, q.query_seed, 0) > 10)
            .count();
        let frac = deep as f64 / 1000.0;
        assert!((frac - 0.1).abs() <= 0.02, "deep fraction {frac}");
    }

    #[test]
    fn shallow_answers_are_more_accurate() {
        let wl = WorkloadSpec {
            skew: 0.5,
            ..WorkloadSpec::default()
        };
        let (mut sc, mut sn, mut dc, mut dn) = (0u32, 0u32, 0u32, 0u32);
        for q in generate_workload(4000, &wl, 3).unwrap() {
            for branch in 0..3u32 {
                let d = terminal_depth(&wl, q.query_seed, branch);
                let path: Vec<u32> = core::iter::once(branch).chain(core::iter::repeat_n(0, d as usize - 1)).collect();
                let c = content(&wl, q.query_seed, &path);
                assert!(c.terminal);
                let ok = c.answer.as_deref() == Some(q.golden_label.as_str());
                if d <= 5 {
                    sn += 1;
                    sc += ok as u32;
                } else if d > 10 {
                    dn += 1;
                    dc += ok as u32;
                }
            }
        }
        let (s, d) = (sc as f64 / sn as f64, dc as f64 / dn as f64);
        assert!(s > d, "shallow {s} deep {d}");
    }

    #[test]
    fn validation() {
        assert!(WorkloadSpec::default().validate().is_ok());
        let bad = WorkloadSpec {
            golden_path_density: 0.0,
            ..WorkloadSpec::default()
        };
        assert_eq!(bad.validate(), Err(WorkloadError::OutOfRange("golden_path_density")));
        let bad = WorkloadSpec {
            shallow_depth: [5, 3],
            ..WorkloadSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
