//! Labelled synthetic trajectories with a planted prototype chain and a
//! failure-only breach transition.
//!
//! Cluster `i` (the hub) is a successor of every regular cluster and is
//! where every dialogue starts; cluster `j` is reachable only through the
//! breach transition `i → j`. Step states accumulate cluster directions, so
//! causal deltas recover them. Context states carry the upcoming cluster's
//! intent and the previous cluster, making the next action predictable from
//! the pre-action context.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Annotation, Outcome, Trajectory, Turn};
use crate::embedding::write_sidecars;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_trajectories: usize,
    pub length_range: (usize, usize),
    pub n_agents: usize,
    pub latent_dim: usize,
    pub n_true_clusters: usize,
    pub failure_rate: f64,
    /// `(i, j)`; defaults to `(0, n_true_clusters − 1)`.
    pub breach_transition: Option<(usize, usize)>,
    /// Gaussian noise on step and context states.
    pub noise_scale: f64,
    /// Log-normal spread of each action's magnitude.
    pub magnitude_jitter: f64,
    /// Norm scale of a per-dialogue topic offset added to every step state.
    pub task_spread: f64,
    /// Successors per regular cluster, including the hub.
    pub successors: usize,
    /// Emit word-level turn text for the token-level path instead of state sidecars.
    pub text_mode: bool,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_trajectories: 1000,
            length_range: (8, 16),
            n_agents: 4,
            latent_dim: 32,
            n_true_clusters: 8,
            failure_rate: 0.5,
            breach_transition: None,
            noise_scale: 0.0,
            magnitude_jitter: 0.0,
            task_spread: 0.0,
            successors: 3,
            text_mode: false,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn breach(&self) -> (usize, usize) {
        self.breach_transition.unwrap_or((0, self.n_true_clusters.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let c = self.n_true_clusters;
        if c < 2 {
            return bad(format!("need at least 2 true clusters, got {c}"));
        }
        if !(self.failure_rate > 0.0 && self.failure_rate < 1.0) {
            return bad(format!("failure rate {} not in (0, 1)", self.failure_rate));
        }
        if !(self.noise_scale >= 0.0) || !(self.magnitude_jitter >= 0.0) || !(self.task_spread >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        let (lo, hi) = self.length_range;
        if lo < 2 || hi < lo {
            return bad(format!("invalid length range [{lo}, {hi}]"));
        }
        if self.n_agents == 0 || self.latent_dim == 0 || self.n_trajectories == 0 {
            return bad("agents, latent dim and trajectory count must be positive".into());
        }
        if self.successors == 0 {
            return bad("successor count must be positive".into());
        }
        let (i, j) = self.breach();
        if i >= c || j >= c || i == j {
            return bad(format!("breach transition ({i}, {j}) invalid for {c} clusters"));
        }
        Ok(())
    }
}

/// Ground truth of a generated corpus.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub trajectories: Vec<Trajectory>,
    /// Per trajectory, row t = step state of turn t (empty in text mode).
    pub steps: Vec<Array2<f64>>,
    /// Per trajectory, row t = context state before turn t (empty in text mode).
    pub contexts: Vec<Array2<f64>>,
    pub clusters: Vec<Vec<usize>>,
    /// Row c = unit direction of cluster c.
    pub directions: Array2<f64>,
    pub breach: (usize, usize),
    /// Successor lists of the chain.
    pub chain: Vec<Vec<usize>>,
}

fn gaussian_unit(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Unit directions; orthonormal when `count ≤ dim`.
fn directions(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((count, dim));
    for c in 0..count {
        let mut v = gaussian_unit(dim, rng);
        if c < dim {
            for p in 0..c {
                let proj = v.dot(&out.row(p));
                v.scaled_add(-proj, &out.row(p));
            }
            let n = v.dot(&v).sqrt();
            v /= n;
        }
        out.row_mut(c).assign(&v);
    }
    out
}

struct Chain {
    successors: Vec<Vec<usize>>,
    hub: usize,
    target: usize,
}

impl Chain {
    fn build(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Chain {
        let c = config.n_true_clusters;
        let (hub, target) = config.breach();
        let regular: Vec<usize> = (0..c).filter(|&x| x != target).collect();
        let mut successors = vec![Vec::new(); c];
        for x in 0..c {
            // every regular cluster (the hub included) can hand over to the
            // hub; the target, entered only through a breach, continues into
            // the regular chain
            let pool: Vec<usize> = regular
                .iter()
                .copied()
                .filter(|&y| y != hub && y != x)
                .collect();
            let mut succ = Vec::new();
            if x != target {
                succ.push(hub);
            }
            let want = config.successors.saturating_sub(succ.len()).min(pool.len());
            for idx in sample(rng, pool.len(), want).into_vec() {
                succ.push(pool[idx]);
            }
            if succ.is_empty() {
                succ.push(hub);
            }
            succ.sort_unstable();
            successors[x] = succ;
        }
        Chain {
            successors,
            hub,
            target,
        }
    }

    fn prob(&self, from: usize, to: usize) -> f64 {
        let s = &self.successors[from];
        if s.contains(&to) {
            1.0 / s.len() as f64
        } else {
            0.0
        }
    }

    fn next(&self, from: usize, rng: &mut ChaCha8Rng) -> usize {
        let s = &self.successors[from];
        s[rng.random_range(0..s.len())]
    }

    /// `z₀ … z_{n−1}` from the hub with `z_{n−1} = hub`, drawn from the
    /// chain conditioned on its endpoint (forward filtering, backward sampling).
    fn prefix_ending_at_hub(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let c = self.successors.len();
        let mut alpha = vec![vec![0.0; c]; n];
        alpha[0][self.hub] = 1.0;
        for t in 1..n {
            for from in 0..c {
                let a = alpha[t - 1][from];
                if a > 0.0 {
                    for &to in &self.successors[from] {
                        alpha[t][to] += a * self.prob(from, to);
                    }
                }
            }
        }
        let mut z = vec![self.hub; n];
        for t in (0..n.saturating_sub(1)).rev() {
            let weights: Vec<f64> = (0..c).map(|y| alpha[t][y] * self.prob(y, z[t + 1])).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = 0;
            for (y, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = y;
                if u < w {
                    break;
                }
                u -= w;
            }
            z[t] = pick;
        }
        z
    }
}

struct Embeddings {
    directions: Array2<f64>,
    intents: Array2<f64>,
    previous: Array2<f64>,
}

fn agent_name(k: usize) -> String {
    format!("agent_{k}")
}

fn word(cluster: usize, k: usize) -> String {
    format!("c{cluster}w{k}")
}

/// Turn text in text mode: words from the acting cluster's vocabulary and a
/// handoff word naming the next action.
fn turn_text(z: usize, next: Option<usize>, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = (0..4).map(|_| word(z, rng.random_range(0..6))).collect();
    if let Some(n) = next {
        words.push(format!("handoff{n}"));
    }
    words.join(" ")
}

pub fn generate(config: &GeneratorConfig) -> Result<GeneratedCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.n_true_clusters;
    let d = config.latent_dim;
    let chain = Chain::build(config, &mut rng);
    let emb = Embeddings {
        directions: directions(c, d, &mut rng),
        intents: directions(c, d, &mut rng),
        previous: directions(c + 1, d, &mut rng),
    };

    let generated: Vec<_> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(n as u64 + 1);
            one_trajectory(n, config, &chain, &emb, &mut rng)
        })
        .collect();

    let mut corpus = GeneratedCorpus {
        trajectories: Vec::with_capacity(generated.len()),
        steps: Vec::new(),
        contexts: Vec::new(),
        clusters: Vec::new(),
        directions: emb.directions,
        breach: (chain.hub, chain.target),
        chain: chain.successors,
    };
    for (traj, steps, contexts, z) in generated {
        corpus.trajectories.push(traj);
        corpus.steps.push(steps);
        corpus.contexts.push(contexts);
        corpus.clusters.push(z);
    }
    Ok(corpus)
}

type Generated = (Trajectory, Array2<f64>, Array2<f64>, Vec<usize>);

fn one_trajectory(
    n: usize,
    config: &GeneratorConfig,
    chain: &Chain,
    emb: &Embeddings,
    rng: &mut ChaCha8Rng,
) -> Generated {
    let (lo, hi) = config.length_range;
    let len = rng.random_range(lo..=hi);
    let failed = rng.random::<f64>() < config.failure_rate;
    let (z, breach) = if failed {
        let t_star = rng.random_range(1..len);
        let mut z = chain.prefix_ending_at_hub(t_star, rng);
        z.push(chain.target);
        while z.len() < len {
            let last = *z.last().expect("non-empty");
            z.push(chain.next(last, rng));
        }
        (z, Some(t_star))
    } else {
        let mut z = vec![chain.hub];
        while z.len() < len {
            let last = *z.last().expect("non-empty");
            z.push(chain.next(last, rng));
        }
        (z, None)
    };

    let d = config.latent_dim;
    let sigma = config.noise_scale;
    let noise = |rng: &mut ChaCha8Rng| -> Array1<f64> {
        (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut steps = Array2::zeros((len, d));
    let mut contexts = Array2::zeros((len, d));
    let spread = config.task_spread / (d as f64).sqrt();
    let mut state: Array1<f64> = (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
    let start = config.n_true_clusters;
    for t in 0..len {
        let scale = (config.magnitude_jitter * rng.sample::<f64, _>(StandardNormal)).exp();
        state.scaled_add(scale, &emb.directions.row(z[t]));
        let noisy = &state + &noise(rng);
        steps.row_mut(t).assign(&noisy);
        let prev = if t == 0 { start } else { z[t - 1] };
        let ctx = &emb.intents.row(z[t]) + &emb.previous.row(prev) + noise(rng);
        contexts.row_mut(t).assign(&ctx);
    }

    let id = format!("traj_{n:05}");
    let task = format!("synthetic task {n}");
    let turns: Vec<Turn> = (0..len)
        .map(|t| Turn {
            index: t,
            agent: agent_name(t % config.n_agents),
            content: if config.text_mode {
                turn_text(z[t], z.get(t + 1).copied(), rng)
            } else {
                format!("action c{} at step {t}", z[t])
            },
        })
        .collect();
    let task = if config.text_mode {
        format!("{task} handoff{}", z[0])
    } else {
        task
    };
    let annotation = breach.map(|b| Annotation {
        breach_step: b,
        breach_agent: agent_name(b % config.n_agents),
    });
    let traj = Trajectory {
        id,
        task,
        turns,
        outcome: if failed { Outcome::Failure } else { Outcome::Success },
        annotation,
    };
    if config.text_mode {
        (traj, Array2::zeros((0, d)), Array2::zeros((0, d)), z)
    } else {
        (traj, steps, contexts, z)
    }
}

/// Write `<id>.json` per trajectory (0-based steps) plus state sidecars
/// unless the corpus is in text mode.
pub fn write_corpus(corpus: &GeneratedCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    corpus
        .trajectories
        .par_iter()
        .enumerate()
        .try_for_each(|(n, traj)| {
            let path = dir.join(format!("{}.json", traj.id));
            let json = serde_json::to_vec_pretty(&traj.to_json())?;
            std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            if corpus.steps[n].nrows() > 0 {
                write_sidecars(dir, &traj.id, &corpus.steps[n], &corpus.contexts[n])?;
            }
            Ok(())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::causal_delta;
    use crate::quantizer::{quantize, Codebook};
    use crate::embedding::StateVector;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_trajectories: 60,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_deltas_recover_clusters() {
        let corpus = generate(&small(3)).unwrap();
        let cb = Codebook::new(corpus.directions.clone()).unwrap();
        for (steps, z) in corpus.steps.iter().zip(&corpus.clusters) {
            let states: Vec<StateVector> = steps.rows().into_iter().map(|r| StateVector(r.to_owned())).collect();
            let deltas = causal_delta(&states).unwrap();
            let got: Vec<usize> = deltas.iter().map(|d| quantize(d.data.view(), &cb).unwrap()).collect();
            assert_eq!(&got, z);
        }
    }

    #[test]
    fn breach_occurs_once_in_failures_only() {
        let corpus = generate(&small(4)).unwrap();
        let (i, j) = corpus.breach;
        for (traj, z) in corpus.trajectories.iter().zip(&corpus.clusters) {
            let hits: Vec<usize> = (1..z.len()).filter(|&t| z[t - 1] == i && z[t] == j).collect();
            match traj.outcome {
                Outcome::Failure => assert_eq!(hits, vec![traj.breach_step().unwrap()]),
                Outcome::Success => assert!(hits.is_empty()),
            }
            assert!(traj.len() >= 8 && traj.len() <= 16);
        }
    }

    #[test]
    fn failure_count_is_binomial() {
        let corpus = generate(&GeneratorConfig::default()).unwrap();
        let failures = corpus.trajectories.iter().filter(|t| t.outcome == Outcome::Failure).count();
        assert!((400..=600).contains(&failures), "{failures}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(9)).unwrap();
        let b = generate(&small(9)).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            GeneratorConfig { n_true_clusters: 1, ..Default::default() },
            GeneratorConfig { failure_rate: 1.0, ..Default::default() },
            GeneratorConfig { noise_scale: -0.1, ..Default::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
