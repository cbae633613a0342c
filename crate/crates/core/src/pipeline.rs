//! End-to-end training: contrastive projection, prototype quantization,
//! transition counting, next-action head, and threshold calibration.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{BundleConfig, ModelBundle, Provenance};
use crate::data::{Outcome, Trajectory};
use crate::detector::{calibrate, CalibrationStrategy, Thresholds, DEFAULT_JUMP, DEFAULT_PANIC_OFFSET};
use crate::embedding::{score_network, ContextQuery, Encoded, ProviderMode, StateEncoder, StepQuery, StepStateKind};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, risk_series, EvalReport};
use crate::hashing::sha256_hex;
use crate::manifold::{all_deltas, projection_network, stack, train_stage1, Projector, SeriesInfo, Stage1Config, Stage1Corpus};
use crate::markov::{FailCountsScope, TransitionModel, DEFAULT_BETA, DEFAULT_EPSILON};
use crate::proactive::{prediction_head, train_binary_baseline, train_stage2, Stage2Config, DEFAULT_TOP_M};
use crate::nn::DenseNet;
use crate::quantizer::{fit, KMeansConfig};

pub const DEFAULT_K: usize = 30;
pub const DEFAULT_SWEEP_K: [usize; 6] = [10, 20, 30, 40, 50, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub top_m: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub score_hidden: usize,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub kmeans: KMeansConfig,
    pub calibration: CalibrationStrategy,
    pub delta_jump: f64,
    pub panic_offset: f64,
    pub static_threshold: bool,
    pub absolute_states: bool,
    pub no_triplet: bool,
    pub binary_baseline: bool,
    pub fail_counts_scope: FailCountsScope,
    pub step_state: StepStateKind,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub created: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: DEFAULT_K,
            top_m: DEFAULT_TOP_M,
            epsilon: DEFAULT_EPSILON,
            beta: DEFAULT_BETA,
            score_hidden: 256,
            projection_hidden: 2048,
            projection_dim: 1024,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            kmeans: KMeansConfig::default(),
            calibration: CalibrationStrategy::default(),
            delta_jump: DEFAULT_JUMP,
            panic_offset: DEFAULT_PANIC_OFFSET,
            static_threshold: false,
            absolute_states: false,
            no_triplet: false,
            binary_baseline: false,
            fail_counts_scope: FailCountsScope::All,
            step_state: StepStateKind::Extraction,
            seed: crate::data::DEFAULT_SEED,
            train_fraction: crate::data::DEFAULT_TRAIN_FRACTION,
            split_seed: crate::data::DEFAULT_SEED,
            created: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("K must be at least 2, got {}", self.k));
        }
        if self.top_m == 0 || self.top_m > self.k {
            return bad(format!("top-m {} not in [1, {}]", self.top_m, self.k));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.beta) {
            return bad("smoothing priors need 0 < epsilon < beta".into());
        }
        if !(self.delta_jump > 0.0) || !(self.panic_offset > 0.0) {
            return bad("jump threshold and panic offset must be positive".into());
        }
        if self.score_hidden == 0 || self.projection_hidden == 0 || self.projection_dim == 0 || self.stage2.hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Encodings of the training trajectories.
pub struct PreparedCorpus {
    pub series: Vec<SeriesInfo>,
    pub steps: Vec<Vec<Arc<Encoded>>>,
    pub contexts: Vec<Vec<Arc<Encoded>>>,
    pub mode: ProviderMode,
    pub dim: usize,
    pub dataset_hash: String,
}

/// SHA-256 over the trajectories (in id order) as canonical JSON.
pub fn dataset_hash(trajs: &[&Trajectory]) -> Result<String> {
    let mut sorted: Vec<&&Trajectory> = trajs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut bytes = Vec::new();
    for t in sorted {
        bytes.extend_from_slice(t.id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&serde_json::to_vec(&t.to_json())?);
        bytes.push(0);
    }
    Ok(sha256_hex(&bytes))
}

pub fn prepare(trajs: &[&Trajectory], encoder: &dyn StateEncoder) -> Result<PreparedCorpus> {
    if trajs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let encoded: Vec<(Vec<Arc<Encoded>>, Vec<Arc<Encoded>>)> = trajs
        .par_iter()
        .map(|t| {
            let steps = (0..t.len())
                .map(|n| {
                    encoder.step(&StepQuery {
                        id: &t.id,
                        task: &t.task,
                        visible: &t.turns[..=n],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let contexts = (0..t.len())
                .map(|n| {
                    encoder.context(&ContextQuery {
                        id: &t.id,
                        task: &t.task,
                        visible: &t.turns[..n],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((steps, contexts))
        })
        .collect::<Result<_>>()?;
    let first = encoded
        .iter()
        .flat_map(|(s, _)| s.first())
        .next()
        .ok_or(Error::EmptyTrainingSet)?;
    let dim = first.dim();
    for e in encoded.iter().flat_map(|(s, c)| s.iter().chain(c)) {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.dim(),
            });
        }
    }
    let series = trajs
        .iter()
        .map(|t| SeriesInfo {
            outcome: t.outcome,
            breach: t.breach_step(),
            len: t.len(),
        })
        .collect();
    let (steps, contexts) = encoded.into_iter().unzip();
    Ok(PreparedCorpus {
        series,
        steps,
        contexts,
        mode: encoder.mode(),
        dim,
        dataset_hash: dataset_hash(trajs)?,
    })
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub score_net: Option<DenseNet>,
    pub projector: Projector,
    pub loss_history: Vec<f64>,
}

/// Contrastive training, or its skip under the no-triplet ablation (raw
/// deltas, mean pooling for token states). Frozen weights are rounded to
/// the persisted precision.
pub fn run_stage1(prepared: &PreparedCorpus, config: &TrainConfig) -> Result<Stage1Result> {
    let token_level = prepared.mode == ProviderMode::TokenLevel;
    let score_net = if token_level {
        Some(score_network(prepared.dim, config.score_hidden, config.seed)?)
    } else {
        None
    };
    if config.no_triplet {
        return Ok(Stage1Result {
            score_net: score_net.map(|n| n.zeros_like()),
            projector: Projector::Raw,
            loss_history: Vec::new(),
        });
    }
    let projection = projection_network(
        prepared.dim,
        config.projection_hidden,
        config.projection_dim,
        config.seed.wrapping_add(1),
    )?;
    let corpus = Stage1Corpus {
        series: prepared.series.clone(),
        steps: prepared.steps.clone(),
        absolute_states: config.absolute_states,
    };
    let stage1 = Stage1Config {
        seed: config.seed,
        ..config.stage1
    };
    let out = train_stage1(&corpus, score_net, projection, &stage1)?;
    let mut projection = out.projection;
    projection.round_to_f32();
    let score_net = out.score_net.map(|mut n| {
        n.round_to_f32();
        n
    });
    Ok(Stage1Result {
        score_net,
        projector: Projector::Learned(projection),
        loss_history: out.loss_history,
    })
}

fn round_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Everything after Stage 1 for a given K.
pub fn finish_bundle(
    prepared: &PreparedCorpus,
    stage1: &Stage1Result,
    trajs: &[&Trajectory],
    encoder: &dyn StateEncoder,
    config: &TrainConfig,
) -> Result<ModelBundle> {
    config.validate()?;
    let score_net = stage1.score_net.as_ref();
    let corpus = Stage1Corpus {
        series: prepared.series.clone(),
        steps: prepared.steps.clone(),
        absolute_states: config.absolute_states,
    };
    let deltas = all_deltas(&corpus, score_net)?;
    let flat: Vec<_> = deltas.iter().flatten().cloned().collect();
    let points = stack(&flat)?;
    let projected = stage1.projector.apply_batch(&points)?;
    let mut codebook = fit(projected.view(), config.k, config.seed, &config.kmeans)?;
    round_f32(&mut codebook.centroids);

    // cluster sequences with the frozen codebook, one row per turn
    let mut sequences = Vec::with_capacity(deltas.len());
    let mut offset = 0;
    for d in &deltas {
        let seq = (offset..offset + d.len())
            .map(|i| codebook.quantize(projected.row(i)))
            .collect::<Result<Vec<_>>>()?;
        offset += d.len();
        sequences.push(seq);
    }
    let mut transitions = TransitionModel::new(config.k, config.epsilon, config.beta)?;
    for (seq, info) in sequences.iter().zip(&prepared.series) {
        transitions.accumulate_scoped(seq, info.outcome, info.breach, config.fail_counts_scope)?;
    }

    let context_rows = prepared
        .contexts
        .iter()
        .flatten()
        .map(|e| Ok(e.pooled(score_net)?.0))
        .collect::<Result<Vec<_>>>()?;
    let contexts = stack(&context_rows)?;
    let targets: Vec<usize> = sequences.iter().flatten().copied().collect();
    let stage2 = Stage2Config {
        seed: config.seed.wrapping_add(2),
        ..config.stage2
    };
    let head = prediction_head(prepared.dim, stage2.hidden, config.k, config.seed.wrapping_add(2))?;
    let out = train_stage2(head, contexts.view(), &targets, &stage2)?;
    let mut head = out.head;
    head.round_to_f32();

    let binary = if config.binary_baseline {
        let labels: Vec<bool> = prepared
            .series
            .iter()
            .flat_map(|s| {
                (0..s.len).map(move |t| s.outcome == Outcome::Failure && s.breach == Some(t))
            })
            .collect();
        let init = prediction_head(prepared.dim, stage2.hidden, 2, config.seed.wrapping_add(3))?;
        let (mut b, _) = train_binary_baseline(init, contexts.view(), &labels, &stage2)?;
        b.0.round_to_f32();
        Some(b)
    } else {
        None
    };

    let mut bundle = ModelBundle {
        config: BundleConfig {
            k: config.k,
            top_m: config.top_m,
            state_dim: prepared.dim,
            epsilon: config.epsilon,
            beta: config.beta,
            provider_mode: prepared.mode,
            step_state: config.step_state,
            absolute_states: config.absolute_states,
            no_triplet: config.no_triplet,
            binary_baseline: config.binary_baseline,
            fail_counts_scope: config.fail_counts_scope,
            score_hidden: config.score_hidden,
            projection_hidden: config.projection_hidden,
            projection_dim: config.projection_dim,
            stage1: Stage1Config {
                seed: config.seed,
                ..config.stage1
            },
            stage2,
            kmeans: config.kmeans,
            train_fraction: config.train_fraction,
            split_seed: config.split_seed,
        },
        thresholds: Thresholds::new(0.0, config.delta_jump, config.panic_offset)?,
        provenance: Provenance {
            seed: config.seed,
            dataset_hash: prepared.dataset_hash.clone(),
            train_trajectories: prepared.series.len(),
            created: config.created.clone(),
            stage1_loss: stage1.loss_history.clone(),
            stage2_loss: out.loss_history,
            stage2_train_accuracy: out.train_accuracy,
            inertia_history: codebook.inertia_history.clone(),
        },
        score_net: stage1.score_net.clone(),
        projector: stage1.projector.clone(),
        codebook,
        transitions,
        head,
        binary,
    };
    bundle.thresholds = calibrate_thresholds(
        &bundle,
        trajs,
        encoder,
        config.calibration,
        config.delta_jump,
        config.panic_offset,
        config.static_threshold,
    )?;
    bundle.validate()?;
    Ok(bundle)
}

/// Pool per-turn risks over `trajs` (both outcomes) and calibrate.
pub fn calibrate_thresholds(
    bundle: &ModelBundle,
    trajs: &[&Trajectory],
    encoder: &dyn StateEncoder,
    strategy: CalibrationStrategy,
    delta_jump: f64,
    panic_offset: f64,
    static_threshold: bool,
) -> Result<Thresholds> {
    let risks = risk_series(trajs, bundle, encoder)?;
    let pooled: Vec<f64> = risks.into_iter().flatten().collect();
    let mut th = calibrate(&pooled, strategy, delta_jump, panic_offset)?;
    th.static_threshold = static_threshold;
    Ok(th)
}

pub fn train_bundle(trajs: &[&Trajectory], encoder: &dyn StateEncoder, config: &TrainConfig) -> Result<ModelBundle> {
    config.validate()?;
    let prepared = prepare(trajs, encoder)?;
    let stage1 = run_stage1(&prepared, config)?;
    finish_bundle(&prepared, &stage1, trajs, encoder, config)
}

/// Train Stage 1 once, then fit and evaluate every K.
pub fn sweep_k(
    train: &[&Trajectory],
    test: &[&Trajectory],
    encoder: &dyn StateEncoder,
    config: &TrainConfig,
    ks: &[usize],
) -> Result<Vec<(usize, EvalReport)>> {
    let prepared = prepare(train, encoder)?;
    let stage1 = run_stage1(&prepared, config)?;
    ks.iter()
        .map(|&k| {
            let cfg = TrainConfig {
                k,
                top_m: config.top_m.min(k),
                ..config.clone()
            };
            let bundle = finish_bundle(&prepared, &stage1, train, encoder, &cfg)?;
            Ok((k, evaluate(test, &bundle, encoder)?.0))
        })
        .collect()
}
