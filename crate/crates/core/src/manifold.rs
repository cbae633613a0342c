//! Causal deltas between consecutive states, the projection head that maps
//! them into the causal space, and its contrastive (triplet) training.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Outcome;
use crate::embedding::{attention_backward, attention_forward, AttentionPass, Encoded, StateVector};
use crate::error::{Error, Result};
use crate::nn::{triplet_loss_grad, Activation, AdamConfig, AdamState, DenseNet};

/// Norm below which a projection is considered degenerate.
pub const MIN_PROJECTION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector {
    pub step: usize,
    pub data: Array1<f64>,
}

/// `Δ₀ = s₀`, `Δₜ = sₜ − sₜ₋₁`.
pub fn causal_delta(states: &[StateVector]) -> Result<Vec<DeltaVector>> {
    let first = states.first().ok_or(Error::EmptyList)?;
    let dim = first.dim();
    let mut out = Vec::with_capacity(states.len());
    for (t, s) in states.iter().enumerate() {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.dim(),
            });
        }
        let data = if t == 0 {
            s.0.clone()
        } else {
            &s.0 - &states[t - 1].0
        };
        out.push(DeltaVector { step: t, data });
    }
    Ok(out)
}

/// Projection head: d → hidden (relu) → out.
pub fn projection_network(input: usize, hidden: usize, output: usize, seed: u64) -> Result<DenseNet> {
    DenseNet::mlp(
        &[input, hidden, output],
        &[Activation::Relu, Activation::Identity],
        false,
        seed,
    )
}

/// Map a delta through the projection head onto the unit sphere.
pub fn project(delta: ArrayView1<f64>, head: &DenseNet) -> Result<Array1<f64>> {
    let y = head.forward(delta)?;
    normalize(y)
}

fn normalize(mut y: Array1<f64>) -> Result<Array1<f64>> {
    let n = y.dot(&y).sqrt();
    if n < MIN_PROJECTION_NORM {
        return Err(Error::ZeroOutput);
    }
    y /= n;
    Ok(y)
}

/// How deltas reach the quantizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Projector {
    /// Trained projection head with unit-norm output.
    Learned(DenseNet),
    /// Deltas are quantized as they are.
    Raw,
}

impl Projector {
    /// Project a delta. A degenerate (zero-norm) projection maps to the
    /// origin so the quantizer still assigns it a prototype.
    pub fn apply(&self, delta: ArrayView1<f64>) -> Result<Array1<f64>> {
        match self {
            Projector::Raw => Ok(delta.to_owned()),
            Projector::Learned(head) => match project(delta, head) {
                Ok(v) => Ok(v),
                Err(Error::ZeroOutput) => Ok(Array1::zeros(head.output_dim())),
                Err(e) => Err(e),
            },
        }
    }

    pub fn apply_batch(&self, deltas: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Projector::Raw => Ok(deltas.clone()),
            Projector::Learned(head) => {
                let mut out = head.forward_batch(deltas.view())?;
                for mut row in out.rows_mut() {
                    let n = row.dot(&row).sqrt();
                    if n < MIN_PROJECTION_NORM {
                        row.fill(0.0);
                    } else {
                        row /= n;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Projector::Raw => input_dim,
            Projector::Learned(head) => head.output_dim(),
        }
    }
}

/// Outcome and breach of one trajectory, as far as triplet mining needs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesInfo {
    pub outcome: Outcome,
    pub breach: Option<usize>,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeltaRef {
    pub series: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Hard,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: DeltaRef,
    pub positive: DeltaRef,
    pub negative: DeltaRef,
    pub kind: NegativeKind,
}

/// Materialized triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<DeltaVector>,
    pub positives: Vec<DeltaVector>,
    pub negatives: Vec<DeltaVector>,
    pub negative_kinds: Vec<NegativeKind>,
}

impl TripletBatch {
    pub fn materialize(triplets: &[Triplet], deltas: &[Vec<DeltaVector>]) -> TripletBatch {
        let get = |r: DeltaRef| deltas[r.series][r.step].clone();
        TripletBatch {
            anchors: triplets.iter().map(|t| get(t.anchor)).collect(),
            positives: triplets.iter().map(|t| get(t.positive)).collect(),
            negatives: triplets.iter().map(|t| get(t.negative)).collect(),
            negative_kinds: triplets.iter().map(|t| t.kind).collect(),
        }
    }
}

/// Seeded generator of (breach, other breach, negative) triplets.
///
/// Anchors are breach-step deltas of annotated failures; positives are the
/// breach deltas of a different failure; negatives are the anchor's own
/// preceding delta (hard) or, with probability `random_negative_weight`
/// and always when the breach is at step 0, a delta drawn uniformly from
/// the success trajectories.
#[derive(Debug, Clone)]
pub struct TripletMiner {
    anchors: Vec<DeltaRef>,
    success_deltas: Vec<DeltaRef>,
    random_negative_weight: f64,
    rng: ChaCha8Rng,
}

impl TripletMiner {
    pub fn new(series: &[SeriesInfo], random_negative_weight: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&random_negative_weight) {
            return Err(Error::InvalidConfig(format!(
                "random negative weight {random_negative_weight} not in [0, 1]"
            )));
        }
        let anchors: Vec<DeltaRef> = series
            .iter()
            .enumerate()
            .filter(|(_, s)| s.outcome == Outcome::Failure)
            .filter_map(|(i, s)| s.breach.map(|b| DeltaRef { series: i, step: b }))
            .collect();
        if anchors.len() < 2 {
            return Err(Error::InsufficientFailures(anchors.len()));
        }
        let success_deltas = series
            .iter()
            .enumerate()
            .filter(|(_, s)| s.outcome == Outcome::Success)
            .flat_map(|(i, s)| (0..s.len).map(move |t| DeltaRef { series: i, step: t }))
            .collect();
        Ok(TripletMiner {
            anchors,
            success_deltas,
            random_negative_weight,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    /// One pass over every anchor in shuffled order.
    pub fn epoch(&mut self) -> Result<Vec<Triplet>> {
        let mut order: Vec<usize> = (0..self.anchors.len()).collect();
        order.shuffle(&mut self.rng);
        order.into_iter().map(|a| self.triplet_for(a)).collect()
    }

    fn triplet_for(&mut self, a: usize) -> Result<Triplet> {
        let anchor = self.anchors[a];
        let mut p = self.rng.random_range(0..self.anchors.len() - 1);
        if p >= a {
            p += 1;
        }
        let positive = self.anchors[p];
        let use_random = anchor.step == 0 || self.rng.random::<f64>() < self.random_negative_weight;
        let (negative, kind) = if use_random {
            if self.success_deltas.is_empty() {
                return Err(Error::NoSuccessDeltas);
            }
            let i = self.rng.random_range(0..self.success_deltas.len());
            (self.success_deltas[i], NegativeKind::Random)
        } else {
            (
                DeltaRef {
                    series: anchor.series,
                    step: anchor.step - 1,
                },
                NegativeKind::Hard,
            )
        };
        Ok(Triplet {
            anchor,
            positive,
            negative,
            kind,
        })
    }
}

/// Mine one epoch of triplets and materialize them.
pub fn mine_triplets(
    series: &[SeriesInfo],
    deltas: &[Vec<DeltaVector>],
    seed: u64,
    random_negative_weight: f64,
) -> Result<TripletBatch> {
    let mut miner = TripletMiner::new(series, random_negative_weight, seed)?;
    Ok(TripletBatch::materialize(&miner.epoch()?, deltas))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub random_negative_weight: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 15,
            margin: 1.0,
            random_negative_weight: 0.5,
            seed: 42,
        }
    }
}

/// Per-trajectory step encodings feeding Stage 1.
pub struct Stage1Corpus {
    pub series: Vec<SeriesInfo>,
    /// `steps[i][t]` is the encoding of turn t of trajectory i.
    pub steps: Vec<Vec<Arc<Encoded>>>,
    /// Feed states instead of deltas (ablation).
    pub absolute_states: bool,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub score_net: Option<DenseNet>,
    pub projection: DenseNet,
    /// Mean triplet loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Jointly train the attention scorer (token-level mode) and the projection
/// head on the mean triplet loss with Adam.
pub fn train_stage1(
    corpus: &Stage1Corpus,
    mut score_net: Option<DenseNet>,
    mut projection: DenseNet,
    config: &Stage1Config,
) -> Result<Stage1Output> {
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut miner = TripletMiner::new(&corpus.series, config.random_negative_weight, config.seed)?;
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut proj_adam = AdamState::new(&projection, adam_cfg);
    let mut score_adam = score_net.as_ref().map(|n| AdamState::new(n, adam_cfg));

    // Pre-pooled encodings never change, so their deltas are computed once.
    let fixed_deltas = if score_net.is_none() {
        Some(all_deltas(corpus, None)?)
    } else {
        None
    };

    let mut loss_history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let triplets = miner.epoch()?;
        let mut epoch_loss = 0.0;
        for batch in triplets.chunks(config.batch_size) {
            let step = match &fixed_deltas {
                Some(deltas) => {
                    let lookup = |r: DeltaRef| deltas[r.series][r.step].view();
                    triplet_step(batch, &projection, config.margin, lookup)?
                }
                None => {
                    let net = score_net.as_ref().expect("token-level mode");
                    let pooled = PooledBatch::forward(corpus, net, batch)?;
                    let lookup = |r: DeltaRef| pooled.deltas[&r].view();
                    let step = triplet_step(batch, &projection, config.margin, lookup)?;
                    let score_grads = pooled.backward(corpus, net, &step.delta_grads)?;
                    let adam = score_adam.as_mut().expect("token-level mode");
                    adam.step(score_net.as_mut().expect("token-level mode"), &score_grads)?;
                    step
                }
            };
            epoch_loss += step.loss_sum;
            proj_adam.step(&mut projection, &step.proj_grads)?;
        }
        loss_history.push(epoch_loss / triplets.len() as f64);
    }

    Ok(Stage1Output {
        score_net,
        projection,
        loss_history,
    })
}

struct TripletStep {
    loss_sum: f64,
    proj_grads: DenseNet,
    delta_grads: HashMap<DeltaRef, Array1<f64>>,
}

/// Forward and backward of the batch-mean triplet loss through the
/// projection head (including output normalization).
fn triplet_step<'a, F>(
    batch: &[Triplet],
    projection: &DenseNet,
    margin: f64,
    lookup: F,
) -> Result<TripletStep>
where
    F: Fn(DeltaRef) -> ArrayView1<'a, f64>,
{
    let b = batch.len();
    let refs: Vec<DeltaRef> = batch
        .iter()
        .map(|t| t.anchor)
        .chain(batch.iter().map(|t| t.positive))
        .chain(batch.iter().map(|t| t.negative))
        .collect();
    let dim = projection.input_dim();
    let mut input = Array2::zeros((refs.len(), dim));
    for (mut row, r) in input.rows_mut().into_iter().zip(&refs) {
        row.assign(&lookup(*r));
    }
    let cache = projection.forward_cached(input.view())?;
    let raw = cache.output();
    let norms: Vec<f64> = raw.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let unit: Vec<Array1<f64>> = raw
        .rows()
        .into_iter()
        .zip(&norms)
        .map(|(r, &n)| if n < MIN_PROJECTION_NORM { r.to_owned() } else { &r / n })
        .collect();

    let mut grad_unit = Array2::<f64>::zeros(raw.dim());
    let mut loss_sum = 0.0;
    let scale = 1.0 / b as f64;
    for i in 0..b {
        let (a, p, n) = (i, b + i, 2 * b + i);
        if [a, p, n].iter().any(|&j| norms[j] < MIN_PROJECTION_NORM) {
            continue;
        }
        let g = triplet_loss_grad(
            unit[a].as_slice().expect("contiguous"),
            unit[p].as_slice().expect("contiguous"),
            unit[n].as_slice().expect("contiguous"),
            margin,
        )?;
        loss_sum += g.loss;
        for (j, gv) in [(a, &g.anchor), (p, &g.positive), (n, &g.negative)] {
            let mut row = grad_unit.row_mut(j);
            row.zip_mut_with(&ArrayView1::from(gv.as_slice()), |d, s| *d += s * scale);
        }
    }
    // through y ↦ y/‖y‖: dL/dy = (g − (g·ŷ)ŷ)/‖y‖
    let mut grad_raw = grad_unit;
    for (j, mut row) in grad_raw.rows_mut().into_iter().enumerate() {
        if norms[j] < MIN_PROJECTION_NORM {
            row.fill(0.0);
            continue;
        }
        let proj = row.dot(&unit[j]);
        row.zip_mut_with(&unit[j], |g, &u| *g = (*g - proj * u) / norms[j]);
    }
    let (proj_grads, grad_input) = projection.backward(&cache, grad_raw.view())?;

    let mut delta_grads: HashMap<DeltaRef, Array1<f64>> = HashMap::new();
    for (r, g) in refs.iter().zip(grad_input.rows()) {
        *delta_grads.entry(*r).or_insert_with(|| Array1::zeros(dim)) += &g;
    }
    Ok(TripletStep {
        loss_sum,
        proj_grads,
        delta_grads,
    })
}

fn pooled_state(encoded: &Encoded, score_net: Option<&DenseNet>) -> Result<Array1<f64>> {
    Ok(encoded.pooled(score_net)?.0)
}

/// Deltas (or states, under the absolute-state ablation) of every turn.
pub fn all_deltas(corpus: &Stage1Corpus, score_net: Option<&DenseNet>) -> Result<Vec<Vec<Array1<f64>>>> {
    corpus
        .steps
        .iter()
        .map(|steps| {
            let states: Vec<StateVector> = steps
                .iter()
                .map(|e| pooled_state(e, score_net).map(StateVector))
                .collect::<Result<_>>()?;
            if corpus.absolute_states {
                Ok(states.into_iter().map(|s| s.0).collect())
            } else {
                Ok(causal_delta(&states)?.into_iter().map(|d| d.data).collect())
            }
        })
        .collect()
}

/// Attention-pooled states needed by one token-level batch.
struct PooledBatch {
    passes: HashMap<DeltaRef, AttentionPass>,
    deltas: HashMap<DeltaRef, Array1<f64>>,
    absolute: bool,
}

fn token_matrix(corpus: &Stage1Corpus, r: DeltaRef) -> Result<&crate::embedding::TokenStateMatrix> {
    match corpus.steps[r.series][r.step].as_ref() {
        Encoded::Tokens(m) => Ok(m),
        Encoded::Pooled(_) => Err(Error::ModeMismatch(
            "mixed token-level and pre-pooled encodings".into(),
        )),
    }
}

impl PooledBatch {
    fn forward(corpus: &Stage1Corpus, net: &DenseNet, batch: &[Triplet]) -> Result<Self> {
        let mut passes = HashMap::new();
        let mut deltas = HashMap::new();
        let absolute = corpus.absolute_states;
        for t in batch {
            for r in [t.anchor, t.positive, t.negative] {
                if deltas.contains_key(&r) {
                    continue;
                }
                let mut needed = vec![r];
                if !absolute && r.step > 0 {
                    needed.push(DeltaRef {
                        series: r.series,
                        step: r.step - 1,
                    });
                }
                for n in needed {
                    if let std::collections::hash_map::Entry::Vacant(e) = passes.entry(n) {
                        e.insert(attention_forward(token_matrix(corpus, n)?, net)?);
                    }
                }
                let cur = &passes[&r].output;
                let delta = if absolute || r.step == 0 {
                    cur.clone()
                } else {
                    cur - &passes[&DeltaRef {
                        series: r.series,
                        step: r.step - 1,
                    }]
                    .output
                };
                deltas.insert(r, delta);
            }
        }
        Ok(PooledBatch {
            passes,
            deltas,
            absolute,
        })
    }

    fn backward(
        &self,
        corpus: &Stage1Corpus,
        net: &DenseNet,
        delta_grads: &HashMap<DeltaRef, Array1<f64>>,
    ) -> Result<DenseNet> {
        // dΔ_t/ds_t = I, dΔ_t/ds_{t−1} = −I
        let mut state_grads: HashMap<DeltaRef, Array1<f64>> = HashMap::new();
        for (r, g) in delta_grads {
            *state_grads
                .entry(*r)
                .or_insert_with(|| Array1::zeros(g.len())) += g;
            if !self.absolute && r.step > 0 {
                let prev = DeltaRef {
                    series: r.series,
                    step: r.step - 1,
                };
                *state_grads
                    .entry(prev)
                    .or_insert_with(|| Array1::zeros(g.len())) -= g;
            }
        }
        let mut keys: Vec<&DeltaRef> = state_grads.keys().collect();
        keys.sort_by_key(|r| (r.series, r.step));
        let mut total = net.zeros_like();
        for r in keys {
            let grads = attention_backward(
                token_matrix(corpus, *r)?,
                net,
                &self.passes[r],
                state_grads[r].view(),
            )?;
            total.add_assign(&grads)?;
        }
        Ok(total)
    }
}

/// Gradients of the batch-mean triplet loss with respect to the scorer and
/// the projection head, for verification against finite differences.
pub fn triplet_gradients(
    corpus: &Stage1Corpus,
    score_net: &DenseNet,
    projection: &DenseNet,
    batch: &[Triplet],
    margin: f64,
) -> Result<(f64, DenseNet, DenseNet)> {
    let pooled = PooledBatch::forward(corpus, score_net, batch)?;
    let lookup = |r: DeltaRef| pooled.deltas[&r].view();
    let step = triplet_step(batch, projection, margin, lookup)?;
    let score_grads = pooled.backward(corpus, score_net, &step.delta_grads)?;
    Ok((step.loss_sum / batch.len() as f64, score_grads, step.proj_grads))
}

/// Batch-mean triplet loss computed independently of the gradient code path.
pub fn triplet_batch_loss(
    corpus: &Stage1Corpus,
    score_net: Option<&DenseNet>,
    projection: &DenseNet,
    batch: &[Triplet],
    margin: f64,
) -> Result<f64> {
    let deltas = all_deltas(corpus, score_net)?;
    let mut total = 0.0;
    for t in batch {
        let a = project(deltas[t.anchor.series][t.anchor.step].view(), projection)?;
        let p = project(deltas[t.positive.series][t.positive.step].view(), projection)?;
        let n = project(deltas[t.negative.series][t.negative.step].view(), projection)?;
        total += crate::nn::triplet_loss(
            a.as_slice().expect("contiguous"),
            p.as_slice().expect("contiguous"),
            n.as_slice().expect("contiguous"),
            margin,
        )?;
    }
    Ok(total / batch.len() as f64)
}

/// Stack rows into a matrix.
pub fn stack(rows: &[Array1<f64>]) -> Result<Array2<f64>> {
    let dim = rows.first().ok_or(Error::EmptyList)?.len();
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        if src.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: src.len(),
            });
        }
        dst.assign(src);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::from(v.to_vec())
    }

    #[test]
    fn delta_examples() {
        let d = causal_delta(&[sv(&[1.0, 2.0])]).unwrap();
        assert_eq!(d[0].data, array![1.0, 2.0]);
        let d = causal_delta(&[sv(&[1.0, 2.0]), sv(&[1.0, 2.0])]).unwrap();
        assert_eq!(d[1].data, array![0.0, 0.0]);
        let d = causal_delta(&[sv(&[0.5, -1.0]), sv(&[2.0, 0.0])]).unwrap();
        assert_eq!(d[0].data, array![0.5, -1.0]);
        assert_eq!(d[1].data, array![1.5, 1.0]);
        assert!(matches!(causal_delta(&[]), Err(Error::EmptyList)));
        assert!(matches!(
            causal_delta(&[sv(&[1.0]), sv(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cumulative_sum_inverts_delta() {
        let states: Vec<StateVector> = (0..6)
            .map(|i| sv(&[i as f64 * 0.5 - 1.0, (i * i) as f64 * 0.25]))
            .collect();
        let deltas = causal_delta(&states).unwrap();
        let mut acc = Array1::zeros(2);
        for (d, s) in deltas.iter().zip(&states) {
            acc += &d.data;
            assert_eq!(acc, s.0);
        }
    }

    #[test]
    fn identity_projection_normalizes() {
        let head = DenseNet::new(
            None,
            vec![crate::nn::Dense {
                weights: Array2::eye(2),
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        let out = project(array![3.0, 4.0].view(), &head).unwrap();
        assert_abs_diff_eq!(out[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.8, epsilon = 1e-12);
        assert!(matches!(project(array![0.0, 0.0].view(), &head), Err(Error::ZeroOutput)));
    }

    #[test]
    fn projection_is_unit_norm_and_deterministic() {
        let head = projection_network(6, 32, 16, 1).unwrap();
        let d = array![0.3, -0.2, 0.9, 0.0, 0.1, -0.5];
        let a = project(d.view(), &head).unwrap();
        assert_abs_diff_eq!(a.dot(&a).sqrt(), 1.0, epsilon = 1e-9);
        assert_eq!(a, project(d.view(), &head).unwrap());
    }

    fn series() -> Vec<SeriesInfo> {
        vec![
            SeriesInfo { outcome: Outcome::Failure, breach: Some(3), len: 6 },
            SeriesInfo { outcome: Outcome::Failure, breach: Some(5), len: 7 },
            SeriesInfo { outcome: Outcome::Success, breach: None, len: 4 },
        ]
    }

    #[test]
    fn weight_zero_always_hard() {
        let mut miner = TripletMiner::new(&series(), 0.0, 1).unwrap();
        for _ in 0..20 {
            for t in miner.epoch().unwrap() {
                assert_eq!(t.kind, NegativeKind::Hard);
                assert_eq!(t.negative.series, t.anchor.series);
                assert_eq!(t.negative.step + 1, t.anchor.step);
                assert_ne!(t.positive.series, t.anchor.series);
            }
        }
    }

    #[test]
    fn weight_one_always_random() {
        let mut miner = TripletMiner::new(&series(), 1.0, 1).unwrap();
        for _ in 0..20 {
            for t in miner.epoch().unwrap() {
                assert_eq!(t.kind, NegativeKind::Random);
                assert_eq!(t.negative.series, 2);
            }
        }
    }

    #[test]
    fn breach_at_zero_gets_random_negative() {
        let s = vec![
            SeriesInfo { outcome: Outcome::Failure, breach: Some(0), len: 3 },
            SeriesInfo { outcome: Outcome::Failure, breach: Some(2), len: 3 },
            SeriesInfo { outcome: Outcome::Success, breach: None, len: 3 },
        ];
        let mut miner = TripletMiner::new(&s, 0.0, 9).unwrap();
        for t in miner.epoch().unwrap() {
            if t.anchor.step == 0 {
                assert_eq!(t.kind, NegativeKind::Random);
            }
        }
        let no_success = &s[..2];
        let mut miner = TripletMiner::new(no_success, 0.0, 9).unwrap();
        assert!(matches!(miner.epoch(), Err(Error::NoSuccessDeltas)));
    }

    #[test]
    fn single_failure_is_rejected() {
        assert!(matches!(
            TripletMiner::new(&series()[1..], 0.5, 0),
            Err(Error::InsufficientFailures(1))
        ));
    }
}
