//! Next-action prototype prediction from the pre-action context and the
//! expected transition risk over the most likely prototypes. Also the
//! binary breach classifier used as an ablation baseline.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{Prev, TransitionModel};
use crate::nn::{smoothed_cross_entropy_logits, softmax, Activation, AdamConfig, AdamState, DenseNet};

pub const DEFAULT_TOP_M: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedDistribution {
    pub probs: Vec<f64>,
    /// (cluster, renormalized probability), by descending original probability.
    pub top_m: Vec<(usize, f64)>,
}

impl PredictedDistribution {
    pub fn from_probs(probs: Vec<f64>, m: usize) -> Result<Self> {
        let k = probs.len();
        if m == 0 || m > k {
            return Err(Error::InvalidConfig(format!("top-m {m} not in [1, {k}]")));
        }
        let mut order: Vec<usize> = (0..k).collect();
        // stable sort keeps lower indices first among equal probabilities
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        order.truncate(m);
        let mass: f64 = order.iter().map(|&i| probs[i]).sum();
        let top_m = order.into_iter().map(|i| (i, probs[i] / mass)).collect();
        Ok(PredictedDistribution { probs, top_m })
    }

    pub fn from_logits(logits: &[f64], m: usize) -> Result<Self> {
        Self::from_probs(softmax(logits), m)
    }
}

/// `π = softmax(gω(c))` with its Top-M truncation.
pub fn predict_distribution(context: ArrayView1<f64>, head: &DenseNet, m: usize) -> Result<PredictedDistribution> {
    let logits = head.forward(context)?;
    PredictedDistribution::from_logits(logits.as_slice().expect("contiguous"), m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskComponent {
    pub cluster: usize,
    pub weight: f64,
    pub likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskScore {
    pub value: f64,
    pub components: Vec<RiskComponent>,
}

/// `Rₜ = Σₖ π̃ₖ · λ_{prev,k}` over the Top-M set.
pub fn expected_risk(dist: &PredictedDistribution, prev: Prev, model: &TransitionModel) -> Result<RiskScore> {
    let mut value = 0.0;
    let mut components = Vec::with_capacity(dist.top_m.len());
    for &(cluster, weight) in &dist.top_m {
        let likelihood = model.likelihood_from(prev, cluster)?;
        value += weight * likelihood;
        components.push(RiskComponent {
            cluster,
            weight,
            likelihood,
        });
    }
    Ok(RiskScore { value, components })
}

/// LayerNorm → dense(hidden, relu) → dense(outputs). The output layer starts
/// at zero, so an untrained head predicts the uniform distribution.
pub fn prediction_head(input: usize, hidden: usize, outputs: usize, seed: u64) -> Result<DenseNet> {
    let mut net = DenseNet::mlp(
        &[input, hidden, outputs],
        &[Activation::Relu, Activation::Identity],
        true,
        seed,
    )?;
    let last = net.layers.last_mut().expect("two layers");
    last.weights.fill(0.0);
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 15,
            label_smoothing: 0.1,
            hidden: 512,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub head: DenseNet,
    pub loss_history: Vec<f64>,
    /// Mean loss over the training set with the final weights.
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Mean smoothed cross-entropy of a batch and its gradient.
pub fn cross_entropy_gradients(
    head: &DenseNet,
    inputs: ArrayView2<f64>,
    targets: &[usize],
    smoothing: f64,
) -> Result<(f64, DenseNet)> {
    weighted_ce(head, inputs, targets, smoothing, None)
}

fn weighted_ce(
    head: &DenseNet,
    inputs: ArrayView2<f64>,
    targets: &[usize],
    smoothing: f64,
    class_weights: Option<&[f64]>,
) -> Result<(f64, DenseNet)> {
    let cache = head.forward_cached(inputs)?;
    let logits = cache.output();
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| class_weights.map_or(1.0, |w| w[t]))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
        let row = logits.row(i).to_vec();
        let (l, g) = smoothed_cross_entropy_logits(&row, t, smoothing)?;
        loss += w * l / total;
        for (dst, gv) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = w * gv / total;
        }
    }
    let (grads, _) = head.backward(&cache, grad.view())?;
    Ok((loss, grads))
}

fn gather(inputs: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    inputs.select(ndarray::Axis(0), idx)
}

fn train_ce(
    mut head: DenseNet,
    inputs: ArrayView2<f64>,
    targets: &[usize],
    config: &Stage2Config,
    smoothing: f64,
    class_weights: Option<&[f64]>,
) -> Result<Stage2Output> {
    if targets.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if inputs.nrows() != targets.len() {
        return Err(Error::ShapeMismatch);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let k = head.output_dim();
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::IndexOutOfRange { index: bad, size: k });
    }
    let mut adam = AdamState::new(&head, AdamConfig::with_learning_rate(config.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = gather(inputs, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = weighted_ce(&head, x.view(), &y, smoothing, class_weights)?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut head, &grads)?;
        }
        loss_history.push(epoch_loss / targets.len() as f64);
    }
    let logits = head.forward_batch(inputs)?;
    let mut final_loss = 0.0;
    let mut correct = 0usize;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let row = row.to_vec();
        final_loss += smoothed_cross_entropy_logits(&row, t, smoothing)?.0;
        if argmax(&row) == t {
            correct += 1;
        }
    }
    Ok(Stage2Output {
        head,
        loss_history,
        final_loss: final_loss / targets.len() as f64,
        train_accuracy: correct as f64 / targets.len() as f64,
    })
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fit gω on (context state, next cluster) pairs with label-smoothed
/// cross-entropy and Adam.
pub fn train_stage2(
    head: DenseNet,
    contexts: ArrayView2<f64>,
    targets: &[usize],
    config: &Stage2Config,
) -> Result<Stage2Output> {
    train_ce(head, contexts, targets, config, config.label_smoothing, None)
}

/// Two-way breach classifier; class 1 is "this turn is the breach".
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHead(pub DenseNet);

impl BinaryHead {
    pub fn risk(&self, context: ArrayView1<f64>) -> Result<f64> {
        let logits = self.0.forward(context)?;
        Ok(softmax(logits.as_slice().expect("contiguous"))[1])
    }
}

/// Inverse-frequency weights `n / (2 nᶜ)`.
pub fn class_weights(labels: &[bool]) -> Result<[f64; 2]> {
    if labels.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let pos = labels.iter().filter(|&&b| b).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassCorpus);
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * neg as f64), n / (2.0 * pos as f64)])
}

/// Train the binary baseline with class-weighted (unsmoothed) cross-entropy.
pub fn train_binary_baseline(
    head: DenseNet,
    contexts: ArrayView2<f64>,
    labels: &[bool],
    config: &Stage2Config,
) -> Result<(BinaryHead, Stage2Output)> {
    if head.output_dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: head.output_dim(),
        });
    }
    let weights = class_weights(labels)?;
    let targets: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let out = train_ce(head, contexts, &targets, config, 0.0, Some(&weights))?;
    Ok((BinaryHead(out.head.clone()), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{DEFAULT_BETA, DEFAULT_EPSILON};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn uniform_logits_tie_break() {
        let d = PredictedDistribution::from_logits(&[0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(d.top_m.len(), 2);
        assert_eq!(d.top_m[0].0, 0);
        assert_eq!(d.top_m[1].0, 1);
        assert_abs_diff_eq!(d.top_m[0].1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.top_m[1].1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn full_set_is_unchanged() {
        let probs = vec![0.2, 0.5, 0.3];
        let d = PredictedDistribution::from_probs(probs.clone(), 3).unwrap();
        for (c, p) in &d.top_m {
            assert_abs_diff_eq!(*p, probs[*c], epsilon = 1e-12);
        }
    }

    #[test]
    fn renormalized_pair() {
        let d = PredictedDistribution::from_probs(vec![0.5, 0.3, 0.2], 2).unwrap();
        assert_eq!(d.top_m[0].0, 0);
        assert_eq!(d.top_m[1].0, 1);
        assert_abs_diff_eq!(d.top_m[0].1, 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(d.top_m[1].1, 0.375, epsilon = 1e-12);
        assert!(PredictedDistribution::from_probs(vec![0.5, 0.5], 3).is_err());
    }

    #[test]
    fn risk_closed_form() {
        let mut model = TransitionModel::new(3, DEFAULT_EPSILON, DEFAULT_BETA).unwrap();
        // λ(2,0) = 1/10, λ(2,1) = 4/5
        model.succ_counts[[2, 0]] = 8;
        model.fail_counts[[2, 1]] = 3;
        let d = PredictedDistribution::from_probs(vec![0.5, 0.3, 0.2], 2).unwrap();
        let r = expected_risk(&d, Prev::Cluster(2), &model).unwrap();
        assert_abs_diff_eq!(r.value, 0.3625, epsilon = 1e-12);
        let fresh = TransitionModel::new(3, DEFAULT_EPSILON, DEFAULT_BETA).unwrap();
        assert_eq!(expected_risk(&d, Prev::Start, &fresh).unwrap().value, 0.5);
        assert!(matches!(
            expected_risk(&d, Prev::Cluster(5), &fresh),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn untrained_head_loss_near_log_k() {
        let k = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((64, 16), |_| rng.random::<f64>() - 0.5);
        let y: Vec<usize> = (0..64).map(|i| i % k).collect();
        let head = prediction_head(16, 32, k, 1).unwrap();
        let cfg = Stage2Config { epochs: 0, ..Default::default() };
        let out = train_stage2(head, x.view(), &y, &cfg).unwrap();
        let lnk = (k as f64).ln();
        assert!((out.final_loss - lnk).abs() < 0.1 * lnk, "{}", out.final_loss);
        assert_abs_diff_eq!(out.final_loss, lnk, epsilon = 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let k = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<usize> = (0..200).map(|i| i % k).collect();
        let x = Array2::from_shape_fn((200, 8), |(i, j)| {
            (if j == y[i] { 1.0 } else { 0.0 }) + 0.1 * (rng.random::<f64>() - 0.5)
        });
        let cfg = Stage2Config { hidden: 16, epochs: 60, ..Default::default() };
        let a = train_stage2(prediction_head(8, 16, k, 2).unwrap(), x.view(), &y, &cfg).unwrap();
        let b = train_stage2(prediction_head(8, 16, k, 2).unwrap(), x.view(), &y, &cfg).unwrap();
        assert_eq!(a.head, b.head);
        assert!(a.train_accuracy > 0.9);
    }

    #[test]
    fn binary_baseline_contracts() {
        assert!(matches!(class_weights(&[true, true]), Err(Error::SingleClassCorpus)));
        assert!(matches!(class_weights(&[]), Err(Error::EmptyTrainingSet)));
        let w = class_weights(&[true, false, false, false]).unwrap();
        assert_abs_diff_eq!(w[0], 4.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-12);

        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((40, 2), |(i, j)| if (i % 2 == 0) == (j == 0) { 1.0 } else { -1.0 });
        let (head, _) = train_binary_baseline(
            prediction_head(2, 8, 2, 0).unwrap(),
            x.view(),
            &labels,
            &Stage2Config::default(),
        )
        .unwrap();
        let logits = head.0.forward(x.row(0)).unwrap();
        let p = softmax(logits.as_slice().unwrap());
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(head.risk(x.row(0)).unwrap() > 0.5);
        assert!(head.risk(x.row(1)).unwrap() < 0.5);
    }
}
