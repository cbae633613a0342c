//! Latent states from dialogue text: prompt templates, embedding providers,
//! and learnable attention pooling over token states.

mod http;
pub mod pmeb;
mod prompt;
mod provider;
mod source;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, Activation, DenseNet};

pub use http::{HttpConfig, HttpProvider};
pub use prompt::{render_extraction_prompt, render_history_prompt};
pub use provider::{
    hash64, synthetic_token_states, CachedProvider, EmbeddingProvider, FileProvider,
    SyntheticProvider,
};
pub use source::{
    sidecar_paths, write_sidecars, ContextQuery, PromptEncoder, SidecarEncoder, StateEncoder,
    StepQuery, StepStateKind,
};

/// Token-level hidden states of one prompt (T × D, T ≥ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStateMatrix(Array2<f64>);

impl TokenStateMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyPrompt);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("token states contain non-finite values".into()));
        }
        Ok(TokenStateMatrix(data))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// A pooled latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Array1<f64>);

impl StateVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(Array1::from(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    /// Provider returns token states; attention pooling applies.
    TokenLevel,
    /// Provider returns one vector per text; pooling is bypassed.
    PrePooled,
}

/// What a provider returns for one text.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Tokens(TokenStateMatrix),
    Pooled(StateVector),
}

impl Encoded {
    pub fn dim(&self) -> usize {
        match self {
            Encoded::Tokens(m) => m.dim(),
            Encoded::Pooled(v) => v.dim(),
        }
    }

    /// Reduce to a state vector, pooling token states with `score_net` when present.
    pub fn pooled(&self, score_net: Option<&DenseNet>) -> Result<StateVector> {
        match (self, score_net) {
            (Encoded::Pooled(v), _) => Ok(v.clone()),
            (Encoded::Tokens(m), Some(net)) => attention_pool(m, net),
            (Encoded::Tokens(_), None) => Err(Error::ModeMismatch(
                "token states require an attention-pooling network".into(),
            )),
        }
    }
}

/// Score network of the attention pooler: D → hidden (tanh) → 1.
pub fn score_network(token_dim: usize, hidden: usize, seed: u64) -> Result<DenseNet> {
    DenseNet::mlp(
        &[token_dim, hidden, 1],
        &[Activation::Tanh, Activation::Identity],
        false,
        seed,
    )
}

/// One attention-pooling pass with what its backward pass needs.
#[derive(Debug, Clone)]
pub struct AttentionPass {
    pub weights: Vec<f64>,
    pub output: Array1<f64>,
    cache: crate::nn::ForwardCache,
}

/// `Σᵢ αᵢ·rowᵢ` with `α = softmax(score_net(rowᵢ))`.
pub fn attention_pool(matrix: &TokenStateMatrix, score_net: &DenseNet) -> Result<StateVector> {
    Ok(StateVector(attention_forward(matrix, score_net)?.output))
}

pub fn attention_forward(matrix: &TokenStateMatrix, score_net: &DenseNet) -> Result<AttentionPass> {
    if score_net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: score_net.output_dim(),
        });
    }
    let rows = matrix.as_array();
    let cache = score_net.forward_cached(rows.view())?;
    let scores: Vec<f64> = cache.output().column(0).to_vec();
    let weights = softmax(&scores);
    let output = Array1::from(weights.clone()).dot(rows);
    Ok(AttentionPass {
        weights,
        output,
        cache,
    })
}

/// Gradient of the score network given `dL/d(pooled output)`. Token states
/// are treated as constants (frozen backbone).
pub fn attention_backward(
    matrix: &TokenStateMatrix,
    score_net: &DenseNet,
    pass: &AttentionPass,
    grad_output: ArrayView1<f64>,
) -> Result<DenseNet> {
    let rows = matrix.as_array();
    // dL/dα_i = g·r_i ; dL/de_i = α_i (dL/dα_i − Σ_j α_j dL/dα_j)
    let dalpha = rows.dot(&grad_output);
    let mean: f64 = pass.weights.iter().zip(dalpha.iter()).map(|(a, d)| a * d).sum();
    let dscores: Array1<f64> = pass
        .weights
        .iter()
        .zip(dalpha.iter())
        .map(|(a, d)| a * (d - mean))
        .collect();
    let (grads, _) = score_net.backward(&pass.cache, dscores.insert_axis(Axis(1)).view())?;
    Ok(grads)
}
