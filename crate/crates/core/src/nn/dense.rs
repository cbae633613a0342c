use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

/// Variance epsilon of the normalization stage.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer; `weights` is out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let weights = Array2::from_shape_fn((output, input), |_| rng.random_range(-a..a));
        Dense {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }
}

/// Per-feature standardization with learnable gain and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub offset: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            offset: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub norm: Option<LayerNorm>,
    pub layers: Vec<Dense>,
}

/// Intermediate values of a batched forward pass, needed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    norm: Option<(Array2<f64>, Array1<f64>)>,
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("network has at least one layer")
    }
}

impl DenseNet {
    pub fn new(norm: Option<LayerNorm>, layers: Vec<Dense>) -> Result<Self> {
        let net = DenseNet { norm, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        let mut dim = self.layers[0].input_dim();
        if let Some(norm) = &self.norm {
            if norm.dim() != dim || norm.offset.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: norm.dim(),
                });
            }
        }
        for layer in &self.layers {
            if layer.input_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: layer.input_dim(),
                });
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.output_dim(),
                    actual: layer.bias.len(),
                });
            }
            dim = layer.output_dim();
        }
        if self.param_count() == 0 {
            return Err(Error::InvalidConfig("network has no parameters".into()));
        }
        Ok(())
    }

    /// A plain MLP. `widths` lists every layer boundary, `activations` one per layer.
    pub fn mlp(
        widths: &[usize],
        activations: &[Activation],
        layer_norm: bool,
        seed: u64,
    ) -> Result<Self> {
        if widths.len() < 2 || activations.len() + 1 != widths.len() {
            return Err(Error::InvalidConfig("mlp widths/activations mismatch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::glorot(w[0], w[1], act, &mut rng))
            .collect();
        DenseNet::new(layer_norm.then(|| LayerNorm::new(widths[0])), layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::output_dim).unwrap_or(0)
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let batch = input.insert_axis(Axis(0));
        let out = self.forward_batch(batch)?;
        Ok(out.row(0).to_owned())
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.outputs.pop().expect("non-empty"))
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        let mut norm_cache = None;
        let mut x = match &self.norm {
            Some(norm) => {
                let (y, xhat, inv_std) = layer_norm_forward(norm, input);
                norm_cache = Some((xhat, inv_std));
                y
            }
            None => input.to_owned(),
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            if layer.activation != Activation::Identity {
                z.mapv_inplace(|v| layer.activation.apply(v));
            }
            inputs.push(x);
            x = z.clone();
            outputs.push(z);
        }
        Ok(ForwardCache {
            norm: norm_cache,
            inputs,
            outputs,
        })
    }

    /// Backpropagate `grad_output` (batch × out). Returns parameter gradients
    /// (shaped like `self`) and the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView2<f64>,
    ) -> Result<(DenseNet, Array2<f64>)> {
        let out = cache.output();
        if grad_output.dim() != out.dim() {
            return Err(Error::ShapeMismatch);
        }
        let mut grads = self.zeros_like();
        let mut delta = grad_output.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                delta.zip_mut_with(&cache.outputs[l], |d, &a| *d *= act.derivative_from_output(a));
            }
            let g = &mut grads.layers[l];
            g.weights = delta.t().dot(&cache.inputs[l]);
            g.bias = delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weights);
        }
        if let (Some(norm), Some((xhat, inv_std))) = (&self.norm, &cache.norm) {
            let g = grads.norm.as_mut().expect("zeros_like keeps norm");
            g.gain = (&delta * xhat).sum_axis(Axis(0));
            g.offset = delta.sum_axis(Axis(0));
            let dxhat = &delta * &norm.gain;
            let n = norm.dim() as f64;
            let mut dx = Array2::zeros(delta.dim());
            for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                let dh = dxhat.row(r);
                let xh = xhat.row(r);
                let sum_dh = dh.sum();
                let sum_dh_xh = dh.dot(&xh);
                let s = inv_std[r] / n;
                for j in 0..row.len() {
                    row[j] = s * (n * dh[j] - sum_dh - xh[j] * sum_dh_xh);
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    pub fn zeros_like(&self) -> DenseNet {
        DenseNet {
            norm: self.norm.as_ref().map(|n| LayerNorm {
                gain: Array1::zeros(n.dim()),
                offset: Array1::zeros(n.dim()),
            }),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Round every parameter to the nearest `f32`, the persisted precision.
    pub fn round_to_f32(&mut self) {
        for slice in self.param_slices_mut() {
            for v in slice.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Accumulate `other` (same shape) into `self`.
    pub fn add_assign(&mut self, other: &DenseNet) -> Result<()> {
        let mut dst = self.param_slices_mut();
        let src = other.param_slices();
        if dst.len() != src.len() {
            return Err(Error::ShapeMismatch);
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.len() != s.len() {
                return Err(Error::ShapeMismatch);
            }
            d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

fn layer_norm_forward(
    norm: &LayerNorm,
    input: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let n = input.ncols() as f64;
    let mut xhat = input.to_owned();
    let mut inv_std = Array1::zeros(input.nrows());
    for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * s);
        inv_std[r] = s;
    }
    let y = &xhat * &norm.gain + &norm.offset;
    (y, xhat, inv_std)
}

impl Parameters for DenseNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(n) = &self.norm {
            out.push(n.gain.as_slice().expect("contiguous"));
            out.push(n.offset.as_slice().expect("contiguous"));
        }
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("contiguous"));
            out.push(l.bias.as_slice().expect("contiguous"));
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(n) = &mut self.norm {
            out.push(n.gain.as_slice_mut().expect("contiguous"));
            out.push(n.offset.as_slice_mut().expect("contiguous"));
        }
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("contiguous"));
            out.push(l.bias.as_slice_mut().expect("contiguous"));
        }
        out
    }
}
