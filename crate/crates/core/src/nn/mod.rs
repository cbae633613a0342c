//! Small trainable-network substrate: dense MLPs with optional layer
//! normalization, the losses the pipeline trains with, Adam, and gradient
//! checking.

mod adam;
mod dense;
pub mod gradcheck;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, Dense, DenseNet, ForwardCache, LayerNorm, LAYER_NORM_EPS};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{
    cosine_distance, cosine_distance_grad, smoothed_cross_entropy, smoothed_cross_entropy_logits,
    softmax, triplet_loss, triplet_loss_grad, TripletGrad,
};

/// Anything exposing its trainable parameters as flat tensors.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

impl<A: Parameters, B: Parameters> Parameters for (A, B) {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.0.param_slices();
        v.extend(self.1.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.0.param_slices_mut();
        v.extend(self.1.param_slices_mut());
        v
    }
}
