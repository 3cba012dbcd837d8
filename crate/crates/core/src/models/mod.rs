//! Denoiser and classifier interfaces, closed-form Gaussian oracles, and the
//! small trainable networks.

pub mod gaussian;
pub mod layers;
pub mod toy_classifier;
pub mod toy_denoiser;

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::tensor::{EpsEstimate, MelTensor};

pub use gaussian::{
    analytic_gaussian_classifier_grad, analytic_gaussian_eps, AnalyticClassifier, AnalyticDenoiser, GaussianWorld,
};
pub use layers::{Linear, Parameters};
pub use toy_classifier::{ClassifierTape, ToyClassifier, ToyClassifierConfig, ToyClassifierParams};
pub use toy_denoiser::{Tape, ToyDenoiser, ToyDenoiserConfig, ToyDenoiserParams};

pub const DEFAULT_TIME_EMBED_DIM: usize = 128;

/// Predicts the noise in `x_t`. `cond = None` selects the unconditional
/// (null-token) branch. Implementations are pure and shape-preserving.
pub trait Denoiser: Send + Sync {
    fn predict_eps(&self, x_t: &MelTensor, t: usize, cond: Option<&ConditioningBundle>) -> Result<EpsEstimate>;
}

/// The discrete target a classifier scores, standing in for a transcript.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(pub usize);

impl ClassLabel {
    pub fn check(self, n_classes: usize) -> Result<Self> {
        if self.0 >= n_classes {
            return Err(Error::InvalidLabel {
                label: self.0,
                classes: n_classes,
            });
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub log_prob: f64,
    /// Gradient of `log_prob` with respect to `x_t`.
    pub grad: MelTensor,
    /// Set by classifiers whose parameters were never trained.
    pub untrained: bool,
}

/// `log p(label | x_t)` and its input gradient, for a classifier trained on
/// diffusion-noised inputs.
pub trait Classifier: Send + Sync {
    fn n_classes(&self) -> usize;
    fn log_prob_and_grad(&self, x_t: &MelTensor, t: usize, label: ClassLabel) -> Result<ClassifierOutput>;
}

/// Sinusoidal step encoding: entry `2k` is `sin(t / 10000^(2k/dim))`, entry
/// `2k + 1` the matching cosine.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::OddEmbeddingWidth(dim));
    }
    if t == 0 {
        return Err(Error::StepOutOfRange { t, steps: 0 });
    }
    let t = t as f64;
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let freq = 10000f64.powf((2 * k) as f64 / dim as f64);
        let arg = t / freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}
