//! Softmax classifier over diffusion-noised mel grids.
//!
//! ```text
//! tau    = silu(W_t2 silu(W_t1 emb(t)))
//! h_n    = silu(W_in x_n + tau)          per frame
//! q      = silu(W_h mean_n(h_n))
//! logits = W_head q
//! ```
//!
//! Mean pooling over frames keeps it length-agnostic. The head starts at
//! zero, so a fresh classifier is uniform over labels.

use crate::error::{Error, Result};
use crate::models::layers::{log_sum_exp, silu_backward, silu_vec, Linear, Parameters};
use crate::models::{time_embedding, ClassLabel, Classifier, ClassifierOutput, DEFAULT_TIME_EMBED_DIM};
use crate::rng::{self, Domain};
use crate::tensor::MelTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyClassifierConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub time_dim: usize,
    pub n_classes: usize,
}

impl Default for ToyClassifierConfig {
    fn default() -> Self {
        Self {
            n_mels: 16,
            channels: 64,
            time_dim: DEFAULT_TIME_EMBED_DIM,
            n_classes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyClassifierParams {
    pub time1: Linear,
    pub time2: Linear,
    pub input: Linear,
    pub hidden: Linear,
    pub head: Linear,
}

impl ToyClassifierParams {
    pub fn init(cfg: &ToyClassifierConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::ParamInit, 1);
        let c = cfg.channels;
        Self {
            time1: Linear::init(cfg.time_dim, c, 1.0, &mut rng),
            time2: Linear::init(c, c, 1.0, &mut rng),
            input: Linear::init(cfg.n_mels, c, 1.0, &mut rng),
            hidden: Linear::init(c, c, 1.0, &mut rng),
            head: Linear::zeros(c, cfg.n_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            time1: self.time1.zeros_like(),
            time2: self.time2.zeros_like(),
            input: self.input.zeros_like(),
            hidden: self.hidden.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl Parameters for ToyClassifierParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.time1.visit("time1", f);
        self.time2.visit("time2", f);
        self.input.visit("input", f);
        self.hidden.visit("hidden", f);
        self.head.visit("head", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.time1.visit_mut("time1", f);
        self.time2.visit_mut("time2", f);
        self.input.visit_mut("input", f);
        self.hidden.visit_mut("hidden", f);
        self.head.visit_mut("head", f);
    }
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ClassifierTape {
    temb: Vec<f64>,
    a1: Vec<f64>,
    s1: Vec<f64>,
    a2: Vec<f64>,
    frames: Vec<Vec<f64>>,
    frame_pre: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    q: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ClassifierTape {
    pub fn log_probs(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|l| l - lse).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyClassifier {
    pub config: ToyClassifierConfig,
    pub params: ToyClassifierParams,
    pub trained: bool,
}

impl ToyClassifier {
    pub fn new(config: ToyClassifierConfig, seed: u64) -> Result<Self> {
        if config.n_classes < 2 || config.n_mels == 0 || config.channels == 0 {
            return Err(Error::TopologyMismatch(format!("degenerate classifier config {config:?}")));
        }
        if config.time_dim == 0 || config.time_dim % 2 != 0 {
            return Err(Error::OddEmbeddingWidth(config.time_dim));
        }
        Ok(Self {
            config,
            params: ToyClassifierParams::init(&config, seed),
            trained: false,
        })
    }

    pub fn forward(&self, x_t: &MelTensor, t: usize) -> Result<ClassifierTape> {
        let p = &self.params;
        if x_t.n_mels() != self.config.n_mels || x_t.n_frames() == 0 {
            return Err(Error::TopologyMismatch(format!(
                "classifier expects {} mel bins, got {}",
                self.config.n_mels,
                x_t.shape()
            )));
        }
        let temb = time_embedding(t, self.config.time_dim)?;
        let a1 = p.time1.forward(&temb);
        let s1 = silu_vec(&a1);
        let a2 = p.time2.forward(&s1);
        let tau = silu_vec(&a2);
        let c = self.config.channels;
        let n = x_t.n_frames();
        let mut pooled = vec![0.0; c];
        let mut frames = Vec::with_capacity(n);
        let mut frame_pre = Vec::with_capacity(n);
        for x in x_t.frames() {
            let mut pre = p.input.forward(x);
            for (a, b) in pre.iter_mut().zip(&tau) {
                *a += b;
            }
            let act = silu_vec(&pre);
            for (acc, a) in pooled.iter_mut().zip(&act) {
                *acc += a / n as f64;
            }
            frames.push(x.to_vec());
            frame_pre.push(pre);
        }
        let hidden_pre = p.hidden.forward(&pooled);
        let q = silu_vec(&hidden_pre);
        let logits = p.head.forward(&q);
        Ok(ClassifierTape {
            temb,
            a1,
            s1,
            a2,
            frames,
            frame_pre,
            pooled,
            hidden_pre,
            q,
            logits,
        })
    }

    /// Backpropagates `dlogits` (gradient of some scalar with respect to the
    /// logits). Returns the parameter gradient and the input gradient.
    pub fn backward(&self, tape: &ClassifierTape, dlogits: &[f64]) -> (ToyClassifierParams, MelTensor) {
        let p = &self.params;
        let mut g = p.zeros_like();
        let n = tape.frames.len();
        let dq = p.head.backward(&tape.q, dlogits, &mut g.head);
        let dh = silu_backward(&tape.hidden_pre, &dq);
        let dpool = p.hidden.backward(&tape.pooled, &dh, &mut g.hidden);
        let dact: Vec<f64> = dpool.iter().map(|v| v / n as f64).collect();
        let mut dtau = vec![0.0; self.config.channels];
        let mut dx = MelTensor::zeros(crate::tensor::Shape::new(self.config.n_mels, n));
        for k in 0..n {
            let dpre = silu_backward(&tape.frame_pre[k], &dact);
            p.input.backward_into(&tape.frames[k], &dpre, &mut g.input, dx.frame_mut(k));
            for (a, b) in dtau.iter_mut().zip(&dpre) {
                *a += b;
            }
        }
        let da2 = silu_backward(&tape.a2, &dtau);
        let ds1 = p.time2.backward(&tape.s1, &da2, &mut g.time2);
        let da1 = silu_backward(&tape.a1, &ds1);
        p.time1.backward_params(&tape.temb, &da1, &mut g.time1);
        (g, dx)
    }

    /// `d log p(label) / d logits = onehot(label) - softmax`.
    pub fn log_prob_logit_grad(tape: &ClassifierTape, label: ClassLabel) -> Vec<f64> {
        tape.log_probs()
            .iter()
            .enumerate()
            .map(|(k, lp)| (if k == label.0 { 1.0 } else { 0.0 }) - lp.exp())
            .collect()
    }

    pub fn predict(&self, x_t: &MelTensor, t: usize) -> Result<ClassLabel> {
        let tape = self.forward(x_t, t)?;
        let best = tape
            .logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &l)| if l > acc.1 { (k, l) } else { acc });
        Ok(ClassLabel(best.0))
    }
}

impl Classifier for ToyClassifier {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn log_prob_and_grad(&self, x_t: &MelTensor, t: usize, label: ClassLabel) -> Result<ClassifierOutput> {
        let label = label.check(self.config.n_classes)?;
        let tape = self.forward(x_t, t)?;
        let dlogits = Self::log_prob_logit_grad(&tape, label);
        let (_, grad) = self.backward(&tape, &dlogits);
        Ok(ClassifierOutput {
            log_prob: tape.log_probs()[label.0].min(0.0),
            grad,
            untrained: !self.trained,
        })
    }
}
