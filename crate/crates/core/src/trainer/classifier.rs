use rand::Rng;

use super::{Adam, AdamConfig, Dataset};
use crate::error::{Error, Result};
use crate::models::{Parameters, ToyClassifier};
use crate::rng::{stream, Domain};
use crate::schedule::NoiseSchedule;
use crate::tensor::MelTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            steps: 1000,
            seed: 0,
        }
    }
}

/// Flattened gradient accumulator in the classifier's parameter order.
struct Flat(Vec<f64>);

impl Parameters for Flat {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("flat", &[self.0.len()], &self.0);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("flat", &mut self.0);
    }
}

/// Cross-entropy on inputs noised at uniformly drawn steps. Marks the
/// classifier as trained and returns the mean loss of each step.
pub fn train_classifier(
    classifier: &mut ToyClassifier,
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    cfg: &ClassifierTrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("classifier dataset".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!("invalid classifier training config {cfg:?}")));
    }
    let n = classifier.params.param_count();
    let mut adam = Adam::new(AdamConfig::default(), n);
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let inv_b = 1.0 / cfg.batch_size as f64;
    for step in 1..=cfg.steps {
        let mut rng = stream(cfg.seed, Domain::TrainStep, step);
        let mut acc = vec![0.0; n];
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let ex = &dataset.examples[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=schedule.steps());
            let eps = MelTensor::standard_normal(ex.x0.shape(), &mut rng);
            let x_t = schedule.q_sample(&ex.x0, t, &eps)?;
            let tape = classifier.forward(&x_t, t)?;
            let lp = tape.log_probs();
            loss -= lp[ex.label.0] * inv_b;
            let dlogits: Vec<f64> = ToyClassifier::log_prob_logit_grad(&tape, ex.label)
                .iter()
                .map(|g| -g * inv_b)
                .collect();
            let (g, _) = classifier.backward(&tape, &dlogits);
            for (a, b) in acc.iter_mut().zip(g.flatten()) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, ts: Vec::new() });
        }
        adam.update(&mut classifier.params, &Flat(acc), cfg.learning_rate)?;
        losses.push(loss);
    }
    classifier.trained = true;
    Ok(losses)
}
