//! Noise-prediction training with conditioning dropout, plus noised-input
//! classifier training. Everything runs single-threaded in a fixed order;
//! all randomness of step `s` comes from streams indexed by `s`, so a run
//! resumed at any step replays the unbroken run exactly.

mod adam;
mod classifier;
mod data;

pub use adam::{Adam, AdamConfig};
pub use classifier::{train_classifier, ClassifierTrainConfig};
pub use data::{make_synthetic_dataset, DataConfig, Dataset, DatasetKind, Example, NearestCentroid};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::models::{Parameters, ToyDenoiser, ToyDenoiserParams, Tape};
use crate::rng::{stream, Domain};
use crate::schedule::NoiseSchedule;
use crate::tensor::{EpsEstimate, MelTensor};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_DROPOUT_P: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    /// Mean absolute error.
    #[default]
    L1,
    /// Mean squared error.
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Self::L1),
            "l2" | "L2" => Ok(Self::L2),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub loss: LossKind,
    pub step_budget: u64,
    pub seed: u64,
    /// Checkpoint period in steps; 0 writes only the initial and final ones.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            dropout_p: DEFAULT_DROPOUT_P,
            loss: LossKind::L1,
            step_budget: 1000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// A network trainable by [`train_step`].
pub trait EpsModel {
    type Params: Parameters + Clone;
    type Tape;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;
    fn zero_grads(&self) -> Self::Params;
    /// `cond = None` selects the model's persisted null tokens.
    fn forward_train(
        &self,
        x_t: &MelTensor,
        t: usize,
        cond: Option<&ConditioningBundle>,
    ) -> Result<(EpsEstimate, Self::Tape)>;
    fn backward_accumulate(&self, tape: &Self::Tape, upstream: &MelTensor, grads: &mut Self::Params) -> Result<()>;
}

impl EpsModel for ToyDenoiser {
    type Params = ToyDenoiserParams;
    type Tape = Tape;

    fn params(&self) -> &ToyDenoiserParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ToyDenoiserParams {
        &mut self.params
    }

    fn zero_grads(&self) -> ToyDenoiserParams {
        self.params.zeros_like()
    }

    fn forward_train(&self, x_t: &MelTensor, t: usize, cond: Option<&ConditioningBundle>) -> Result<(EpsEstimate, Tape)> {
        ToyDenoiser::forward_train(self, x_t, t, cond)
    }

    fn backward_accumulate(&self, tape: &Tape, upstream: &MelTensor, grads: &mut ToyDenoiserParams) -> Result<()> {
        ToyDenoiser::backward_accumulate(self, tape, upstream, grads)
    }
}

/// One training example as seen by [`train_step`].
#[derive(Clone, Copy)]
pub struct BatchItem<'a> {
    pub x0: &'a MelTensor,
    pub cond: &'a ConditioningBundle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub ts: Vec<usize>,
    pub dropped: Vec<bool>,
}

/// Loss value and its gradient with respect to the prediction.
fn loss_and_grad(kind: LossKind, eps_hat: &MelTensor, eps: &MelTensor, scale: f64) -> (f64, MelTensor) {
    let n = eps.as_slice().len() as f64;
    let mut grad = MelTensor::zeros(eps.shape());
    let mut total = 0.0;
    for ((g, p), e) in grad.as_mut_slice().iter_mut().zip(eps_hat.as_slice()).zip(eps.as_slice()) {
        let d = p - e;
        match kind {
            LossKind::L1 => {
                total += d.abs();
                // Subgradient 0 at d = 0.
                *g = if d > 0.0 {
                    scale / n
                } else if d < 0.0 {
                    -scale / n
                } else {
                    0.0
                };
            }
            LossKind::L2 => {
                total += d * d;
                *g = 2.0 * d * scale / n;
            }
        }
    }
    (total / n, grad)
}

/// Draws `t`, the dropout decision and `eps` for each item from the step's
/// own stream, then applies one Adam update.
pub fn train_step<M: EpsModel>(
    model: &mut M,
    adam: &mut Adam,
    batch: &[BatchItem<'_>],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch".into()));
    }
    let mut rng = stream(cfg.seed, Domain::TrainStep, step);
    let mut grads = model.zero_grads();
    let inv_b = 1.0 / batch.len() as f64;
    let mut report = StepReport {
        loss: 0.0,
        ts: Vec::with_capacity(batch.len()),
        dropped: Vec::with_capacity(batch.len()),
    };
    for item in batch {
        let t = rng.random_range(1..=schedule.steps());
        let drop = rng.random::<f64>() < cfg.dropout_p;
        let eps = MelTensor::standard_normal(item.x0.shape(), &mut rng);
        let x_t = schedule.q_sample(item.x0, t, &eps)?;
        let cond = if drop { None } else { Some(item.cond) };
        let (eps_hat, tape) = model.forward_train(&x_t, t, cond)?;
        let (loss, upstream) = loss_and_grad(cfg.loss, &eps_hat, &eps, inv_b);
        report.loss += loss * inv_b;
        report.ts.push(t);
        report.dropped.push(drop);
        model.backward_accumulate(&tape, &upstream, &mut grads)?;
    }
    if !report.loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, ts: report.ts });
    }
    adam.update(model.params_mut(), &grads, cfg.learning_rate)?;
    Ok(report)
}

/// Epoch-wise shuffled example order.
struct Shuffler {
    seed: u64,
    len: usize,
    epoch: Option<u64>,
    order: Vec<usize>,
}

impl Shuffler {
    fn new(seed: u64, len: usize) -> Self {
        Self {
            seed,
            len,
            epoch: None,
            order: Vec::new(),
        }
    }

    fn index(&mut self, position: u64) -> usize {
        let epoch = position / self.len as u64;
        if self.epoch != Some(epoch) {
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut stream(self.seed, Domain::Shuffle, epoch));
            self.epoch = Some(epoch);
        }
        self.order[(position % self.len as u64) as usize]
    }
}

/// Model, optimizer state and step counter.
pub struct Trainer<M: EpsModel> {
    pub model: M,
    pub adam: Adam,
    pub step: u64,
}

impl<M: EpsModel> Trainer<M> {
    pub fn new(model: M) -> Self {
        let n = model.params().param_count();
        Self {
            model,
            adam: Adam::new(AdamConfig::default(), n),
            step: 0,
        }
    }

    pub fn resume(model: M, adam: Adam, step: u64) -> Result<Self> {
        if adam.len() != model.params().param_count() {
            return Err(Error::TopologyMismatch(format!(
                "optimizer holds {} moments, model has {} parameters",
                adam.len(),
                model.params().param_count()
            )));
        }
        Ok(Self { model, adam, step })
    }
}

/// Receives the trainer after the initial state, every `checkpoint_every`
/// steps and at the end of the budget.
pub trait CheckpointSink<M: EpsModel> {
    fn save(&mut self, trainer: &Trainer<M>) -> Result<()>;
}

impl<M: EpsModel, F: FnMut(&Trainer<M>) -> Result<()>> CheckpointSink<M> for F {
    fn save(&mut self, trainer: &Trainer<M>) -> Result<()> {
        self(trainer)
    }
}

/// Discards checkpoints.
pub struct NoCheckpoints;

impl<M: EpsModel> CheckpointSink<M> for NoCheckpoints {
    fn save(&mut self, _: &Trainer<M>) -> Result<()> {
        Ok(())
    }
}

/// Rounds parameters and optimizer moments to `f32`, the checkpoint
/// precision, so a resumed run continues from exactly the saved state.
fn round_to_f32<P: Parameters>(params: &mut P, adam: &mut Adam) {
    params.visit_mut(&mut |_, d| d.iter_mut().for_each(|v| *v = *v as f32 as f64));
    adam.round_to_f32();
}

/// Runs steps `trainer.step + 1 ..= cfg.step_budget`; returns the loss of
/// each step run.
pub fn train_loop<M: EpsModel>(
    trainer: &mut Trainer<M>,
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    sink: &mut dyn CheckpointSink<M>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset".into()));
    }
    let mut shuffler = Shuffler::new(cfg.seed, dataset.len());
    let mut losses = Vec::new();
    let mut saved_at = None;
    if trainer.step == 0 {
        sink.save(trainer)?;
        saved_at = Some(0);
    }
    while trainer.step < cfg.step_budget {
        let step = trainer.step + 1;
        let base = (step - 1) * cfg.batch_size as u64;
        let batch: Vec<BatchItem<'_>> = (0..cfg.batch_size as u64)
            .map(|i| {
                let ex = &dataset.examples[shuffler.index(base + i)];
                BatchItem {
                    x0: &ex.x0,
                    cond: &ex.cond,
                }
            })
            .collect();
        let report = train_step(&mut trainer.model, &mut trainer.adam, &batch, schedule, cfg, step)?;
        round_to_f32(trainer.model.params_mut(), &mut trainer.adam);
        trainer.step = step;
        losses.push(report.loss);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            sink.save(trainer)?;
            saved_at = Some(step);
        }
    }
    if saved_at != Some(trainer.step) {
        sink.save(trainer)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    /// Predicts `2 x_t (1 + w)`; exact when `sqrt(1 - abar) = 1/2`, `x0 = 0`
    /// and `w = 0`.
    #[derive(Clone)]
    struct Doubler {
        w: ScalarParam,
    }

    #[derive(Clone)]
    struct ScalarParam(Vec<f64>);

    impl Parameters for ScalarParam {
        fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            f("w", &[1], &self.0);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("w", &mut self.0);
        }
    }

    impl EpsModel for Doubler {
        type Params = ScalarParam;
        type Tape = MelTensor;
        fn params(&self) -> &ScalarParam {
            &self.w
        }
        fn params_mut(&mut self) -> &mut ScalarParam {
            &mut self.w
        }
        fn zero_grads(&self) -> ScalarParam {
            ScalarParam(vec![0.0])
        }
        fn forward_train(&self, x_t: &MelTensor, _: usize, _: Option<&ConditioningBundle>) -> Result<(EpsEstimate, MelTensor)> {
            Ok((x_t.scale(2.0 * (1.0 + self.w.0[0])), x_t.clone()))
        }
        fn backward_accumulate(&self, x_t: &MelTensor, up: &MelTensor, g: &mut ScalarParam) -> Result<()> {
            g.0[0] += 2.0 * x_t.dot(up);
            Ok(())
        }
    }

    fn null_cond() -> ConditioningBundle {
        crate::conditioning::null_condition(2, 2, 1, 0).unwrap()
    }

    #[test]
    fn oracle_prediction_gives_zero_loss_and_no_update() {
        let schedule = NoiseSchedule::from_betas(vec![0.25]).unwrap();
        let x0 = MelTensor::zeros(Shape::new(3, 4));
        let cond = null_cond();
        let batch = vec![BatchItem { x0: &x0, cond: &cond }; 4];
        for loss in [LossKind::L1, LossKind::L2] {
            let mut model = Doubler { w: ScalarParam(vec![0.0]) };
            let mut adam = Adam::new(AdamConfig::default(), 1);
            let cfg = TrainConfig { loss, ..Default::default() };
            let r = train_step(&mut model, &mut adam, &batch, &schedule, &cfg, 1).unwrap();
            assert_eq!(r.loss, 0.0);
            assert_eq!(model.w.0[0], 0.0);
        }
    }

    #[test]
    fn dropout_endpoints() {
        let schedule = NoiseSchedule::default_linear();
        let x0 = MelTensor::zeros(Shape::new(1, 4));
        let cond = null_cond();
        let batch = vec![BatchItem { x0: &x0, cond: &cond }; 64];
        let mut model = Doubler { w: ScalarParam(vec![0.1]) };
        let mut adam = Adam::new(AdamConfig::default(), 1);
        let never = TrainConfig { dropout_p: 0.0, ..Default::default() };
        let r = train_step(&mut model, &mut adam, &batch, &schedule, &never, 1).unwrap();
        assert!(r.dropped.iter().all(|d| !d));
        let always = TrainConfig {
            dropout_p: 1.0 - 1e-12,
            ..Default::default()
        };
        let r = train_step(&mut model, &mut adam, &batch, &schedule, &always, 2).unwrap();
        assert!(r.dropped.iter().all(|d| *d));
        assert!(r.ts.iter().all(|t| (1..=400).contains(t)));
    }

    #[test]
    fn loss_gradients() {
        let p = MelTensor::from_vec(Shape::new(2, 1), vec![1.0, -2.0]).unwrap();
        let e = MelTensor::from_vec(Shape::new(2, 1), vec![0.5, -2.0]).unwrap();
        let (l1, g1) = loss_and_grad(LossKind::L1, &p, &e, 1.0);
        assert_eq!(l1, 0.25);
        assert_eq!(g1.as_slice(), &[0.5, 0.0]);
        let (l2, g2) = loss_and_grad(LossKind::L2, &p, &e, 1.0);
        assert_eq!(l2, 0.125);
        assert_eq!(g2.as_slice(), &[0.5, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { dropout_p: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert_eq!("l2".parse::<LossKind>().unwrap(), LossKind::L2);
    }

    #[test]
    fn shuffler_visits_each_example_once_per_epoch() {
        let mut s = Shuffler::new(3, 7);
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..7).map(|i| s.index(epoch * 7 + i)).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }
}
