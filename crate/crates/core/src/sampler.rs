//! Ancestral reverse step and the guided inference loop.
//!
//! Per step `t = T..1`:
//! 1. `eps_mg = (1 + w1) eps(x_t, cond) - w1 eps(x_t)` (classifier-free);
//! 2. if `t <= t_start`, subtract `w2 gamma_t sqrt(1 - abar_t) grad log p(c | x_t)`;
//! 3. `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sqrt(beta_t) z`,
//!    with `z = 0` at `t = 1`.
//!
//! The classifier sees `x_t` directly.

use std::path::Path;

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::guidance::{self, GuidanceConfig};
use crate::models::{ClassLabel, Classifier, Denoiser};
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;
use crate::tensor::{EpsEstimate, MelTensor, Shape};

/// Coefficients of the reverse update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReverseRule {
    /// `1/sqrt(alpha_t)` scaling and `sqrt(beta_t)` noise.
    #[default]
    Ancestral,
    /// `1/sqrt(abar_t)` scaling and `beta_t` noise. Kept only for
    /// comparison; it does not converge to the data distribution.
    CumulativeDivisor,
}

/// One reverse step. The caller supplies `z` and must pass zeros at `t = 1`.
pub fn ddpm_step(
    schedule: &NoiseSchedule,
    x_t: &MelTensor,
    eps_hat: &EpsEstimate,
    t: usize,
    z: &MelTensor,
    rule: ReverseRule,
) -> Result<MelTensor> {
    x_t.ensure_shape(eps_hat)?;
    x_t.ensure_shape(z)?;
    let beta = schedule.beta(t)?;
    let alpha = schedule.alpha(t)?;
    let ab = schedule.alpha_bar(t)?;
    let (scale, sigma) = match rule {
        ReverseRule::Ancestral => (1.0 / alpha.sqrt(), beta.sqrt()),
        ReverseRule::CumulativeDivisor => (1.0 / ab.sqrt(), beta),
    };
    let eps_coeff = if beta == 0.0 { 0.0 } else { beta / (1.0 - ab).sqrt() };
    let data = x_t
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .zip(z.as_slice())
        .map(|((x, e), zi)| scale * (x - eps_coeff * e) + sigma * zi)
        .collect();
    MelTensor::from_vec(x_t.shape(), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub eps_norm: f64,
    pub eps_mg_norm: f64,
    pub gamma: f64,
    pub gate_open: bool,
    /// Norm of the subtracted classifier term (0 when none was applied).
    pub guidance_norm: f64,
    pub z_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleTrace {
    pub records: Vec<StepRecord>,
}

impl SampleTrace {
    /// Line-oriented text: `t gamma eps_norm gate`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{} {:.9e} {:.9e} {}\n",
                r.t,
                r.gamma,
                r.eps_norm,
                u8::from(r.gate_open)
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::persistence::atomic_write(path, |w| w.write_all(self.render().as_bytes()))
    }
}

/// Classifier guidance target.
#[derive(Clone, Copy)]
pub struct ClassifierGuide<'a> {
    pub classifier: &'a dyn Classifier,
    pub label: ClassLabel,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SampleOptions {
    pub trace: bool,
    pub rule: ReverseRule,
}

pub struct SampleOutput {
    pub x0: MelTensor,
    pub trace: Option<SampleTrace>,
}

/// Initial noise for a chain.
pub fn initial_noise(shape: Shape, seed: u64) -> MelTensor {
    MelTensor::standard_normal(shape, &mut rng::stream(seed, Domain::SamplerInit, 0))
}

fn step_noise(shape: Shape, seed: u64, t: usize) -> MelTensor {
    if t == 1 {
        return MelTensor::zeros(shape);
    }
    MelTensor::standard_normal(shape, &mut rng::stream(seed, Domain::SamplerStep, t as u64))
}

/// Runs the full reverse chain from `x_T ~ N(0, I)`.
///
/// `cond = None` runs the conditional branch on null tokens as well, i.e.
/// pure unconditional sampling. `w2 > 0` requires a classifier guide.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    guide: Option<ClassifierGuide<'_>>,
    cond: Option<&ConditioningBundle>,
    cfg: &GuidanceConfig,
    shape: Shape,
    seed: u64,
    opts: SampleOptions,
) -> Result<SampleOutput> {
    let steps = schedule.steps();
    cfg.validate(steps)?;
    if cfg.w2 > 0.0 && guide.is_none() {
        return Err(Error::Config("w2 > 0 needs a classifier and a label".into()));
    }
    if let Some(g) = &guide {
        g.label.check(g.classifier.n_classes())?;
    }
    if shape.is_empty() {
        return Err(Error::EmptyInput(format!("sample shape {shape}")));
    }

    let mut x = initial_noise(shape, seed);
    let mut trace = opts.trace.then(|| SampleTrace {
        records: Vec::with_capacity(steps),
    });
    for t in (1..=steps).rev() {
        let ab = schedule.alpha_bar(t)?;
        let eps_mg = if cfg.w1 == 0.0 {
            denoiser.predict_eps(&x, t, cond)?
        } else if cfg.unconditional_only() {
            denoiser.predict_eps(&x, t, None)?
        } else {
            let c = denoiser.predict_eps(&x, t, cond)?;
            let u = denoiser.predict_eps(&x, t, None)?;
            guidance::cfg_combine(&c, &u, cfg.w1)?
        };
        let gate_open = cfg.gate_open(t);
        let (eps_hat, term) = match guide {
            Some(g) if gate_open && cfg.w2 > 0.0 => {
                let out = g.classifier.log_prob_and_grad(&x, t, g.label)?;
                guidance::guided_eps(&eps_mg, &out.grad, cfg, t, ab)?
            }
            _ => (eps_mg.clone(), None),
        };
        if !eps_hat.is_finite() {
            return Err(Error::NonFinite { t });
        }
        let z = step_noise(shape, seed, t);
        let next = ddpm_step(schedule, &x, &eps_hat, t, &z, opts.rule)?;
        if !next.is_finite() {
            return Err(Error::NonFinite { t });
        }
        if let Some(tr) = trace.as_mut() {
            tr.records.push(StepRecord {
                t,
                eps_norm: eps_hat.frobenius_norm(),
                eps_mg_norm: eps_mg.frobenius_norm(),
                gamma: term.as_ref().map_or(0.0, |g| g.gamma),
                gate_open,
                guidance_norm: term
                    .as_ref()
                    .filter(|g| !g.degenerate)
                    .map_or(0.0, |g| g.scaled_term.frobenius_norm()),
                z_norm: z.frobenius_norm(),
            });
        }
        x = next;
    }
    Ok(SampleOutput { x0: x, trace })
}
