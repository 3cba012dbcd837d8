//! Self-checks against closed-form and brute-force references.
//!
//! Each check is deterministic for a given seed. [`render_report`] leaves
//! out timings so repeated runs produce identical bytes.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::audiodsp::{naive_dft_oracle, Stft, StftConfig};
use crate::conditioning::{merge_embeddings, ConditioningBundle};
use crate::error::Result;
use crate::guidance::{self, GuidanceConfig};
use crate::models::{
    analytic_gaussian_classifier_grad, analytic_gaussian_eps, AnalyticClassifier, AnalyticDenoiser, ClassLabel,
    GaussianWorld, Parameters, ToyClassifier, ToyClassifierConfig, ToyDenoiser, ToyDenoiserConfig,
};
use crate::rng::{stream, Domain};
use crate::sampler::{self, ClassifierGuide, SampleOptions};
use crate::schedule::NoiseSchedule;
use crate::tensor::{Matrix, MelTensor, Shape};

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Chains drawn by the sampling-moment check.
    pub moment_samples: usize,
    /// Parameters probed per network by the gradient check.
    pub gradient_probes: usize,
    /// Samples the guided chains with a schedule the oracle was not built
    /// for. Negative control: the moment check must then fail.
    pub corrupt_schedule: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            moment_samples: 10_000,
            gradient_probes: 200,
            corrupt_schedule: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        timed("schedule", check_schedule),
        timed("guidance-identities", || check_guidance_identities(opts.seed, 1000)),
        timed("bayes-composition", || check_bayes_composition(opts.seed, 10_000)),
        timed("sampling-moments", || check_sampling_moments(opts)),
        timed("gradients", || check_gradients(opts.seed, opts.gradient_probes)),
        timed("stft-oracle", || check_stft(opts.seed)),
    ]
}

/// One line per check, `PASS name: detail`, with no timing.
pub fn render_report(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{tag} {}: {}\n", r.name, r.detail));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {failed} failed\n", results.len()));
    out
}

/// Error-free product `a * b = p + e` (Dekker/FMA form).
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Running product in double-double arithmetic.
fn dd_mul(hi: f64, lo: f64, x: f64) -> (f64, f64) {
    let (p, e) = two_prod(hi, x);
    let (s, f) = two_sum(p, e + lo * x);
    (s, f)
}

pub fn check_schedule() -> Result<(bool, String)> {
    let s = NoiseSchedule::default_linear();
    let (b1, bt) = (s.beta(1)?, s.beta(s.steps())?);
    if b1 != 1e-4 || bt != 0.02 {
        return Ok((false, format!("beta endpoints {b1:e}, {bt:e}")));
    }
    let (mut hi, mut lo) = (1.0, 0.0);
    let mut worst = 0.0f64;
    for t in 1..=s.steps() {
        (hi, lo) = dd_mul(hi, lo, s.alpha(t)?);
        let rel = ((s.alpha_bar(t)? - hi) - lo).abs() / hi;
        worst = worst.max(rel);
    }
    Ok((worst < 1e-12, format!("max alpha_bar relative error {worst:.3e}")))
}

pub fn check_guidance_identities(seed: u64, trials: usize) -> Result<(bool, String)> {
    let mut rng = stream(seed, Domain::Verify, 1);
    let shape = Shape::new(16, 8);
    let c = MelTensor::standard_normal(shape, &mut rng);
    let u = MelTensor::standard_normal(shape, &mut rng);
    let id0 = guidance::cfg_combine(&c, &u, 0.0)? == c;
    let idu = guidance::cfg_combine(&c, &u, -1.0)? == u;
    if !(id0 && idu) {
        return Ok((false, format!("cfg endpoints: w1=0 {id0}, w1=-1 {idu}")));
    }
    let s = NoiseSchedule::default_linear();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let eps = MelTensor::standard_normal(shape, &mut rng).scale(rng.random_range(0.1..10.0));
        let grad = MelTensor::standard_normal(shape, &mut rng).scale(rng.random_range(1e-3..1e3));
        let w2 = rng.random_range(0.1..5.0);
        let t = rng.random_range(1..=s.steps());
        let cfg = GuidanceConfig {
            w1: 0.0,
            w2,
            t_start: s.steps(),
            normalize: true,
        };
        let term = guidance::guidance_term(&eps, &grad, &cfg, s.alpha_bar(t)?)?;
        let want = w2 * eps.frobenius_norm();
        worst = worst.max((term.scaled_term.frobenius_norm() - want).abs() / want);
    }
    Ok((
        worst < 1e-6,
        format!("cfg endpoints exact; norm cap max relative error {worst:.3e} over {trials} tensors"),
    ))
}

/// Two classes in 4 dimensions with unequal priors.
pub fn bayes_world() -> GaussianWorld {
    GaussianWorld::new(
        vec![vec![1.0, -0.5, 0.25, 2.0], vec![-1.5, 0.75, 1.0, -0.5]],
        0.2,
        vec![0.3, 0.7],
    )
    .expect("valid world")
}

pub fn check_bayes_composition(seed: u64, pairs: usize) -> Result<(bool, String)> {
    let world = bayes_world();
    let s = NoiseSchedule::default_linear();
    let mut rng = stream(seed, Domain::Verify, 2);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let t = rng.random_range(1..=s.steps());
        let label = ClassLabel(rng.random_range(0..2));
        let x = MelTensor::standard_normal(Shape::new(4, 1), &mut rng).scale(2.0);
        let eps_u = analytic_gaussian_eps(&x, t, &world, None, &s)?;
        let (_, grad) = analytic_gaussian_classifier_grad(&x, t, &world, label, &s)?;
        let cfg = GuidanceConfig {
            w1: 0.0,
            w2: 1.0,
            t_start: s.steps(),
            normalize: false,
        };
        let (guided, _) = guidance::guided_eps(&eps_u, &grad, &cfg, t, s.alpha_bar(t)?)?;
        let eps_c = analytic_gaussian_eps(&x, t, &world, Some(label), &s)?;
        for (g, c) in guided.as_slice().iter().zip(eps_c.as_slice()) {
            worst = worst.max((g - c).abs() / c.abs().max(1e-300));
        }
    }
    Ok((worst < 1e-8, format!("max relative error {worst:.3e} over {pairs} pairs")))
}

/// Two classes at `+mu, -mu` in 8 dimensions.
pub fn moment_world() -> GaussianWorld {
    GaussianWorld::symmetric(vec![1.0, -0.5, 0.75, 0.25, -1.0, 0.5, 1.25, -0.25], 0.5).expect("valid world")
}

/// Guided chains targeting class 0 under the analytic unconditional
/// denoiser plus analytic classifier; returns the final samples.
pub fn guided_gaussian_samples(
    n: usize,
    seed: u64,
    oracle_schedule: &NoiseSchedule,
    sampler_schedule: &NoiseSchedule,
) -> Result<Vec<MelTensor>> {
    let world = moment_world();
    let denoiser = AnalyticDenoiser {
        world: world.clone(),
        schedule: oracle_schedule.clone(),
        class: None,
    };
    let classifier = AnalyticClassifier {
        world,
        schedule: oracle_schedule.clone(),
    };
    let cfg = GuidanceConfig {
        w1: 0.0,
        w2: 1.0,
        t_start: sampler_schedule.steps(),
        normalize: false,
    };
    let guide = ClassifierGuide {
        classifier: &classifier,
        label: ClassLabel(0),
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let chain_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            sampler::sample(
                sampler_schedule,
                &denoiser,
                Some(guide),
                None,
                &cfg,
                Shape::new(8, 1),
                chain_seed,
                SampleOptions::default(),
            )
            .map(|o| o.x0)
        })
        .collect()
}

pub fn check_sampling_moments(opts: &VerifyOptions) -> Result<(bool, String)> {
    let oracle = NoiseSchedule::default_linear();
    let sampler_schedule = if opts.corrupt_schedule {
        NoiseSchedule::linear(oracle.steps(), 1e-4, 0.05)?
    } else {
        oracle.clone()
    };
    let samples = guided_gaussian_samples(opts.moment_samples, opts.seed, &oracle, &sampler_schedule)?;
    let world = moment_world();
    let mu = world.mean(ClassLabel(0));
    let sigma2 = world.sigma2();
    let n = samples.len() as f64;
    let se = (sigma2 / n).sqrt();
    for (j, m) in mu.iter().enumerate() {
        let mean = samples.iter().map(|s| s.as_slice()[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.as_slice()[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = (mean - m) / se;
        if z.abs() >= 5.0 {
            return Ok((false, format!("mean[{j}] = {mean:.5} vs {m}, {z:.2} standard errors")));
        }
        let rel = var / sigma2 - 1.0;
        if rel.abs() >= 0.1 {
            return Ok((false, format!("variance[{j}] = {var:.5} vs {sigma2}, relative {rel:+.3}")));
        }
    }
    Ok((true, format!("{} samples in 8 dimensions: means within 5 SE, variances within 10%", samples.len())))
}

fn central_difference(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn set_param(params: &mut dyn Parameters, idx: usize, value: f64) {
    let mut off = 0;
    params.visit_mut(&mut |_, d| {
        if idx >= off && idx < off + d.len() {
            d[idx - off] = value;
        }
        off += d.len();
    });
}

/// Finite-difference probes of both trainable networks. Returns the worst
/// relative error and the number of probes.
pub fn gradient_errors(seed: u64, probes: usize) -> Result<(f64, usize)> {
    let mut rng = stream(seed, Domain::Verify, 3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for learned in [false, true] {
        let cfg = ToyDenoiserConfig {
            n_mels: 6,
            channels: 8,
            blocks: 2,
            time_dim: 8,
            global_dim: 3,
            frame_dim: 2,
            learned_upsample: learned,
        };
        let mut model = ToyDenoiser::new(cfg, seed, seed + 1, 2)?;
        // Nonzero output weights so every path carries gradient.
        model.params.visit_mut(&mut |_, d| {
            for v in d.iter_mut() {
                if *v == 0.0 {
                    *v = 0.1;
                }
            }
        });
        let x = MelTensor::standard_normal(Shape::new(6, 8), &mut rng);
        let global: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames = Matrix::from_vec(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let cond: ConditioningBundle = merge_embeddings(&global, &frames)?;
        let up = MelTensor::standard_normal(x.shape(), &mut rng);
        let t = 37;
        let (_, tape) = model.forward_train(&x, t, Some(&cond))?;
        let analytic = model.backward(&tape, &up)?.flatten();
        let base = model.params.flatten();
        for _ in 0..probes / 2 {
            let idx = rng.random_range(0..base.len());
            let mut probe = model.clone();
            let mut f = |v: f64| {
                set_param(&mut probe.params, idx, v);
                probe.forward(&x, t, Some(&cond)).map(|e| e.dot(&up)).unwrap_or(f64::NAN)
            };
            let num = central_difference(&mut f, base[idx], 1e-4);
            worst = worst.max(rel_err(analytic[idx], num));
            count += 1;
        }
    }
    let ccfg = ToyClassifierConfig {
        n_mels: 6,
        channels: 8,
        time_dim: 8,
        n_classes: 3,
    };
    let mut clf = ToyClassifier::new(ccfg, seed)?;
    clf.params.visit_mut(&mut |_, d| {
        for v in d.iter_mut() {
            if *v == 0.0 {
                *v = 0.2;
            }
        }
    });
    let x = MelTensor::standard_normal(Shape::new(6, 5), &mut rng);
    let label = ClassLabel(1);
    let tape = clf.forward(&x, 12)?;
    let dl = ToyClassifier::log_prob_logit_grad(&tape, label);
    let analytic = clf.backward(&tape, &dl).0.flatten();
    let base = clf.params.flatten();
    for _ in 0..probes.div_ceil(2) {
        let idx = rng.random_range(0..base.len());
        let mut probe = clf.clone();
        let mut f = |v: f64| {
            set_param(&mut probe.params, idx, v);
            probe.forward(&x, 12).map(|tp| tp.log_probs()[label.0]).unwrap_or(f64::NAN)
        };
        let num = central_difference(&mut f, base[idx], 1e-4);
        worst = worst.max(rel_err(analytic[idx], num));
        count += 1;
    }
    Ok((worst, count))
}

pub fn check_gradients(seed: u64, probes: usize) -> Result<(bool, String)> {
    let (worst, count) = gradient_errors(seed, probes)?;
    Ok((worst < 1e-4, format!("max relative error {worst:.3e} over {count} probes")))
}

pub fn check_stft(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream(seed, Domain::Verify, 4);
    let signal: Vec<f64> = (0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cfg = StftConfig::default();
    let stft = Stft::new(cfg)?;
    let fast = stft.complex(&signal)?;
    let mut worst = 0.0f64;
    for (f, frame) in fast.iter().enumerate() {
        let start = f * cfg.hop;
        let windowed: Vec<f64> = signal[start..start + cfg.win]
            .iter()
            .zip(stft.window())
            .map(|(s, w)| s * w)
            .collect();
        let slow = naive_dft_oracle(&windowed, cfg.dft_len);
        for (a, b) in frame.iter().zip(&slow) {
            worst = worst.max((a - b).norm());
        }
    }
    Ok((
        worst < 1e-6,
        format!("max deviation {worst:.3e} over {} frames", fast.len()),
    ))
}
