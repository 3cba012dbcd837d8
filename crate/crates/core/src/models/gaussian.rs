//! Closed-form oracles for isotropic Gaussian mixture data.
//!
//! For data `N(mu_c, sigma2 I)` the noised marginal at step `t` is
//! `N(a mu_c, v I)` with `a = sqrt(abar_t)` and `v = abar_t sigma2 + 1 - abar_t`.
//! The optimal noise prediction is `-sqrt(1 - abar_t)` times the score of
//! that marginal, and the class posterior is a softmax over per-class
//! log-densities plus log-priors.

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::models::layers::log_sum_exp;
use crate::models::{ClassLabel, Classifier, ClassifierOutput, Denoiser};
use crate::schedule::NoiseSchedule;
use crate::tensor::{EpsEstimate, MelTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWorld {
    means: Vec<Vec<f64>>,
    sigma2: f64,
    priors: Vec<f64>,
}

impl GaussianWorld {
    pub fn new(means: Vec<Vec<f64>>, sigma2: f64, priors: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::EmptyInput("world needs at least one class".into()));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::EmptyInput("zero-dimensional class mean".into()));
        }
        if let Some(m) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.len(),
            });
        }
        if priors.len() != means.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: priors.len(),
            });
        }
        if priors.iter().any(|p| !(*p >= 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidRange("priors must be nonnegative and sum to 1".into()));
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidRange(format!("sigma2 = {sigma2}")));
        }
        Ok(Self { means, sigma2, priors })
    }

    /// Two classes at `+mu` and `-mu` with equal priors.
    pub fn symmetric(mu: Vec<f64>, sigma2: f64) -> Result<Self> {
        let neg = mu.iter().map(|v| -v).collect();
        Self::new(vec![mu, neg], sigma2, vec![0.5, 0.5])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, c: ClassLabel) -> &[f64] {
        &self.means[c.0]
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    fn check_dim(&self, x: &MelTensor) -> Result<()> {
        if x.as_slice().len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.as_slice().len(),
            });
        }
        Ok(())
    }

    /// `(sqrt(abar), abar sigma2 + 1 - abar)`.
    fn noised(&self, alpha_bar: f64) -> (f64, f64) {
        (alpha_bar.sqrt(), alpha_bar * self.sigma2 + 1.0 - alpha_bar)
    }

    /// Per-class `log prior + log N(x; a mu_c, v I)` up to a shared constant.
    fn class_logits(&self, x: &[f64], a: f64, v: f64) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.priors)
            .map(|(mu, p)| {
                let d2: f64 = x.iter().zip(mu).map(|(xi, mi)| (xi - a * mi).powi(2)).sum();
                p.ln() - d2 / (2.0 * v)
            })
            .collect()
    }

    /// Posterior class responsibilities at noise level `alpha_bar`.
    pub fn responsibilities(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let (a, v) = self.noised(alpha_bar);
        let logits = self.class_logits(x, a, v);
        let lse = log_sum_exp(&logits);
        logits.iter().map(|l| (l - lse).exp()).collect()
    }
}

/// Optimal noise prediction. With `class` set the class-conditional
/// marginal is used; otherwise the mixture marginal.
pub fn analytic_gaussian_eps(
    x_t: &MelTensor,
    t: usize,
    world: &GaussianWorld,
    class: Option<ClassLabel>,
    schedule: &NoiseSchedule,
) -> Result<EpsEstimate> {
    world.check_dim(x_t)?;
    let ab = schedule.alpha_bar(t)?;
    let (a, v) = world.noised(ab);
    let s = (1.0 - ab).sqrt();
    let x = x_t.as_slice();
    // Posterior-weighted noised mean.
    let center: Vec<f64> = match class {
        Some(c) => {
            let c = c.check(world.n_classes())?;
            world.mean(c).iter().map(|m| a * m).collect()
        }
        None => {
            let r = world.responsibilities(x, ab);
            (0..world.dim())
                .map(|i| a * world.means.iter().zip(&r).map(|(mu, rc)| rc * mu[i]).sum::<f64>())
                .collect()
        }
    };
    let eps = x.iter().zip(&center).map(|(xi, ci)| s * (xi - ci) / v).collect();
    MelTensor::from_vec(x_t.shape(), eps)
}

/// Exact `log p(label | x_t)` and its gradient:
/// `grad = a (mu_label - sum_k r_k mu_k) / v`.
pub fn analytic_gaussian_classifier_grad(
    x_t: &MelTensor,
    t: usize,
    world: &GaussianWorld,
    label: ClassLabel,
    schedule: &NoiseSchedule,
) -> Result<(f64, MelTensor)> {
    let label = label.check(world.n_classes())?;
    world.check_dim(x_t)?;
    let ab = schedule.alpha_bar(t)?;
    let (a, v) = world.noised(ab);
    let logits = world.class_logits(x_t.as_slice(), a, v);
    let lse = log_sum_exp(&logits);
    let log_p = logits[label.0] - lse;
    let r: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let grad = (0..world.dim())
        .map(|i| {
            let avg: f64 = world.means.iter().zip(&r).map(|(mu, rc)| rc * mu[i]).sum();
            a * (world.means[label.0][i] - avg) / v
        })
        .collect();
    Ok((log_p.min(0.0), MelTensor::from_vec(x_t.shape(), grad)?))
}

/// [`Denoiser`] adaptor over the analytic oracle. Conditioning bundles are
/// ignored; the class (if any) is fixed at construction.
#[derive(Clone, Debug)]
pub struct AnalyticDenoiser {
    pub world: GaussianWorld,
    pub schedule: NoiseSchedule,
    pub class: Option<ClassLabel>,
}

impl Denoiser for AnalyticDenoiser {
    fn predict_eps(&self, x_t: &MelTensor, t: usize, _cond: Option<&ConditioningBundle>) -> Result<EpsEstimate> {
        analytic_gaussian_eps(x_t, t, &self.world, self.class, &self.schedule)
    }
}

#[derive(Clone, Debug)]
pub struct AnalyticClassifier {
    pub world: GaussianWorld,
    pub schedule: NoiseSchedule,
}

impl Classifier for AnalyticClassifier {
    fn n_classes(&self) -> usize {
        self.world.n_classes()
    }

    fn log_prob_and_grad(&self, x_t: &MelTensor, t: usize, label: ClassLabel) -> Result<ClassifierOutput> {
        let (log_prob, grad) = analytic_gaussian_classifier_grad(x_t, t, &self.world, label, &self.schedule)?;
        Ok(ClassifierOutput {
            log_prob,
            grad,
            untrained: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::default_linear()
    }

    /// Mixture log-density written out directly, no shared helpers.
    fn log_density(world: &GaussianWorld, x: &[f64], ab: f64) -> f64 {
        let v = ab * world.sigma2() + 1.0 - ab;
        let d = x.len() as f64;
        let mut total = 0.0;
        for (c, p) in world.priors().iter().enumerate() {
            let mu = world.mean(ClassLabel(c));
            let d2: f64 = x.iter().zip(mu).map(|(xi, m)| (xi - ab.sqrt() * m).powi(2)).sum();
            total += p * (-d2 / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).powf(d / 2.0);
        }
        total.ln()
    }

    fn two_class_world() -> GaussianWorld {
        GaussianWorld::new(
            vec![vec![1.0, -0.5, 0.3], vec![-0.7, 0.8, 1.2]],
            0.3,
            vec![0.4, 0.6],
        )
        .unwrap()
    }

    #[test]
    fn zero_at_noised_mean() {
        let s = schedule();
        let world = GaussianWorld::new(vec![vec![0.5, -1.0]], 0.2, vec![1.0]).unwrap();
        let ab: f64 = s.alpha_bar(50).unwrap();
        let x = MelTensor::from_column(vec![ab.sqrt() * 0.5, -ab.sqrt()]);
        let eps = analytic_gaussian_eps(&x, 50, &world, None, &s).unwrap();
        assert!(eps.frobenius_norm() < 1e-15);
    }

    #[test]
    fn point_mass_inverts_q_sample() {
        let s = schedule();
        let mu = vec![0.3, -0.2, 0.9];
        let world = GaussianWorld::new(vec![mu.clone()], 0.0, vec![1.0]).unwrap();
        let eps = MelTensor::from_column(vec![0.4, -1.3, 2.2]);
        let x = s.q_sample(&MelTensor::from_column(mu), 120, &eps).unwrap();
        let got = analytic_gaussian_eps(&x, 120, &world, Some(ClassLabel(0)), &s).unwrap();
        assert!(got.max_abs_diff(&eps) < 1e-12);
    }

    #[test]
    fn eps_matches_finite_difference_score() {
        let s = schedule();
        let world = two_class_world();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for t in [1, 40, 200, 399] {
            let ab = s.alpha_bar(t).unwrap();
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps = analytic_gaussian_eps(&MelTensor::from_column(x.clone()), t, &world, None, &s).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let score = (log_density(&world, &xp, ab) - log_density(&world, &xm, ab)) / (2.0 * h);
                let want = -(1.0 - ab).sqrt() * score;
                let got = eps.as_slice()[i];
                assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-3), "t={t} i={i} {got} vs {want}");
            }
        }
    }

    #[test]
    fn symmetric_world_at_origin() {
        let s = schedule();
        let mu = vec![1.0, 2.0];
        let world = GaussianWorld::symmetric(mu.clone(), 0.5).unwrap();
        let (lp, g) = analytic_gaussian_classifier_grad(&MelTensor::from_column(vec![0.0, 0.0]), 100, &world, ClassLabel(0), &s).unwrap();
        let ab: f64 = s.alpha_bar(100).unwrap();
        let v = ab * 0.5 + 1.0 - ab;
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
        for i in 0..2 {
            assert!((g.as_slice()[i] - ab.sqrt() * mu[i] / v).abs() < 1e-14);
        }
    }

    #[test]
    fn saturates_far_along_class() {
        let s = schedule();
        let world = GaussianWorld::symmetric(vec![1.0, 0.0], 0.5).unwrap();
        let (lp, g) = analytic_gaussian_classifier_grad(&MelTensor::from_column(vec![60.0, 0.0]), 10, &world, ClassLabel(0), &s).unwrap();
        assert!(lp > -1e-12 && lp <= 0.0);
        assert!(g.frobenius_norm() < 1e-12);
    }

    #[test]
    fn classifier_grad_matches_finite_differences() {
        let s = schedule();
        let world = two_class_world();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for t in [3, 150, 300] {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            for label in [ClassLabel(0), ClassLabel(1)] {
                let (_, g) = analytic_gaussian_classifier_grad(&MelTensor::from_column(x.clone()), t, &world, label, &s).unwrap();
                let lp = |x: Vec<f64>| analytic_gaussian_classifier_grad(&MelTensor::from_column(x), t, &world, label, &s).unwrap().0;
                for i in 0..3 {
                    let h = 1e-5;
                    let mut xp = x.clone();
                    xp[i] += h;
                    let mut xm = x.clone();
                    xm[i] -= h;
                    let fd = (lp(xp) - lp(xm)) / (2.0 * h);
                    let got = g.as_slice()[i];
                    assert!((got - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{got} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn bayes_score_composition() {
        let s = schedule();
        let world = two_class_world();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for t in [1, 99, 250, 400] {
            let ab = s.alpha_bar(t).unwrap();
            let x = MelTensor::from_column((0..3).map(|_| StandardNormal.sample(&mut rng)).collect());
            let uncond = analytic_gaussian_eps(&x, t, &world, None, &s).unwrap();
            for c in 0..2 {
                let cond = analytic_gaussian_eps(&x, t, &world, Some(ClassLabel(c)), &s).unwrap();
                let (_, g) = analytic_gaussian_classifier_grad(&x, t, &world, ClassLabel(c), &s).unwrap();
                let composed = uncond.lin_comb(1.0, &g, -(1.0 - ab).sqrt()).unwrap();
                let rel = composed.lin_comb(1.0, &cond, -1.0).unwrap().frobenius_norm() / cond.frobenius_norm();
                assert!(rel < 1e-8, "t={t} rel={rel}");
            }
        }
    }

    #[test]
    fn validation_errors() {
        assert!(GaussianWorld::new(vec![vec![1.0], vec![1.0, 2.0]], 1.0, vec![0.5, 0.5]).is_err());
        assert!(GaussianWorld::new(vec![vec![1.0]], 1.0, vec![0.9]).is_err());
        let s = schedule();
        let world = two_class_world();
        let x = MelTensor::from_column(vec![0.0; 2]);
        assert!(matches!(analytic_gaussian_eps(&x, 1, &world, None, &s), Err(Error::DimensionMismatch { .. })));
        let x = MelTensor::from_column(vec![0.0; 3]);
        assert!(matches!(
            analytic_gaussian_classifier_grad(&x, 1, &world, ClassLabel(2), &s),
            Err(Error::InvalidLabel { .. })
        ));
    }
}
