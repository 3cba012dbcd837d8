//! Diffusion noise schedule and the forward (noising) process.
//!
//! Steps are 1-based at the API (`t` in `1..=T`); storage is 0-based. All
//! tables are `f64` regardless of the tensor precision used elsewhere.

use crate::error::{Error, Result};
use crate::tensor::MelTensor;

pub const DEFAULT_STEPS: usize = 400;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule with inclusive endpoints:
    /// `beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidRange(format!(
                "linear schedule needs T >= 2, got {steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = beta_end - beta_start;
        let last = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| {
                if i == steps - 1 {
                    beta_end
                } else {
                    beta_start + (i as f64) / last * span
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }

    /// Arbitrary per-step variances. Each beta must lie in `[0, 1)` and the
    /// final cumulative product must stay positive.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidRange("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && **b < 1.0)) {
            return Err(Error::InvalidRange(format!("beta {b} outside [0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidRange("cumulative alpha underflows to zero".into()));
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, x0: &MelTensor, t: usize, eps: &MelTensor) -> Result<MelTensor> {
        let ab = self.alpha_bar(t)?;
        x0.lin_comb(ab.sqrt(), eps, (1.0 - ab).sqrt())
    }
}
