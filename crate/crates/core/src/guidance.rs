//! Classifier-free combination, gradient normalization and the combined
//! guided noise estimate.
//!
//! Naming: `w1` weights the classifier-free extrapolation, `w2` weights the
//! classifier gradient. Classifier guidance is applied only while
//! `t <= t_start` during the `T -> 1` sweep.

use crate::error::{Error, Result};
use crate::tensor::{EpsEstimate, MelTensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub w1: f64,
    pub w2: f64,
    pub t_start: usize,
    pub normalize: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            w1: 2.0,
            w2: 1.5,
            t_start: 270,
            normalize: true,
        }
    }
}

impl GuidanceConfig {
    /// No classifier-free extrapolation and no classifier term.
    pub fn disabled() -> Self {
        Self {
            w1: 0.0,
            w2: 0.0,
            t_start: 0,
            normalize: true,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if !self.w1.is_finite() || self.w1 < -1.0 {
            return Err(Error::Config(format!("w1 = {} must be finite and >= -1", self.w1)));
        }
        if !self.w2.is_finite() || self.w2 < 0.0 {
            return Err(Error::Config(format!("w2 = {} must be finite and >= 0", self.w2)));
        }
        if self.t_start > steps {
            return Err(Error::Config(format!(
                "t_start = {} exceeds the schedule length {steps}",
                self.t_start
            )));
        }
        Ok(())
    }

    pub fn gate_open(&self, t: usize) -> bool {
        t <= self.t_start
    }

    /// The `w1 = -1` setting discards the conditional branch.
    pub fn unconditional_only(&self) -> bool {
        self.w1 == -1.0
    }
}

/// `(1 + w1) * eps_cond - w1 * eps_uncond`. The endpoints `w1 = 0` and
/// `w1 = -1` return the corresponding branch bit for bit.
pub fn cfg_combine(eps_cond: &EpsEstimate, eps_uncond: &EpsEstimate, w1: f64) -> Result<EpsEstimate> {
    eps_cond.ensure_shape(eps_uncond)?;
    if w1 == 0.0 {
        return Ok(eps_cond.clone());
    }
    if w1 == -1.0 {
        return Ok(eps_uncond.clone());
    }
    eps_cond.lin_comb(1.0 + w1, eps_uncond, -w1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormFactor {
    pub gamma: f64,
    /// Set when the gradient norm is zero and `gamma` is the sentinel 0.
    pub degenerate: bool,
}

/// `gamma_t = ||eps_mg|| / (sqrt(1 - abar_t) * ||grad||)`, Frobenius norms
/// over the whole tensor.
pub fn gradient_norm_factor(eps_mg: &EpsEstimate, grad: &MelTensor, alpha_bar_t: f64) -> Result<NormFactor> {
    eps_mg.ensure_shape(grad)?;
    let denom = (1.0 - alpha_bar_t).sqrt() * grad.frobenius_norm();
    if denom == 0.0 || !denom.is_finite() {
        return Ok(NormFactor {
            gamma: 0.0,
            degenerate: true,
        });
    }
    Ok(NormFactor {
        gamma: eps_mg.frobenius_norm() / denom,
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceTerm {
    pub gamma: f64,
    pub degenerate: bool,
    pub raw_grad: MelTensor,
    /// `w2 * gamma * sqrt(1 - abar_t) * raw_grad`; subtracted from `eps_mg`.
    pub scaled_term: MelTensor,
}

/// Builds the classifier correction. With `normalize` off, `gamma` is 1.
pub fn guidance_term(
    eps_mg: &EpsEstimate,
    grad: &MelTensor,
    cfg: &GuidanceConfig,
    alpha_bar_t: f64,
) -> Result<GuidanceTerm> {
    let NormFactor { gamma, degenerate } = if cfg.normalize {
        gradient_norm_factor(eps_mg, grad, alpha_bar_t)?
    } else {
        eps_mg.ensure_shape(grad)?;
        NormFactor {
            gamma: 1.0,
            degenerate: false,
        }
    };
    let coeff = cfg.w2 * gamma * (1.0 - alpha_bar_t).sqrt();
    Ok(GuidanceTerm {
        gamma,
        degenerate,
        raw_grad: grad.clone(),
        scaled_term: grad.scale(coeff),
    })
}

/// Gated guided estimate. Returns `eps_mg` unchanged (and no term) when the
/// gate is closed or `w2 = 0`.
pub fn guided_eps(
    eps_mg: &EpsEstimate,
    grad: &MelTensor,
    cfg: &GuidanceConfig,
    t: usize,
    alpha_bar_t: f64,
) -> Result<(EpsEstimate, Option<GuidanceTerm>)> {
    eps_mg.ensure_shape(grad)?;
    if !cfg.gate_open(t) || cfg.w2 == 0.0 {
        return Ok((eps_mg.clone(), None));
    }
    let term = guidance_term(eps_mg, grad, cfg, alpha_bar_t)?;
    if term.degenerate {
        return Ok((eps_mg.clone(), Some(term)));
    }
    let out = eps_mg.lin_comb(1.0, &term.scaled_term, -1.0)?;
    Ok((out, Some(term)))
}
