use crate::error::{Error, Result};
use crate::models::Parameters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the flattened parameter vector, in
/// [`Parameters::visit`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates applied.
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn update(&mut self, params: &mut dyn Parameters, grads: &dyn Parameters, lr: f64) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.m.len() || params.param_count() != g.len() {
            return Err(Error::TopologyMismatch(format!(
                "optimizer sized for {} parameters, got {} gradients for {} parameters",
                self.m.len(),
                g.len(),
                params.param_count()
            )));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, data| {
            for p in data.iter_mut() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
                i += 1;
            }
        });
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for x in self.m.iter_mut().chain(self.v.iter_mut()) {
            *x = *x as f32 as f64;
        }
    }
}
