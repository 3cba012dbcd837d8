use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Matrix;

/// Named, shaped access to every trainable tensor of a model, in a fixed
/// order. Optimizers, checkpoints and finite-difference probes all go
/// through this.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }
}

/// `y = W x + b`, with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Normal weights with standard deviation `gain / sqrt(input)`, zero bias,
    /// rounded to `f32`.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let scale = gain / (input.max(1) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32 as f64)
            .collect();
        Self {
            weight: Matrix::from_vec(output, input, data).expect("sized above"),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.forward_accumulate(x, &mut y);
        y
    }

    /// `y += W x` (bias not added).
    pub fn forward_accumulate(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_dim());
        for (yo, row) in y.iter_mut().zip(self.weight.iter_rows()) {
            *yo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dW += g x^T`, `db += g` into `grad`; returns `W^T g`.
    pub fn backward(&self, x: &[f64], g: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.input_dim()];
        self.backward_into(x, g, grad, &mut dx);
        dx
    }

    /// As [`Linear::backward`] but accumulates `W^T g` into `dx`.
    pub fn backward_into(&self, x: &[f64], g: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        let cols = self.input_dim();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad.bias[o] += go;
            let gw = &mut grad.weight.as_mut_slice()[o * cols..(o + 1) * cols];
            for (gwi, xi) in gw.iter_mut().zip(x) {
                *gwi += go * xi;
            }
            for (dxi, wi) in dx.iter_mut().zip(self.weight.row(o)) {
                *dxi += wi * go;
            }
        }
    }

    /// Accumulates only the parameter gradient.
    pub fn backward_params(&self, x: &[f64], g: &[f64], grad: &mut Linear) {
        let cols = self.input_dim();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            grad.bias[o] += go;
            let gw = &mut grad.weight.as_mut_slice()[o * cols..(o + 1) * cols];
            for (gwi, xi) in gw.iter_mut().zip(x) {
                *gwi += go * xi;
            }
        }
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &format!("{prefix}.weight"),
            &[self.weight.rows(), self.weight.cols()],
            self.weight.as_slice(),
        );
        f(&format!("{prefix}.bias"), &[self.bias.len()], &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.weight"), self.weight.as_mut_slice());
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx of `x * sigmoid(x)`.
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| silu(v)).collect()
}

/// `g * silu'(pre)` elementwise.
pub fn silu_backward(pre: &[f64], g: &[f64]) -> Vec<f64> {
    pre.iter().zip(g).map(|(&p, &gi)| gi * silu_grad(p)).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layer = Linear::init(4, 3, 1.0, &mut rng);
        let x = [0.5, -1.0, 2.0, 0.25];
        let g = [1.0, -2.0, 0.5];
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&x, &g, &mut grad);
        for o in 0..3 {
            for i in 0..4 {
                assert_eq!(grad.weight.get(o, i), g[o] * x[i]);
            }
            assert_eq!(grad.bias[o], g[o]);
        }
        for i in 0..4 {
            let want: f64 = (0..3).map(|o| layer.weight.get(o, i) * g[o]).sum();
            assert!((dx[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let layer = Linear::init(3, 2, 1.0, &mut rng);
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&[1.0, 2.0, 3.0], &[0.0, 0.0], &mut grad);
        assert!(dx.iter().all(|v| *v == 0.0));
        assert_eq!(grad, layer.zeros_like());
    }

    #[test]
    fn silu_derivative_matches_finite_difference() {
        for x in [-6.0, -1.3, -0.2, 0.0, 0.4, 2.5, 9.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0; 4]) - 4f64.ln()).abs() < 1e-15);
    }
}
