//! Fused conditioning: a global embedding replicated across frames and
//! concatenated after the per-frame embeddings, upsampled 4x in time to the
//! mel frame rate, plus the fixed null tokens used for the unconditional
//! branch.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::tensor::Matrix;

/// Each of the two upsampling stages doubles the frame count.
pub const STAGE_FACTOR: usize = 2;
pub const UPSAMPLE_FACTOR: usize = STAGE_FACTOR * STAGE_FACTOR;

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    global: Vec<f64>,
    frames: Matrix,
    fused: Matrix,
    is_null: bool,
}

impl ConditioningBundle {
    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    /// `N x (D_m + D_f)`; row `n` is `[frames[n], global]`.
    pub fn fused(&self) -> &Matrix {
        &self.fused
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn global_dim(&self) -> usize {
        self.global.len()
    }

    pub fn frame_dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn fused_dim(&self) -> usize {
        self.fused.cols()
    }
}

/// Replicates `global` over the `frames.rows()` frames and concatenates it
/// after each frame embedding.
pub fn merge_embeddings(global: &[f64], frames: &Matrix) -> Result<ConditioningBundle> {
    merge(global, frames, false)
}

fn merge(global: &[f64], frames: &Matrix, is_null: bool) -> Result<ConditioningBundle> {
    if global.is_empty() {
        return Err(Error::EmptyInput("global embedding has zero width".into()));
    }
    if frames.rows() == 0 || frames.cols() == 0 {
        return Err(Error::EmptyInput(format!(
            "frame embeddings are {}x{}",
            frames.rows(),
            frames.cols()
        )));
    }
    if !global.iter().chain(frames.as_slice()).all(|v| v.is_finite()) {
        return Err(Error::InvalidRange("non-finite embedding entry".into()));
    }
    let d = frames.cols() + global.len();
    let mut fused = Vec::with_capacity(frames.rows() * d);
    for row in frames.iter_rows() {
        fused.extend_from_slice(row);
        fused.extend_from_slice(global);
    }
    Ok(ConditioningBundle {
        global: global.to_vec(),
        frames: frames.clone(),
        fused: Matrix::from_vec(frames.rows(), d, fused)?,
        is_null,
    })
}

/// Standard-normal null tokens, fixed by `seed`. The global token is drawn
/// first and frame tokens follow row by row from the same stream, so a
/// longer request extends a shorter one without changing its prefix.
/// Values are rounded to `f32` so persisted tokens reload exactly.
pub fn null_condition(
    global_dim: usize,
    frame_dim: usize,
    n_frames: usize,
    seed: u64,
) -> Result<ConditioningBundle> {
    if global_dim == 0 || frame_dim == 0 || n_frames == 0 {
        return Err(Error::EmptyInput(format!(
            "null condition dims {global_dim}, {frame_dim}, {n_frames}"
        )));
    }
    let mut rng = rng::stream(seed, Domain::NullTokens, 0);
    let mut draw = || Distribution::<f64>::sample(&StandardNormal, &mut rng) as f32 as f64;
    let global: Vec<f64> = (0..global_dim).map(|_| draw()).collect();
    let frames: Vec<f64> = (0..n_frames * frame_dim).map(|_| draw()).collect();
    merge(&global, &Matrix::from_vec(n_frames, frame_dim, frames)?, true)
}

/// Restores a null bundle from persisted tokens.
pub fn null_from_tokens(global: &[f64], frames: &Matrix) -> Result<ConditioningBundle> {
    merge(global, frames, true)
}

/// Nearest-neighbour duplication: every row appears `factor` times.
fn repeat_rows(v: &Matrix, factor: usize) -> Matrix {
    let mut out = Vec::with_capacity(v.rows() * factor * v.cols());
    for row in v.iter_rows() {
        for _ in 0..factor {
            out.extend_from_slice(row);
        }
    }
    Matrix::from_vec(v.rows() * factor, v.cols(), out).expect("sized above")
}

/// One transposed-convolution stage with kernel = stride = 2:
/// `out[2n + k] = kernels[k] * v[n] + bias`. Kernels are `D x D`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleStage {
    pub kernels: [Matrix; STAGE_FACTOR],
    pub bias: Vec<f64>,
}

impl UpsampleStage {
    pub fn identity(dim: usize) -> Self {
        let mut eye = Matrix::zeros(dim, dim);
        for i in 0..dim {
            eye.row_mut(i)[i] = 1.0;
        }
        Self {
            kernels: [eye.clone(), eye],
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, v: &Matrix) -> Result<Matrix> {
        let d = self.dim();
        if v.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.cols(),
            });
        }
        let mut out = Matrix::zeros(v.rows() * STAGE_FACTOR, d);
        for (n, row) in v.iter_rows().enumerate() {
            for (k, kernel) in self.kernels.iter().enumerate() {
                let dst = out.row_mut(n * STAGE_FACTOR + k);
                for (o, dst_o) in dst.iter_mut().enumerate() {
                    let w = kernel.row(o);
                    *dst_o = self.bias[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the stage input.
    pub fn backward(&self, input: &Matrix, upstream: &Matrix, grad: &mut UpsampleStage) -> Matrix {
        let d = self.dim();
        let mut dx = Matrix::zeros(input.rows(), d);
        for n in 0..input.rows() {
            let x = input.row(n);
            for k in 0..STAGE_FACTOR {
                let g = upstream.row(n * STAGE_FACTOR + k);
                let kernel = &self.kernels[k];
                for o in 0..d {
                    grad.bias[o] += g[o];
                    let gw = grad.kernels[k].row_mut(o);
                    for i in 0..d {
                        gw[i] += g[o] * x[i];
                    }
                }
                let dxr = dx.row_mut(n);
                for o in 0..d {
                    let w = kernel.row(o);
                    for i in 0..d {
                        dxr[i] += w[i] * g[o];
                    }
                }
            }
        }
        dx
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let d = self.dim();
        Self {
            kernels: [Matrix::zeros(d, d), Matrix::zeros(d, d)],
            bias: vec![0.0; d],
        }
    }
}

/// Two learned stages; identity-initialized kernels reproduce repetition.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedUpsampler {
    pub stages: [UpsampleStage; 2],
}

impl LearnedUpsampler {
    pub fn identity(dim: usize) -> Self {
        Self {
            stages: [UpsampleStage::identity(dim), UpsampleStage::identity(dim)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stages: [self.stages[0].zeros_like(), self.stages[1].zeros_like()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum Upsampler {
    #[default]
    Repeat,
    Learned(LearnedUpsampler),
}

/// `N x D` to `4N x D`.
pub fn temporal_upsample(v: &Matrix, mode: &Upsampler) -> Result<Matrix> {
    if v.rows() == 0 || v.cols() == 0 {
        return Err(Error::EmptyInput("conditioning has no frames".into()));
    }
    match mode {
        Upsampler::Repeat => Ok(repeat_rows(&repeat_rows(v, STAGE_FACTOR), STAGE_FACTOR)),
        Upsampler::Learned(l) => l.stages[1].forward(&l.stages[0].forward(v)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::standard_normal(rows, cols, &mut rng)
    }

    #[test]
    fn full_scale_fused_width() {
        let f = vec![0.5; 128];
        let m = rand_matrix(25, 512, 1);
        let b = merge_embeddings(&f, &m).unwrap();
        assert_eq!((b.fused().rows(), b.fused().cols()), (25, 640));
        assert!(!b.is_null());
    }

    #[test]
    fn direct_concatenation() {
        let b = merge_embeddings(&[1.0], &Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(b.fused().as_slice(), &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn empty_inputs_rejected() {
        let m = rand_matrix(2, 3, 1);
        assert!(matches!(merge_embeddings(&[], &m), Err(Error::EmptyInput(_))));
        assert!(matches!(
            merge_embeddings(&[1.0], &Matrix::zeros(0, 3)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn merge_then_slice_recovers_inputs() {
        let f = [0.1, -0.2, 0.3];
        let m = rand_matrix(5, 4, 2);
        let b = merge_embeddings(&f, &m).unwrap();
        for n in 0..5 {
            let row = b.fused().row(n);
            assert_eq!(&row[..4], m.row(n));
            assert_eq!(&row[4..], &f);
        }
    }

    #[test]
    fn repetition_upsample() {
        let v = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let up = temporal_upsample(&v, &Upsampler::Repeat).unwrap();
        assert_eq!(up.rows(), 4);
        for r in up.iter_rows() {
            assert_eq!(r, &[1.0, 2.0]);
        }
        let v = rand_matrix(25, 3, 3);
        assert_eq!(temporal_upsample(&v, &Upsampler::Repeat).unwrap().rows(), 100);
    }

    #[test]
    fn upsample_commutes_with_merge() {
        let f = [0.7, -1.1];
        let m = rand_matrix(3, 4, 4);
        let fused_up = temporal_upsample(merge_embeddings(&f, &m).unwrap().fused(), &Upsampler::Repeat).unwrap();
        let m_up = temporal_upsample(&m, &Upsampler::Repeat).unwrap();
        assert_eq!(&fused_up, merge_embeddings(&f, &m_up).unwrap().fused());
    }

    #[test]
    fn identity_kernels_match_repetition() {
        let v = rand_matrix(6, 5, 5);
        let learned = temporal_upsample(&v, &Upsampler::Learned(LearnedUpsampler::identity(5))).unwrap();
        let repeated = temporal_upsample(&v, &Upsampler::Repeat).unwrap();
        assert_eq!(learned, repeated);
    }

    #[test]
    fn stage_backward_matches_finite_differences() {
        let v = rand_matrix(2, 3, 6);
        let mut stage = UpsampleStage::identity(3);
        stage.kernels[0] = rand_matrix(3, 3, 7);
        stage.kernels[1] = rand_matrix(3, 3, 8);
        let up = rand_matrix(4, 3, 9);
        let loss = |s: &UpsampleStage, x: &Matrix| -> f64 {
            let y = s.forward(x).unwrap();
            y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let mut grad = stage.zeros_like();
        let dx = stage.backward(&v, &up, &mut grad);
        let h = 1e-5;
        for i in 0..9 {
            let mut p = stage.clone();
            p.kernels[1].as_mut_slice()[i] += h;
            let mut m = stage.clone();
            m.kernels[1].as_mut_slice()[i] -= h;
            let fd = (loss(&p, &v) - loss(&m, &v)) / (2.0 * h);
            assert!((fd - grad.kernels[1].as_slice()[i]).abs() < 1e-8);
        }
        for i in 0..6 {
            let mut p = v.clone();
            p.as_mut_slice()[i] += h;
            let mut m = v.clone();
            m.as_mut_slice()[i] -= h;
            let fd = (loss(&stage, &p) - loss(&stage, &m)) / (2.0 * h);
            assert!((fd - dx.as_slice()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn null_tokens_deterministic_and_seeded() {
        let a = null_condition(4, 6, 3, 7).unwrap();
        let b = null_condition(4, 6, 3, 7).unwrap();
        let c = null_condition(4, 6, 3, 8).unwrap();
        assert!(a.is_null());
        assert_eq!(a, b);
        assert_ne!(a.fused(), c.fused());
        let longer = null_condition(4, 6, 5, 7).unwrap();
        assert_eq!(&longer.frames().as_slice()[..18], a.frames().as_slice());
    }

    #[test]
    fn null_token_moments() {
        let b = null_condition(1000, 1000, 100, 11).unwrap();
        let vals = b.frames().as_slice();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 1e5 entries: standard error of the mean ~3.2e-3, of the variance ~4.5e-3.
        assert!(mean.abs() < 5.0 * (1.0 / n).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "var {var}");
    }
}
