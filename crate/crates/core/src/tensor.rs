//! Dense real grids used throughout the engine.
//!
//! [`MelTensor`] is the diffusion state: `n_mels` bins by `n_frames` frames,
//! stored frame-major so that a single frame is a contiguous slice. The same
//! layout is used on disk. [`Matrix`] is a plain row-major matrix used for
//! embeddings and layer weights.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n_mels: usize,
    pub n_frames: usize,
}

impl Shape {
    pub fn new(n_mels: usize, n_frames: usize) -> Self {
        Self { n_mels, n_frames }
    }

    pub fn len(&self) -> usize {
        self.n_mels * self.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_mels, self.n_frames)
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    /// Parses `FxN`, e.g. `80x100`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("shape `{s}` is not of the form FxN"));
        let (f, n) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let n_mels: usize = f.trim().parse().map_err(|_| bad())?;
        let n_frames: usize = n.trim().parse().map_err(|_| bad())?;
        if n_mels == 0 || n_frames == 0 {
            return Err(bad());
        }
        Ok(Self { n_mels, n_frames })
    }
}

/// Mel bins by frames, frame-major: element `(bin, frame)` lives at
/// `frame * n_mels + bin`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelTensor {
    shape: Shape,
    data: Vec<f64>,
}

/// A noise prediction. Same layout as the state it was predicted for.
pub type EpsEstimate = MelTensor;

impl MelTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// A single-frame tensor holding a flat vector, used by the vector-valued
    /// Gaussian environments.
    pub fn from_column(values: Vec<f64>) -> Self {
        Self {
            shape: Shape::new(values.len(), 1),
            data: values,
        }
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n_mels(&self) -> usize {
        self.shape.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.shape.n_frames
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[frame * self.shape.n_mels + bin]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: f64) {
        self.data[frame * self.shape.n_mels + bin] = value;
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        let f = self.shape.n_mels;
        &self.data[frame * f..(frame + 1) * f]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [f64] {
        let f = self.shape.n_mels;
        &mut self.data[frame * f..(frame + 1) * f]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.shape.n_mels.max(1))
    }

    pub fn ensure_shape(&self, other: &MelTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &MelTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> MelTensor {
        MelTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &MelTensor, b: f64) -> Result<MelTensor> {
        self.ensure_shape(other)?;
        Ok(MelTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn scale(&self, a: f64) -> MelTensor {
        self.map(|v| a * v)
    }

    pub fn max_abs_diff(&self, other: &MelTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a copy rounded through `f32`, i.e. exactly what survives a
    /// round trip through the on-disk format.
    pub fn quantized_f32(&self) -> MelTensor {
        self.map(|v| v as f32 as f64)
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} matrix"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::EmptyInput("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }
}
