//! Synthetic datasets.
//!
//! `gaussian-classes`: every frame of `x0` is drawn from `N(mu_c, sigma^2 I)`,
//! and the conditioning encodes the class.
//!
//! `harmonic-mel`: spectrogram-like grids whose active bins sit on the
//! multiples of a class-dependent fundamental. Each example has a random gain
//! and a per-conditioning-frame envelope. The conditioning carries only
//! the gain and envelope, so the class is recoverable from `x0` but not from
//! the conditioning.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::conditioning::{merge_embeddings, ConditioningBundle, UPSAMPLE_FACTOR};
use crate::error::{Error, Result};
use crate::models::{ClassLabel, GaussianWorld};
use crate::rng::{stream, Domain};
use crate::tensor::{Matrix, MelTensor, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    GaussianClasses,
    HarmonicMel,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianClasses => "gaussian-classes",
            Self::HarmonicMel => "harmonic-mel",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-classes" => Ok(Self::GaussianClasses),
            "harmonic-mel" => Ok(Self::HarmonicMel),
            other => Err(Error::UnknownDatasetKind(other.to_string())),
        }
    }
}

const FUNDAMENTALS: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub n_mels: usize,
    pub n_frames: usize,
    pub n_classes: usize,
    pub global_dim: usize,
    pub frame_dim: usize,
    /// Per-entry noise standard deviation.
    pub noise: f64,
}

impl DataConfig {
    pub fn for_kind(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::GaussianClasses => Self {
                kind,
                n_mels: 1,
                n_frames: 4,
                n_classes: 2,
                global_dim: 2,
                frame_dim: 2,
                noise: 0.1,
            },
            DatasetKind::HarmonicMel => Self {
                kind,
                n_mels: 16,
                n_frames: 8,
                n_classes: 4,
                global_dim: 4,
                frame_dim: 4,
                noise: 0.05,
            },
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.n_mels, self.n_frames)
    }

    pub fn cond_frames(&self) -> usize {
        self.n_frames / UPSAMPLE_FACTOR
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.n_frames == 0 || self.n_frames % UPSAMPLE_FACTOR != 0 {
            return Err(Error::Config(format!(
                "data shape {}x{} needs a positive frame count divisible by {UPSAMPLE_FACTOR}",
                self.n_mels, self.n_frames
            )));
        }
        if self.n_classes < 2 || self.global_dim == 0 || self.frame_dim == 0 {
            return Err(Error::Config(format!("degenerate data config {self:?}")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level {}", self.noise)));
        }
        match self.kind {
            DatasetKind::HarmonicMel if self.n_classes > FUNDAMENTALS.len() => Err(Error::Config(
                format!("harmonic-mel supports at most {} classes", FUNDAMENTALS.len()),
            )),
            DatasetKind::HarmonicMel if FUNDAMENTALS[self.n_classes - 1] > self.n_mels => {
                Err(Error::Config(format!(
                    "{} mel bins cannot hold {} harmonic classes",
                    self.n_mels, self.n_classes
                )))
            }
            _ => Ok(()),
        }
    }

    /// Per-frame class mean of `gaussian-classes`: a constant level in
    /// `[-0.8, 0.8]` with its sign alternating over bins.
    pub fn gaussian_mean(&self, class: usize) -> Vec<f64> {
        let level = -0.8 + 1.6 * class as f64 / (self.n_classes - 1) as f64;
        (0..self.n_mels)
            .map(|f| if f % 2 == 0 { level } else { -level })
            .collect()
    }

    /// Closed-form model of `gaussian-classes` over whole tensors.
    pub fn gaussian_world(&self) -> Result<GaussianWorld> {
        let means = (0..self.n_classes)
            .map(|c| {
                let frame = self.gaussian_mean(c);
                (0..self.n_frames).flat_map(|_| frame.iter().copied()).collect()
            })
            .collect();
        let priors = vec![1.0 / self.n_classes as f64; self.n_classes];
        GaussianWorld::new(means, self.noise * self.noise, priors)
    }

    /// Harmonic template of class `c`, peak 1, values in `[0, 1]`.
    pub fn harmonic_pattern(&self, class: usize) -> Vec<f64> {
        let f0 = FUNDAMENTALS[class];
        let mut p = vec![0.0; self.n_mels];
        let mut h = 1;
        while h * f0 <= self.n_mels {
            let center = (h * f0 - 1) as f64;
            let amp = 0.85f64.powi(h as i32 - 1);
            for (f, v) in p.iter_mut().enumerate() {
                let d = f as f64 - center;
                *v += amp * (-d * d / (2.0 * 0.35 * 0.35)).exp();
            }
            h += 1;
        }
        p.iter_mut().for_each(|v| *v = v.min(1.0));
        p
    }

    pub fn generate(&self, size: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let examples = (0..size)
            .map(|i| self.example(i, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            config: *self,
            examples,
        })
    }

    fn example(&self, index: usize, seed: u64) -> Result<Example> {
        let mut rng = stream(seed, Domain::Dataset, index as u64);
        let label = rng.random_range(0..self.n_classes);
        let shape = self.shape();
        let nc = self.cond_frames();
        let (x0, global, frames) = match self.kind {
            DatasetKind::GaussianClasses => {
                let mean = self.gaussian_mean(label);
                let mut x = MelTensor::zeros(shape);
                for n in 0..self.n_frames {
                    for (v, m) in x.frame_mut(n).iter_mut().zip(&mean) {
                        let z: f64 = rng.sample(StandardNormal);
                        *v = m + self.noise * z;
                    }
                }
                let global: Vec<f64> = (0..self.global_dim)
                    .map(|i| if i == label % self.global_dim { 1.0 } else { 0.0 })
                    .collect();
                let frames = Matrix::from_vec(
                    nc,
                    self.frame_dim,
                    (0..nc)
                        .flat_map(|_| {
                            (0..self.frame_dim).map(move |i| if i == label % self.frame_dim { 1.0 } else { -1.0 })
                        })
                        .collect(),
                )?;
                (x, global, frames)
            }
            DatasetKind::HarmonicMel => {
                let pattern = self.harmonic_pattern(label);
                let gain = rng.random_range(0.7..1.0);
                let env: Vec<f64> = (0..nc).map(|_| rng.random_range(0.5..1.0)).collect();
                let mut x = MelTensor::zeros(shape);
                for n in 0..self.n_frames {
                    let e = env[n / UPSAMPLE_FACTOR];
                    for (v, p) in x.frame_mut(n).iter_mut().zip(&pattern) {
                        let z: f64 = rng.sample(StandardNormal);
                        *v = -1.0 + 2.0 * gain * e * p + self.noise * z;
                    }
                }
                let d = self.global_dim as f64;
                let global: Vec<f64> = (0..self.global_dim).map(|i| gain * (i + 1) as f64 / d).collect();
                let frames = Matrix::from_vec(
                    nc,
                    self.frame_dim,
                    env.iter()
                        .flat_map(|e| (0..self.frame_dim).map(move |i| if i % 2 == 0 { *e } else { 1.0 - e }))
                        .collect(),
                )?;
                (x, global, frames)
            }
        };
        Ok(Example {
            x0,
            cond: merge_embeddings(&global, &frames)?,
            label: ClassLabel(label),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x0: MelTensor,
    pub cond: ConditioningBundle,
    pub label: ClassLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.config.shape()
    }

    /// Per-class mean of the clean tensors.
    pub fn centroids(&self) -> Result<NearestCentroid> {
        let k = self.config.n_classes;
        let mut sums = vec![MelTensor::zeros(self.shape()); k];
        let mut counts = vec![0usize; k];
        for ex in &self.examples {
            let c = ex.label.0;
            sums[c] = sums[c].lin_comb(1.0, &ex.x0, 1.0)?;
            counts[c] += 1;
        }
        if let Some(c) = counts.iter().position(|n| *n == 0) {
            return Err(Error::EmptyInput(format!("class {c} has no examples")));
        }
        Ok(NearestCentroid {
            centroids: sums
                .iter()
                .zip(&counts)
                .map(|(s, n)| s.scale(1.0 / *n as f64))
                .collect(),
        })
    }
}

/// Dataset of `kind` with that kind's default shape.
pub fn make_synthetic_dataset(kind: DatasetKind, size: usize, seed: u64) -> Result<Dataset> {
    DataConfig::for_kind(kind).generate(size, seed)
}

/// Labels a tensor by its closest class centroid in Frobenius distance.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<MelTensor>,
}

impl NearestCentroid {
    pub fn classify(&self, x: &MelTensor) -> Result<ClassLabel> {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            let d = x.lin_comb(1.0, c, -1.0)?.frobenius_norm();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(ClassLabel(best.0))
    }

    pub fn accuracy<'a>(&self, items: impl IntoIterator<Item = (&'a MelTensor, ClassLabel)>) -> Result<f64> {
        let (mut hit, mut n) = (0usize, 0usize);
        for (x, label) in items {
            hit += usize::from(self.classify(x)? == label);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("no items to score".into()));
        }
        Ok(hit as f64 / n as f64)
    }
}
