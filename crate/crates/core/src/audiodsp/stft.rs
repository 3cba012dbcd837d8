use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_WIN: usize = 640;
pub const DEFAULT_HOP: usize = 160;
pub const DEFAULT_DFT_LEN: usize = 640;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl std::str::FromStr for WindowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Self::Hann),
            "hamming" => Ok(Self::Hamming),
            "rect" | "rectangular" => Ok(Self::Rectangular),
            other => Err(Error::Config(format!("unknown window `{other}`"))),
        }
    }
}

impl WindowKind {
    pub fn build(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    Self::Hann => 0.5 - 0.5 * phase.cos(),
                    Self::Hamming => 0.54 - 0.46 * phase.cos(),
                    Self::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub win: usize,
    pub hop: usize,
    pub dft_len: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win: DEFAULT_WIN,
            hop: DEFAULT_HOP,
            dft_len: DEFAULT_DFT_LEN,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.dft_len / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.win == 0 || self.hop == 0 || self.dft_len < self.win {
            return Err(Error::Config(format!(
                "need win > 0, hop > 0, dft_len >= win; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Frames lie fully inside the signal; no padding.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.win {
            return Err(Error::SignalTooShort { len, min: self.win });
        }
        Ok((len - self.win) / self.hop + 1)
    }

    /// Samples covered by `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.win
        }
    }
}

/// Reusable forward/inverse plans for one configuration.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: cfg.window.build(cfg.win),
            forward: planner.plan_fft_forward(cfg.dft_len),
            inverse: planner.plan_fft_inverse(cfg.dft_len),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Non-negative-frequency bins of every frame; `result[frame][bin]`.
    pub fn complex(&self, samples: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let frames = self.cfg.frame_count(samples.len())?;
        let nb = self.cfg.n_bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.dft_len];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let start = f * self.cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (i, (s, w)) in samples[start..start + self.cfg.win].iter().zip(&self.window).enumerate() {
                buf[i] = Complex64::new(s * w, 0.0);
            }
            self.forward.process(&mut buf);
            out.push(buf[..nb].to_vec());
        }
        Ok(out)
    }

    /// Magnitudes as a `frames x bins` matrix.
    pub fn magnitude(&self, samples: &[f64]) -> Result<Matrix> {
        let spec = self.complex(samples)?;
        let nb = self.cfg.n_bins();
        let data = spec.iter().flat_map(|fr| fr.iter().map(|c| c.norm())).collect();
        Matrix::from_vec(spec.len(), nb, data)
    }

    /// Least-squares overlap-add inverse of a half spectrum.
    pub fn inverse(&self, spec: &[Vec<Complex64>]) -> Vec<f64> {
        let n = self.cfg.dft_len;
        let nb = self.cfg.n_bins();
        let len = self.cfg.signal_len(spec.len());
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (f, half) in spec.iter().enumerate() {
            buf[..nb].copy_from_slice(&half[..nb]);
            // Hermitian extension.
            for k in nb..n {
                buf[k] = half[n - k].conj();
            }
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = f * self.cfg.hop;
            for (i, w) in self.window.iter().enumerate() {
                acc[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(a, w)| if *w > 1e-10 { a / w } else { 0.0 })
            .collect()
    }
}

/// Magnitude STFT, `frames x (dft_len/2 + 1)`.
pub fn stft_magnitude(samples: &[f64], cfg: &StftConfig) -> Result<Matrix> {
    Stft::new(*cfg)?.magnitude(samples)
}

/// Direct `O(n^2)` summation, `X_k = sum_n x_n exp(-2 pi i k n / N)` over the
/// full length `dft_len` (the frame is zero-padded).
pub fn naive_dft_oracle(frame: &[f64], dft_len: usize) -> Vec<Complex64> {
    assert!(frame.len() <= dft_len, "frame longer than transform");
    let n = dft_len as f64;
    (0..dft_len)
        .map(|k| {
            frame.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (i, x)| {
                // Reduce k*i mod N before scaling so the angle stays exact.
                let idx = (k * i) % dft_len;
                let ang = -2.0 * PI * idx as f64 / n;
                acc + Complex64::new(x * ang.cos(), x * ang.sin())
            })
        })
        .collect()
}
