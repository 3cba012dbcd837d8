//! Mel-spectrogram front-end at 16 kHz and a Griffin-Lim inverse.
//!
//! Pipeline: peak-normalized waveform, Hann-windowed magnitude STFT
//! (640/160/640), 80-bin triangular mel projection, clip at `1e-5`, natural
//! log, then an affine map of `[global_min, global_max]` onto `[-1, 1]`.

mod filterbank;
mod griffin_lim;
mod stft;
mod wav;

pub use filterbank::{
    build_mel_filterbank, FilterbankConfig, MelFilterbank, MelScale, DEFAULT_FMAX, DEFAULT_FMIN,
    DEFAULT_N_MELS,
};
pub use griffin_lim::{griffin_lim, griffin_lim_with_history, GriffinLim, DEFAULT_GL_ITERATIONS};
pub use rustfft::num_complex::Complex64;
pub use stft::{
    naive_dft_oracle, stft_magnitude, Stft, StftConfig, WindowKind, DEFAULT_DFT_LEN, DEFAULT_HOP,
    DEFAULT_WIN,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::tensor::{MelTensor, Shape};

pub const SAMPLE_RATE: u32 = 16_000;
pub const PEAK_LEVEL: f64 = 0.9;
pub const MEL_CLIP_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Audio(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Rescales so the largest magnitude is [`PEAK_LEVEL`]; silence is left as is.
    pub fn peak_normalized(mut self) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            let g = PEAK_LEVEL / peak;
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
        self
    }
}

/// Global log-mel extremes of a training corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationStats {
    min: f64,
    max: f64,
}

impl NormalizationStats {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::DegenerateStats { min, max });
        }
        Ok(Self { min, max })
    }

    /// Extremes over a set of log-mel tensors.
    pub fn from_log_mels<'a>(mels: impl IntoIterator<Item = &'a MelTensor>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in mels {
            for v in m.as_slice() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if lo == f64::INFINITY {
            return Err(Error::EmptyInput("no log-mel values for statistics".into()));
        }
        Self::new(lo, hi)
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.min) / (self.max - self.min) - 1.0
    }

    pub fn denormalize(&self, m: f64) -> f64 {
        (m + 1.0) * 0.5 * (self.max - self.min) + self.min
    }
}

/// Shared analysis state: STFT plans and the filterbank.
pub struct MelAnalyzer {
    stft: Stft,
    fb: MelFilterbank,
}

impl MelAnalyzer {
    pub fn new(stft: StftConfig, fb: MelFilterbank) -> Result<Self> {
        if fb.n_bins() != stft.n_bins() {
            return Err(Error::DimensionMismatch {
                expected: stft.n_bins(),
                got: fb.n_bins(),
            });
        }
        Ok(Self {
            stft: Stft::new(stft)?,
            fb,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Clipped mel energies before the logarithm.
    pub fn mel_energies(&self, samples: &[f64]) -> Result<MelTensor> {
        let mag = self.stft.magnitude(samples)?;
        let mut out = MelTensor::zeros(Shape::new(self.fb.n_mels(), mag.rows()));
        for (f, row) in mag.iter_rows().enumerate() {
            let dst = out.frame_mut(f);
            self.fb.apply(row, dst);
            dst.iter_mut().for_each(|v| *v = v.max(MEL_CLIP_FLOOR));
        }
        Ok(out)
    }

    /// Natural-log mel values, `log(max(mel, 1e-5))`.
    pub fn log_mel(&self, signal: &AudioSignal) -> Result<MelTensor> {
        Ok(self.mel_energies(signal.samples())?.map(f64::ln))
    }

    pub fn mel_spectrogram(&self, signal: &AudioSignal, stats: &NormalizationStats) -> Result<MelTensor> {
        Ok(self.log_mel(signal)?.map(|v| stats.normalize(v)))
    }
}

impl Default for MelAnalyzer {
    fn default() -> Self {
        Self::new(StftConfig::default(), build_mel_filterbank()).expect("default analysis is valid")
    }
}

/// Normalized log-mel spectrogram with the default STFT settings.
pub fn mel_spectrogram(
    signal: &AudioSignal,
    fb: &MelFilterbank,
    stats: &NormalizationStats,
) -> Result<MelTensor> {
    MelAnalyzer::new(StftConfig::default(), fb.clone())?.mel_spectrogram(signal, stats)
}

/// Inverse of the normalization, back to natural-log mel values.
pub fn denormalize(m: &MelTensor, stats: &NormalizationStats) -> MelTensor {
    m.map(|v| stats.denormalize(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_normalization() {
        let s = AudioSignal::new(vec![0.1, -0.5, 0.25], SAMPLE_RATE).unwrap().peak_normalized();
        assert!((s.peak() - 0.9).abs() < 1e-15);
        let z = AudioSignal::new(vec![0.0; 4], SAMPLE_RATE).unwrap().peak_normalized();
        assert_eq!(z.peak(), 0.0);
        assert!(AudioSignal::new(vec![f64::NAN], SAMPLE_RATE).is_err());
    }

    #[test]
    fn stats_endpoints_and_roundtrip() {
        let st = NormalizationStats::new(-11.5, 2.25).unwrap();
        assert_eq!(st.normalize(-11.5), -1.0);
        assert_eq!(st.normalize(2.25), 1.0);
        for v in [-20.0, -11.5, -3.3, 0.0, 2.25, 7.0] {
            let back = st.denormalize(st.normalize(v));
            assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
        assert!(matches!(
            NormalizationStats::new(1.0, 1.0),
            Err(Error::DegenerateStats { .. })
        ));
    }

    #[test]
    fn silence_hits_clip_floor() {
        let an = MelAnalyzer::default();
        let sig = AudioSignal::new(vec![0.0; 1600], SAMPLE_RATE).unwrap();
        let lm = an.log_mel(&sig).unwrap();
        assert_eq!(lm.n_mels(), 80);
        assert_eq!(lm.n_frames(), 7);
        for v in lm.as_slice() {
            assert!((v - (-11.512925464970229)).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let sig: Vec<f64> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let mag = stft_magnitude(&sig, &StftConfig::default()).unwrap();
        for row in mag.iter_rows() {
            let arg = (0..row.len()).max_by(|a, b| row[*a].total_cmp(&row[*b])).unwrap();
            assert_eq!(arg, 40);
        }
    }
}
