use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rustfft::num_complex::Complex64;

use super::{AudioSignal, MelAnalyzer, NormalizationStats, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::tensor::MelTensor;

pub const DEFAULT_GL_ITERATIONS: usize = 60;

/// Phase reconstruction from a normalized log-mel tensor.
pub struct GriffinLim {
    analyzer: MelAnalyzer,
    /// `n_bins x n_mels`, Moore-Penrose inverse of the filterbank.
    pinv: DMatrix<f64>,
}

impl GriffinLim {
    pub fn new(analyzer: MelAnalyzer) -> Result<Self> {
        let w = analyzer.filterbank().weights();
        let fb = DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
        let pinv = fb
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Config(format!("filterbank pseudo-inverse: {e}")))?;
        Ok(Self { analyzer, pinv })
    }

    pub fn analyzer(&self) -> &MelAnalyzer {
        &self.analyzer
    }

    /// Linear magnitudes `frames x bins`, clamped at zero.
    fn target_magnitudes(&self, m: &MelTensor, stats: &NormalizationStats) -> Vec<Vec<f64>> {
        let n_mels = self.analyzer.filterbank().n_mels();
        m.frames()
            .map(|fr| {
                let mel = nalgebra::DVector::from_iterator(
                    n_mels,
                    fr.iter().map(|v| stats.denormalize(*v).exp()),
                );
                (&self.pinv * mel).iter().map(|v| v.max(0.0)).collect()
            })
            .collect()
    }

    fn mel_error(&self, samples: &[f64], target: &MelTensor) -> Result<f64> {
        let est = self.analyzer.mel_energies(samples)?;
        let num: f64 = est
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den = target.frobenius_norm();
        Ok(num.sqrt() / den.max(f64::MIN_POSITIVE))
    }

    /// Returns the waveform and the mel-domain relative error after each
    /// iteration.
    pub fn run(
        &self,
        m: &MelTensor,
        stats: &NormalizationStats,
        iterations: usize,
        seed: u64,
    ) -> Result<(AudioSignal, Vec<f64>)> {
        let n_mels = self.analyzer.filterbank().n_mels();
        if m.n_mels() != n_mels {
            return Err(Error::DimensionMismatch {
                expected: n_mels,
                got: m.n_mels(),
            });
        }
        if m.n_frames() == 0 {
            return Err(Error::EmptyInput("mel tensor has no frames".into()));
        }
        let stft = self.analyzer.stft();
        let mags = self.target_magnitudes(m, stats);
        let target = m.map(|v| stats.denormalize(v).exp());

        let mut rng = stream(seed, Domain::GriffinLim, 0);
        let mut spec: Vec<Vec<Complex64>> = mags
            .iter()
            .map(|row| {
                row.iter()
                    .map(|a| Complex64::from_polar(*a, rng.random_range(-PI..PI)))
                    .collect()
            })
            .collect();
        let mut history = Vec::with_capacity(iterations);
        let mut signal = stft.inverse(&spec);
        for _ in 0..iterations {
            let est = stft.complex(&signal)?;
            for ((dst, src), row) in spec.iter_mut().zip(&est).zip(&mags) {
                for ((d, s), a) in dst.iter_mut().zip(src).zip(row) {
                    let n = s.norm();
                    *d = if n > 0.0 { s * (*a / n) } else { Complex64::new(*a, 0.0) };
                }
            }
            signal = stft.inverse(&spec);
            history.push(self.mel_error(&signal, &target)?);
        }
        Ok((AudioSignal::new(signal, SAMPLE_RATE)?, history))
    }
}

/// Griffin-Lim with the default analysis settings.
pub fn griffin_lim(
    m: &MelTensor,
    stats: &NormalizationStats,
    iterations: usize,
    seed: u64,
) -> Result<AudioSignal> {
    Ok(griffin_lim_with_history(m, stats, iterations, seed)?.0)
}

pub fn griffin_lim_with_history(
    m: &MelTensor,
    stats: &NormalizationStats,
    iterations: usize,
    seed: u64,
) -> Result<(AudioSignal, Vec<f64>)> {
    GriffinLim::new(MelAnalyzer::default())?.run(m, stats, iterations, seed)
}
