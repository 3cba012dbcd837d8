use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_N_MELS: usize = 80;
pub const DEFAULT_FMIN: f64 = 20.0;
pub const DEFAULT_FMAX: f64 = 8000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MelScale {
    /// `2595 log10(1 + f / 700)`.
    #[default]
    Htk,
    /// Linear below 1 kHz, logarithmic above.
    Slaney,
}

impl std::str::FromStr for MelScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "htk" => Ok(Self::Htk),
            "slaney" => Ok(Self::Slaney),
            other => Err(Error::Config(format!("unknown mel scale `{other}`"))),
        }
    }
}

const SLANEY_F_SP: f64 = 200.0 / 3.0;
const SLANEY_MIN_LOG_HZ: f64 = 1000.0;
const SLANEY_MIN_LOG_MEL: f64 = SLANEY_MIN_LOG_HZ / SLANEY_F_SP;

fn slaney_logstep() -> f64 {
    6.4f64.ln() / 27.0
}

impl MelScale {
    pub fn hz_to_mel(self, hz: f64) -> f64 {
        match self {
            Self::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
            Self::Slaney => {
                if hz >= SLANEY_MIN_LOG_HZ {
                    SLANEY_MIN_LOG_MEL + (hz / SLANEY_MIN_LOG_HZ).ln() / slaney_logstep()
                } else {
                    hz / SLANEY_F_SP
                }
            }
        }
    }

    pub fn mel_to_hz(self, mel: f64) -> f64 {
        match self {
            Self::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
            Self::Slaney => {
                if mel >= SLANEY_MIN_LOG_MEL {
                    SLANEY_MIN_LOG_HZ * (slaney_logstep() * (mel - SLANEY_MIN_LOG_MEL)).exp()
                } else {
                    SLANEY_F_SP * mel
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterbankConfig {
    pub n_mels: usize,
    pub dft_len: usize,
    pub sample_rate: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub scale: MelScale,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            n_mels: DEFAULT_N_MELS,
            dft_len: super::stft::DEFAULT_DFT_LEN,
            sample_rate: super::SAMPLE_RATE as f64,
            fmin: DEFAULT_FMIN,
            fmax: DEFAULT_FMAX,
            scale: MelScale::Htk,
        }
    }
}

/// Triangular filters with peaks equally spaced in mel between `fmin` and
/// `fmax`; peak weight 1, no area normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Matrix,
    /// `n_mels + 2` edge frequencies in Hz; filter `m` spans
    /// `edges[m]..edges[m + 2]` and peaks at `edges[m + 1]`.
    edges: Vec<f64>,
    config: FilterbankConfig,
}

impl MelFilterbank {
    pub fn new(config: FilterbankConfig) -> Result<Self> {
        let nyquist = config.sample_rate / 2.0;
        if config.fmax > nyquist {
            return Err(Error::Config(format!(
                "fmax {} Hz above Nyquist {nyquist} Hz",
                config.fmax
            )));
        }
        if !(config.fmin >= 0.0 && config.fmin < config.fmax) || config.n_mels == 0 || config.dft_len == 0 {
            return Err(Error::Config(format!("invalid filterbank {config:?}")));
        }
        let scale = config.scale;
        let lo = scale.hz_to_mel(config.fmin);
        let hi = scale.hz_to_mel(config.fmax);
        let step = (hi - lo) / (config.n_mels + 1) as f64;
        let mut edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| scale.mel_to_hz(lo + step * i as f64))
            .collect();
        edges[0] = config.fmin;
        edges[config.n_mels + 1] = config.fmax;

        let n_bins = config.dft_len / 2 + 1;
        let bin_hz = config.sample_rate / config.dft_len as f64;
        let mut weights = Matrix::zeros(config.n_mels, n_bins);
        for m in 0..config.n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = weights.row_mut(m);
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let v = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                *w = v.max(0.0);
            }
        }
        Ok(Self { weights, edges, config })
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// `n_mels x n_bins`.
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn centers(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn config(&self) -> &FilterbankConfig {
        &self.config
    }

    /// Projects one magnitude frame onto the mel bins.
    pub fn apply(&self, magnitudes: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.iter_rows()) {
            *o = row.iter().zip(magnitudes).map(|(w, m)| w * m).sum();
        }
    }
}

/// The fixed 80-bin, 20 Hz to 8 kHz bank at 16 kHz with 640-point transforms.
pub fn build_mel_filterbank() -> MelFilterbank {
    MelFilterbank::new(FilterbankConfig::default()).expect("default filterbank is valid")
}
