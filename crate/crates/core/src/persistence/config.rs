//! `key = value` configuration with dotted section keys.
//!
//! ```text
//! # comment
//! schedule.steps = 400
//! guidance.w2 = 1.5   # trailing comments are allowed
//! ```
//!
//! Unknown and repeated keys are errors; absent keys keep their defaults.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::ScheduleParams;
use crate::audiodsp::{FilterbankConfig, MelScale, StftConfig, WindowKind};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::models::{ToyClassifierConfig, ToyDenoiserConfig, DEFAULT_TIME_EMBED_DIM};
use crate::trainer::{ClassifierTrainConfig, DataConfig, DatasetKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DspSection {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub dft_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub window: WindowKind,
    pub mel_scale: MelScale,
    pub griffin_lim_iters: usize,
}

impl Default for DspSection {
    fn default() -> Self {
        let stft = StftConfig::default();
        let fb = FilterbankConfig::default();
        Self {
            sample_rate: crate::audiodsp::SAMPLE_RATE,
            win_length: stft.win,
            hop_length: stft.hop,
            dft_length: stft.dft_len,
            n_mels: fb.n_mels,
            fmin: fb.fmin,
            fmax: fb.fmax,
            window: stft.window,
            mel_scale: fb.scale,
            griffin_lim_iters: crate::audiodsp::DEFAULT_GL_ITERATIONS,
        }
    }
}

impl DspSection {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            win: self.win_length,
            hop: self.hop_length,
            dft_len: self.dft_length,
            window: self.window,
        }
    }

    pub fn filterbank(&self) -> FilterbankConfig {
        FilterbankConfig {
            n_mels: self.n_mels,
            dft_len: self.dft_length,
            sample_rate: self.sample_rate as f64,
            fmin: self.fmin,
            fmax: self.fmax,
            scale: self.mel_scale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSection {
    pub channels: usize,
    pub blocks: usize,
    pub time_embed_dim: usize,
    pub learned_upsample: bool,
    pub classifier_channels: usize,
    pub seed: u64,
    pub null_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ToyDenoiserConfig::default();
        Self {
            channels: d.channels,
            blocks: d.blocks,
            time_embed_dim: DEFAULT_TIME_EMBED_DIM,
            learned_upsample: false,
            classifier_channels: ToyClassifierConfig::default().channels,
            seed: 0,
            null_seed: 7,
        }
    }
}

/// Dataset selection; shape keys left unset take the kind's defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataSection {
    pub kind: DatasetKind,
    pub size: usize,
    pub seed: u64,
    pub n_mels: Option<usize>,
    pub n_frames: Option<usize>,
    pub n_classes: Option<usize>,
    pub global_dim: Option<usize>,
    pub frame_dim: Option<usize>,
    pub noise: Option<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::HarmonicMel,
            size: 2048,
            seed: 1,
            n_mels: None,
            n_frames: None,
            n_classes: None,
            global_dim: None,
            frame_dim: None,
            noise: None,
        }
    }
}

impl DataSection {
    pub fn resolve(&self) -> DataConfig {
        let d = DataConfig::for_kind(self.kind);
        DataConfig {
            kind: self.kind,
            n_mels: self.n_mels.unwrap_or(d.n_mels),
            n_frames: self.n_frames.unwrap_or(d.n_frames),
            n_classes: self.n_classes.unwrap_or(d.n_classes),
            global_dim: self.global_dim.unwrap_or(d.global_dim),
            frame_dim: self.frame_dim.unwrap_or(d.frame_dim),
            noise: self.noise.unwrap_or(d.noise),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Config {
    pub schedule: ScheduleParams,
    pub guidance: GuidanceConfig,
    pub dsp: DspSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub classifier: ClassifierTrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams::default(),
            guidance: GuidanceConfig::default(),
            dsp: DspSection::default(),
            model: ModelSection::default(),
            data: DataSection::default(),
            train: TrainConfig::default(),
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse `{value}` as {what}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("cannot parse `{value}` as a boolean")),
    }
}

fn via<T: FromStr<Err = Error>>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|e: Error| e.to_string())
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::ConfigLine { line, msg };
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, found `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(fail(format!("empty key or value in `{body}`")));
            }
            if let Some(first) = seen.get(key) {
                return Err(fail(format!("key `{key}` already set on line {first}")));
            }
            cfg.set(key, value).map_err(fail)?;
            seen.insert(key.to_string(), line);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "schedule.steps" => self.schedule.steps = parse(v, "a step count")?,
            "schedule.beta_start" => self.schedule.beta_start = parse(v, "a number")?,
            "schedule.beta_end" => self.schedule.beta_end = parse(v, "a number")?,
            "guidance.w1" => self.guidance.w1 = parse(v, "a number")?,
            "guidance.w2" => self.guidance.w2 = parse(v, "a number")?,
            "guidance.t_start" => self.guidance.t_start = parse(v, "a step index")?,
            "guidance.normalize" => self.guidance.normalize = parse_bool(v)?,
            "dsp.sample_rate" => self.dsp.sample_rate = parse(v, "a sample rate")?,
            "dsp.win_length" => self.dsp.win_length = parse(v, "a length")?,
            "dsp.hop_length" => self.dsp.hop_length = parse(v, "a length")?,
            "dsp.dft_length" => self.dsp.dft_length = parse(v, "a length")?,
            "dsp.n_mels" => self.dsp.n_mels = parse(v, "a bin count")?,
            "dsp.fmin" => self.dsp.fmin = parse(v, "a frequency")?,
            "dsp.fmax" => self.dsp.fmax = parse(v, "a frequency")?,
            "dsp.window" => self.dsp.window = via(v)?,
            "dsp.mel_scale" => self.dsp.mel_scale = via(v)?,
            "dsp.griffin_lim_iters" => self.dsp.griffin_lim_iters = parse(v, "an iteration count")?,
            "model.channels" => self.model.channels = parse(v, "a width")?,
            "model.blocks" => self.model.blocks = parse(v, "a block count")?,
            "model.time_embed_dim" => self.model.time_embed_dim = parse(v, "a width")?,
            "model.learned_upsample" => self.model.learned_upsample = parse_bool(v)?,
            "model.classifier_channels" => self.model.classifier_channels = parse(v, "a width")?,
            "model.seed" => self.model.seed = parse(v, "a seed")?,
            "model.null_seed" => self.model.null_seed = parse(v, "a seed")?,
            "data.kind" => self.data.kind = via(v)?,
            "data.size" => self.data.size = parse(v, "a size")?,
            "data.seed" => self.data.seed = parse(v, "a seed")?,
            "data.n_mels" => self.data.n_mels = Some(parse(v, "a bin count")?),
            "data.n_frames" => self.data.n_frames = Some(parse(v, "a frame count")?),
            "data.n_classes" => self.data.n_classes = Some(parse(v, "a class count")?),
            "data.global_dim" => self.data.global_dim = Some(parse(v, "a width")?),
            "data.frame_dim" => self.data.frame_dim = Some(parse(v, "a width")?),
            "data.noise" => self.data.noise = Some(parse(v, "a number")?),
            "train.learning_rate" => self.train.learning_rate = parse(v, "a number")?,
            "train.batch_size" => self.train.batch_size = parse(v, "a batch size")?,
            "train.dropout_p" => self.train.dropout_p = parse(v, "a probability")?,
            "train.loss" => self.train.loss = via(v)?,
            "train.steps" => self.train.step_budget = parse(v, "a step count")?,
            "train.seed" => self.train.seed = parse(v, "a seed")?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(v, "a step count")?,
            "classifier.learning_rate" => self.classifier.learning_rate = parse(v, "a number")?,
            "classifier.batch_size" => self.classifier.batch_size = parse(v, "a batch size")?,
            "classifier.steps" => self.classifier.steps = parse(v, "a step count")?,
            "classifier.seed" => self.classifier.seed = parse(v, "a seed")?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.guidance.validate(self.schedule.steps as usize)?;
        self.dsp.stft().validate()?;
        crate::audiodsp::MelFilterbank::new(self.dsp.filterbank())?;
        self.train.validate()?;
        self.data.resolve().validate()?;
        self.denoiser_config().validate()?;
        Ok(())
    }

    pub fn denoiser_config(&self) -> ToyDenoiserConfig {
        let d = self.data.resolve();
        ToyDenoiserConfig {
            n_mels: d.n_mels,
            channels: self.model.channels,
            blocks: self.model.blocks,
            time_dim: self.model.time_embed_dim,
            global_dim: d.global_dim,
            frame_dim: d.frame_dim,
            learned_upsample: self.model.learned_upsample,
        }
    }

    pub fn classifier_config(&self) -> ToyClassifierConfig {
        let d = self.data.resolve();
        ToyClassifierConfig {
            n_mels: d.n_mels,
            channels: self.model.classifier_channels,
            time_dim: self.model.time_embed_dim,
            n_classes: d.n_classes,
        }
    }

    /// Every key with its current value, in parse order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let b = |v: bool| if v { "true" } else { "false" };
        let window = match self.dsp.window {
            WindowKind::Hann => "hann",
            WindowKind::Hamming => "hamming",
            WindowKind::Rectangular => "rect",
        };
        let scale = match self.dsp.mel_scale {
            MelScale::Htk => "htk",
            MelScale::Slaney => "slaney",
        };
        let _ = writeln!(s, "schedule.steps = {}", self.schedule.steps);
        let _ = writeln!(s, "schedule.beta_start = {:?}", self.schedule.beta_start);
        let _ = writeln!(s, "schedule.beta_end = {:?}", self.schedule.beta_end);
        let _ = writeln!(s, "guidance.w1 = {:?}", self.guidance.w1);
        let _ = writeln!(s, "guidance.w2 = {:?}", self.guidance.w2);
        let _ = writeln!(s, "guidance.t_start = {}", self.guidance.t_start);
        let _ = writeln!(s, "guidance.normalize = {}", b(self.guidance.normalize));
        let _ = writeln!(s, "dsp.sample_rate = {}", self.dsp.sample_rate);
        let _ = writeln!(s, "dsp.win_length = {}", self.dsp.win_length);
        let _ = writeln!(s, "dsp.hop_length = {}", self.dsp.hop_length);
        let _ = writeln!(s, "dsp.dft_length = {}", self.dsp.dft_length);
        let _ = writeln!(s, "dsp.n_mels = {}", self.dsp.n_mels);
        let _ = writeln!(s, "dsp.fmin = {:?}", self.dsp.fmin);
        let _ = writeln!(s, "dsp.fmax = {:?}", self.dsp.fmax);
        let _ = writeln!(s, "dsp.window = {window}");
        let _ = writeln!(s, "dsp.mel_scale = {scale}");
        let _ = writeln!(s, "dsp.griffin_lim_iters = {}", self.dsp.griffin_lim_iters);
        let _ = writeln!(s, "model.channels = {}", self.model.channels);
        let _ = writeln!(s, "model.blocks = {}", self.model.blocks);
        let _ = writeln!(s, "model.time_embed_dim = {}", self.model.time_embed_dim);
        let _ = writeln!(s, "model.learned_upsample = {}", b(self.model.learned_upsample));
        let _ = writeln!(s, "model.classifier_channels = {}", self.model.classifier_channels);
        let _ = writeln!(s, "model.seed = {}", self.model.seed);
        let _ = writeln!(s, "model.null_seed = {}", self.model.null_seed);
        let _ = writeln!(s, "data.kind = {}", self.data.kind);
        let _ = writeln!(s, "data.size = {}", self.data.size);
        let _ = writeln!(s, "data.seed = {}", self.data.seed);
        let d = self.data;
        let opt = |s: &mut String, k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        };
        opt(&mut s, "data.n_mels", d.n_mels.map(|v| v.to_string()));
        opt(&mut s, "data.n_frames", d.n_frames.map(|v| v.to_string()));
        opt(&mut s, "data.n_classes", d.n_classes.map(|v| v.to_string()));
        opt(&mut s, "data.global_dim", d.global_dim.map(|v| v.to_string()));
        opt(&mut s, "data.frame_dim", d.frame_dim.map(|v| v.to_string()));
        opt(&mut s, "data.noise", d.noise.map(|v| format!("{v:?}")));
        let _ = writeln!(s, "train.learning_rate = {:?}", self.train.learning_rate);
        let _ = writeln!(s, "train.batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "train.dropout_p = {:?}", self.train.dropout_p);
        let _ = writeln!(s, "train.loss = {}", self.train.loss);
        let _ = writeln!(s, "train.steps = {}", self.train.step_budget);
        let _ = writeln!(s, "train.seed = {}", self.train.seed);
        let _ = writeln!(s, "train.checkpoint_every = {}", self.train.checkpoint_every);
        let _ = writeln!(s, "classifier.learning_rate = {:?}", self.classifier.learning_rate);
        let _ = writeln!(s, "classifier.batch_size = {}", self.classifier.batch_size);
        let _ = writeln!(s, "classifier.steps = {}", self.classifier.steps);
        let _ = writeln!(s, "classifier.seed = {}", self.classifier.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::LossKind;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        assert_eq!(Config::parse("# only a comment\n\n").unwrap(), Config::default());
    }

    #[test]
    fn rendered_text_roundtrips() {
        let mut c = Config::default();
        c.guidance.w2 = 0.75;
        c.data.n_frames = Some(12);
        c.data.noise = Some(0.125);
        c.dsp.mel_scale = MelScale::Slaney;
        c.train.loss = LossKind::L2;
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn values_and_comments() {
        let c = Config::parse("guidance.w1 = 3 # strong\nschedule.steps=50\nguidance.t_start = 20\n").unwrap();
        assert_eq!(c.guidance.w1, 3.0);
        assert_eq!(c.schedule.steps, 50);
    }

    fn line_of(text: &str) -> usize {
        match Config::parse(text) {
            Err(Error::ConfigLine { line, .. }) => line,
            other => panic!("expected a line error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(line_of("guidance.w1 = 1\nbogus.key = 3\n"), 2);
        assert_eq!(line_of("\n\nguidance.w1 = 1\nguidance.w1 = 2\n"), 4);
        assert_eq!(line_of("no equals sign\n"), 1);
        assert_eq!(line_of("guidance.w1 = abc\n"), 1);
        assert_eq!(line_of("x = 1\n"), 1);
        assert_eq!(line_of("guidance.normalize = maybe\n"), 1);
        assert_eq!(line_of("dsp.window = kaiser\n"), 1);
        assert_eq!(line_of("guidance.w1 =\n"), 1);
    }

    #[test]
    fn cross_field_validation() {
        assert!(Config::parse("schedule.steps = 100\n").is_err());
        assert!(Config::parse("dsp.fmax = 9000\n").is_err());
        assert!(Config::parse("train.dropout_p = 1\n").is_err());
    }
}
