//! Mapping between trained models and checkpoint tensors.
//!
//! Tensor names: `denoiser.<param>`, `adam.m.<param>`, `adam.v.<param>`,
//! `classifier.<param>`. The full run configuration is stored as the
//! `config` attribute in [`Config::to_text`] form.

use super::{Checkpoint, Config, NamedTensor};
use crate::audiodsp::NormalizationStats;
use crate::error::{Error, Result};
use crate::models::{Parameters, ToyClassifier, ToyClassifierParams, ToyDenoiser, ToyDenoiserParams};
use crate::trainer::{Adam, AdamConfig, Trainer};

pub const DENOISER_PREFIX: &str = "denoiser.";
pub const CLASSIFIER_PREFIX: &str = "classifier.";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

fn layout(params: &dyn Parameters) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    params.visit(&mut |name, dims, _| out.push((name.to_string(), dims.to_vec())));
    out
}

fn store_flat(ck: &mut Checkpoint, prefix: &str, params: &dyn Parameters, flat: &[f64]) -> Result<()> {
    let mut off = 0;
    for (name, dims) in layout(params) {
        let n: usize = dims.iter().product();
        ck.push_tensor(NamedTensor::from_f64(format!("{prefix}{name}"), &dims, &flat[off..off + n])?);
        off += n;
    }
    Ok(())
}

fn load_flat(ck: &Checkpoint, prefix: &str, params: &dyn Parameters) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(params.param_count());
    for (name, dims) in layout(params) {
        let t = ck.require_tensor(&format!("{prefix}{name}"))?;
        if t.data.len() != dims.iter().product::<usize>() {
            return Err(Error::TopologyMismatch(format!("`{prefix}{name}` has the wrong size")));
        }
        flat.extend(t.to_f64());
    }
    Ok(flat)
}

/// Checkpoint of a denoiser run: parameters, optimizer moments, null
/// tokens, step counter and configuration.
pub fn denoiser_checkpoint(config: &Config, trainer: &Trainer<ToyDenoiser>, stats: NormalizationStats) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(config.schedule, stats);
    ck.step = trainer.step;
    ck.set_attr("config", config.to_text());
    ck.set_attr("adam.t", trainer.adam.t);
    let model = &trainer.model;
    ck.set_null(model.null_bundle(), model.null_seed())?;
    ck.store_params(DENOISER_PREFIX, &model.params)?;
    store_flat(&mut ck, ADAM_M, &model.params, &trainer.adam.m)?;
    store_flat(&mut ck, ADAM_V, &model.params, &trainer.adam.v)?;
    Ok(ck)
}

/// The stored run configuration.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<Config> {
    let cfg = Config::parse(ck.require_attr("config")?)?;
    if cfg.schedule != ck.schedule {
        return Err(Error::Config("checkpoint schedule disagrees with its config".into()));
    }
    Ok(cfg)
}

/// Rebuilds the trainer state saved by [`denoiser_checkpoint`].
pub fn load_denoiser(ck: &Checkpoint) -> Result<(Config, Trainer<ToyDenoiser>)> {
    let config = checkpoint_config(ck)?;
    let dcfg = config.denoiser_config();
    let mut params = ToyDenoiserParams::zeros(&dcfg);
    ck.load_params(DENOISER_PREFIX, &mut params)?;
    let null = ck
        .null_bundle()?
        .ok_or_else(|| Error::MissingTensor("null tokens".into()))?;
    let model = ToyDenoiser::from_parts(dcfg, params, null, ck.null.seed)?;
    let adam = Adam {
        config: AdamConfig::default(),
        m: load_flat(ck, ADAM_M, &model.params)?,
        v: load_flat(ck, ADAM_V, &model.params)?,
        t: ck
            .require_attr("adam.t")?
            .parse()
            .map_err(|_| Error::Config("bad `adam.t` attribute".into()))?,
    };
    let trainer = Trainer::resume(model, adam, ck.step)?;
    Ok((config, trainer))
}

pub fn store_classifier(ck: &mut Checkpoint, classifier: &ToyClassifier) -> Result<()> {
    ck.set_attr("classifier.trained", classifier.trained);
    ck.store_params(CLASSIFIER_PREFIX, &classifier.params)
}

/// The classifier stored next to the denoiser, if any.
pub fn load_classifier(ck: &Checkpoint, config: &Config) -> Result<Option<ToyClassifier>> {
    if ck.attr("classifier.trained").is_none() {
        return Ok(None);
    }
    let cfg = config.classifier_config();
    let mut params = ToyClassifierParams::init(&cfg, 0).zeros_like();
    ck.load_params(CLASSIFIER_PREFIX, &mut params)?;
    Ok(Some(ToyClassifier {
        config: cfg,
        params,
        trained: ck.attr("classifier.trained") == Some("true"),
    }))
}
