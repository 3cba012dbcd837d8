//! Small residual noise predictor.
//!
//! The network runs per frame over the mel bins. A shared time embedding
//! (sinusoidal encoding followed by two fully-connected layers) is projected
//! into every residual block, and the upsampled fused conditioning row for
//! the frame is projected and added inside each block:
//!
//! ```text
//! tau   = silu(W_t2 silu(W_t1 emb(t)))
//! h_0   = W_in x_n
//! y_k   = h_k + T_k tau
//! a_k   = M_k y_k + C_k v_n
//! h_k+1 = h_k + O_k silu(a_k)
//! eps_n = W_out silu(h_L)
//! ```

use std::borrow::Cow;

use crate::conditioning::{self, ConditioningBundle, LearnedUpsampler, Upsampler, UPSAMPLE_FACTOR};
use crate::error::{Error, Result};
use crate::models::layers::{silu_backward, silu_vec, Linear, Parameters};
use crate::models::{time_embedding, Denoiser, DEFAULT_TIME_EMBED_DIM};
use crate::rng::{self, Domain};
use crate::tensor::{EpsEstimate, Matrix, MelTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyDenoiserConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub global_dim: usize,
    pub frame_dim: usize,
    pub learned_upsample: bool,
}

impl Default for ToyDenoiserConfig {
    fn default() -> Self {
        Self {
            n_mels: 16,
            channels: 64,
            blocks: 3,
            time_dim: DEFAULT_TIME_EMBED_DIM,
            global_dim: 4,
            frame_dim: 4,
            learned_upsample: false,
        }
    }
}

impl ToyDenoiserConfig {
    pub fn cond_dim(&self) -> usize {
        self.global_dim + self.frame_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.channels == 0 || self.global_dim == 0 || self.frame_dim == 0 {
            return Err(Error::TopologyMismatch(format!("degenerate denoiser config {self:?}")));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::OddEmbeddingWidth(self.time_dim));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub time: Linear,
    pub mix: Linear,
    pub cond: Linear,
    pub out: Linear,
}

impl ResBlock {
    fn zeros_like(&self) -> Self {
        Self {
            time: self.time.zeros_like(),
            mix: self.mix.zeros_like(),
            cond: self.cond.zeros_like(),
            out: self.out.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiserParams {
    pub time1: Linear,
    pub time2: Linear,
    pub input: Linear,
    pub blocks: Vec<ResBlock>,
    pub output: Linear,
    pub upsampler: Option<LearnedUpsampler>,
}

impl ToyDenoiserParams {
    pub fn zeros(cfg: &ToyDenoiserConfig) -> Self {
        let c = cfg.channels;
        Self {
            time1: Linear::zeros(cfg.time_dim, c),
            time2: Linear::zeros(c, c),
            input: Linear::zeros(cfg.n_mels, c),
            blocks: (0..cfg.blocks)
                .map(|_| ResBlock {
                    time: Linear::zeros(c, c),
                    mix: Linear::zeros(c, c),
                    cond: Linear::zeros(cfg.cond_dim(), c),
                    out: Linear::zeros(c, c),
                })
                .collect(),
            output: Linear::zeros(c, cfg.n_mels),
            upsampler: cfg
                .learned_upsample
                .then(|| LearnedUpsampler::identity(cfg.cond_dim()).zeros_like()),
        }
    }

    /// Seeded random initialization; upsampling kernels start at identity.
    pub fn init(cfg: &ToyDenoiserConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::ParamInit, 0);
        let c = cfg.channels;
        let residual_gain = 1.0 / (cfg.blocks.max(1) as f64).sqrt();
        Self {
            time1: Linear::init(cfg.time_dim, c, 1.0, &mut rng),
            time2: Linear::init(c, c, 1.0, &mut rng),
            input: Linear::init(cfg.n_mels, c, 1.0, &mut rng),
            blocks: (0..cfg.blocks)
                .map(|_| ResBlock {
                    time: Linear::init(c, c, 1.0, &mut rng),
                    mix: Linear::init(c, c, 1.0, &mut rng),
                    cond: Linear::init(cfg.cond_dim(), c, 1.0, &mut rng),
                    out: Linear::init(c, c, residual_gain, &mut rng),
                })
                .collect(),
            output: Linear::init(c, cfg.n_mels, 0.5, &mut rng),
            upsampler: cfg.learned_upsample.then(|| LearnedUpsampler::identity(cfg.cond_dim())),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            time1: self.time1.zeros_like(),
            time2: self.time2.zeros_like(),
            input: self.input.zeros_like(),
            blocks: self.blocks.iter().map(ResBlock::zeros_like).collect(),
            output: self.output.zeros_like(),
            upsampler: self.upsampler.as_ref().map(LearnedUpsampler::zeros_like),
        }
    }
}

impl Parameters for ToyDenoiserParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.time1.visit("time1", f);
        self.time2.visit("time2", f);
        self.input.visit("input", f);
        for (k, b) in self.blocks.iter().enumerate() {
            b.time.visit(&format!("block{k}.time"), f);
            b.mix.visit(&format!("block{k}.mix"), f);
            b.cond.visit(&format!("block{k}.cond"), f);
            b.out.visit(&format!("block{k}.out"), f);
        }
        self.output.visit("output", f);
        if let Some(up) = &self.upsampler {
            for (s, stage) in up.stages.iter().enumerate() {
                for (k, kern) in stage.kernels.iter().enumerate() {
                    f(&format!("upsample{s}.kernel{k}"), &[kern.rows(), kern.cols()], kern.as_slice());
                }
                f(&format!("upsample{s}.bias"), &[stage.bias.len()], &stage.bias);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.time1.visit_mut("time1", f);
        self.time2.visit_mut("time2", f);
        self.input.visit_mut("input", f);
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.time.visit_mut(&format!("block{k}.time"), f);
            b.mix.visit_mut(&format!("block{k}.mix"), f);
            b.cond.visit_mut(&format!("block{k}.cond"), f);
            b.out.visit_mut(&format!("block{k}.out"), f);
        }
        self.output.visit_mut("output", f);
        if let Some(up) = &mut self.upsampler {
            for (s, stage) in up.stages.iter_mut().enumerate() {
                for (k, kern) in stage.kernels.iter_mut().enumerate() {
                    f(&format!("upsample{s}.kernel{k}"), kern.as_mut_slice());
                }
                f(&format!("upsample{s}.bias"), &mut stage.bias);
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
struct FrameTape {
    x: Vec<f64>,
    /// Block inputs `h_0..h_L`.
    hs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    s_final: Vec<f64>,
}

#[derive(Clone, Debug)]
struct TapeData {
    temb: Vec<f64>,
    a1: Vec<f64>,
    s1: Vec<f64>,
    a2: Vec<f64>,
    tau: Vec<f64>,
    fused: Matrix,
    stage0: Option<Matrix>,
    v_up: Matrix,
    frames: Vec<FrameTape>,
}

/// Activations recorded by a training-mode forward pass. The default tape
/// is empty and cannot be differentiated.
#[derive(Clone, Debug, Default)]
pub struct Tape(Option<Box<TapeData>>);

impl Tape {
    pub fn is_recorded(&self) -> bool {
        self.0.is_some()
    }
}

/// Parameters plus the persisted null tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser {
    pub config: ToyDenoiserConfig,
    pub params: ToyDenoiserParams,
    null: ConditioningBundle,
    null_seed: u64,
}

impl ToyDenoiser {
    /// Fresh model. Null tokens are drawn once for `cond_frames` conditioning
    /// frames.
    pub fn new(config: ToyDenoiserConfig, param_seed: u64, null_seed: u64, cond_frames: usize) -> Result<Self> {
        config.validate()?;
        let null = conditioning::null_condition(config.global_dim, config.frame_dim, cond_frames, null_seed)?;
        Ok(Self {
            config,
            params: ToyDenoiserParams::init(&config, param_seed),
            null,
            null_seed,
        })
    }

    pub fn from_parts(
        config: ToyDenoiserConfig,
        params: ToyDenoiserParams,
        null: ConditioningBundle,
        null_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let model = Self {
            config,
            params,
            null,
            null_seed,
        };
        model.check_bundle(&model.null)?;
        if model.params.blocks.len() != config.blocks {
            return Err(Error::TopologyMismatch("block count differs from config".into()));
        }
        Ok(model)
    }

    pub fn null_bundle(&self) -> &ConditioningBundle {
        &self.null
    }

    pub fn null_seed(&self) -> u64 {
        self.null_seed
    }

    fn check_bundle(&self, b: &ConditioningBundle) -> Result<()> {
        if b.global_dim() != self.config.global_dim || b.frame_dim() != self.config.frame_dim {
            return Err(Error::TopologyMismatch(format!(
                "conditioning dims {}+{} but model expects {}+{}",
                b.frame_dim(),
                b.global_dim(),
                self.config.frame_dim,
                self.config.global_dim
            )));
        }
        Ok(())
    }

    /// The bundle actually fed to the network for `n_frames` mel frames.
    /// Null tokens are regenerated from their seed when the requested length
    /// differs from the persisted one.
    pub fn resolve_cond<'a>(&'a self, cond: Option<&'a ConditioningBundle>, n_frames: usize) -> Result<Cow<'a, ConditioningBundle>> {
        match cond {
            Some(b) => {
                self.check_bundle(b)?;
                Ok(Cow::Borrowed(b))
            }
            None if self.null.n_frames() * UPSAMPLE_FACTOR == n_frames => Ok(Cow::Borrowed(&self.null)),
            None => {
                if n_frames % UPSAMPLE_FACTOR != 0 {
                    return Err(Error::TopologyMismatch(format!(
                        "{n_frames} mel frames is not a multiple of {UPSAMPLE_FACTOR}"
                    )));
                }
                Ok(Cow::Owned(conditioning::null_condition(
                    self.config.global_dim,
                    self.config.frame_dim,
                    n_frames / UPSAMPLE_FACTOR,
                    self.null_seed,
                )?))
            }
        }
    }

    fn run(&self, x_t: &MelTensor, t: usize, cond: Option<&ConditioningBundle>, record: bool) -> Result<(EpsEstimate, Tape)> {
        let cfg = &self.config;
        let p = &self.params;
        if x_t.n_mels() != cfg.n_mels {
            return Err(Error::TopologyMismatch(format!(
                "input has {} mel bins, model expects {}",
                x_t.n_mels(),
                cfg.n_mels
            )));
        }
        let bundle = self.resolve_cond(cond, x_t.n_frames())?;
        let fused = bundle.fused().clone();
        let (stage0, v_up) = match &p.upsampler {
            Some(l) => {
                let s0 = l.stages[0].forward(&fused)?;
                let up = l.stages[1].forward(&s0)?;
                (Some(s0), up)
            }
            None => (None, conditioning::temporal_upsample(&fused, &Upsampler::Repeat)?),
        };
        if v_up.rows() != x_t.n_frames() {
            return Err(Error::TopologyMismatch(format!(
                "conditioning covers {} frames, input has {}",
                v_up.rows(),
                x_t.n_frames()
            )));
        }

        let temb = time_embedding(t, cfg.time_dim)?;
        let a1 = p.time1.forward(&temb);
        let s1 = silu_vec(&a1);
        let a2 = p.time2.forward(&s1);
        let tau = silu_vec(&a2);
        // The per-block time projection is shared across frames.
        let tproj: Vec<Vec<f64>> = p.blocks.iter().map(|b| b.time.forward(&tau)).collect();

        let mut out = MelTensor::zeros(x_t.shape());
        let mut frames = Vec::with_capacity(if record { x_t.n_frames() } else { 0 });
        for n in 0..x_t.n_frames() {
            let x = x_t.frame(n);
            let v = v_up.row(n);
            let mut h = p.input.forward(x);
            let mut ft = FrameTape::default();
            for (b, tp) in p.blocks.iter().zip(&tproj) {
                let y: Vec<f64> = h.iter().zip(tp).map(|(a, b)| a + b).collect();
                let mut a = b.mix.forward(&y);
                b.cond.forward_accumulate(v, &mut a);
                for (ai, bi) in a.iter_mut().zip(&b.cond.bias) {
                    *ai += bi;
                }
                let z = silu_vec(&a);
                let delta = b.out.forward(&z);
                let next: Vec<f64> = h.iter().zip(&delta).map(|(a, b)| a + b).collect();
                if record {
                    ft.hs.push(std::mem::replace(&mut h, next));
                    ft.ys.push(y);
                    ft.pre.push(a);
                    ft.zs.push(z);
                } else {
                    h = next;
                }
            }
            let s = silu_vec(&h);
            let eps = p.output.forward(&s);
            out.frame_mut(n).copy_from_slice(&eps);
            if record {
                ft.x = x.to_vec();
                ft.hs.push(h);
                ft.s_final = s;
                frames.push(ft);
            }
        }
        let tape = if record {
            Tape(Some(Box::new(TapeData {
                temb,
                a1,
                s1,
                a2,
                tau,
                fused,
                stage0,
                v_up,
                frames,
            })))
        } else {
            Tape::default()
        };
        Ok((out, tape))
    }

    pub fn forward(&self, x_t: &MelTensor, t: usize, cond: Option<&ConditioningBundle>) -> Result<EpsEstimate> {
        Ok(self.run(x_t, t, cond, false)?.0)
    }

    /// Forward pass that records the activations needed by [`Self::backward`].
    pub fn forward_train(&self, x_t: &MelTensor, t: usize, cond: Option<&ConditioningBundle>) -> Result<(EpsEstimate, Tape)> {
        self.run(x_t, t, cond, true)
    }

    /// Gradient of `sum(upstream * eps)` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, upstream: &MelTensor) -> Result<ToyDenoiserParams> {
        let mut grads = self.params.zeros_like();
        self.backward_accumulate(tape, upstream, &mut grads)?;
        Ok(grads)
    }

    pub fn backward_accumulate(&self, tape: &Tape, upstream: &MelTensor, grads: &mut ToyDenoiserParams) -> Result<()> {
        let data = tape.0.as_deref().ok_or(Error::BackwardWithoutForward)?;
        if upstream.n_frames() != data.frames.len() || upstream.n_mels() != self.config.n_mels {
            return Err(Error::shape(
                format!("{}x{}", self.config.n_mels, data.frames.len()),
                upstream.shape(),
            ));
        }
        let p = &self.params;
        let c = self.config.channels;
        let learned = p.upsampler.is_some();
        let mut dtproj = vec![vec![0.0; c]; p.blocks.len()];
        let mut dv_up = learned.then(|| Matrix::zeros(data.v_up.rows(), data.v_up.cols()));

        for (n, ft) in data.frames.iter().enumerate() {
            let g = upstream.frame(n);
            let ds = p.output.backward(&ft.s_final, g, &mut grads.output);
            let mut dh = silu_backward(&ft.hs[p.blocks.len()], &ds);
            let v = data.v_up.row(n);
            for k in (0..p.blocks.len()).rev() {
                let b = &p.blocks[k];
                let gb = &mut grads.blocks[k];
                let dz = b.out.backward(&ft.zs[k], &dh, &mut gb.out);
                let da = silu_backward(&ft.pre[k], &dz);
                let dy = b.mix.backward(&ft.ys[k], &da, &mut gb.mix);
                match dv_up.as_mut() {
                    Some(dv) => b.cond.backward_into(v, &da, &mut gb.cond, dv.row_mut(n)),
                    None => b.cond.backward_params(v, &da, &mut gb.cond),
                }
                for i in 0..c {
                    dh[i] += dy[i];
                    dtproj[k][i] += dy[i];
                }
            }
            p.input.backward_params(&ft.x, &dh, &mut grads.input);
        }

        let mut dtau = vec![0.0; c];
        for (k, b) in p.blocks.iter().enumerate() {
            b.time.backward_into(&data.tau, &dtproj[k], &mut grads.blocks[k].time, &mut dtau);
        }
        let da2 = silu_backward(&data.a2, &dtau);
        let ds1 = p.time2.backward(&data.s1, &da2, &mut grads.time2);
        let da1 = silu_backward(&data.a1, &ds1);
        p.time1.backward_params(&data.temb, &da1, &mut grads.time1);

        if let (Some(up), Some(gup), Some(dv), Some(s0)) =
            (&p.upsampler, grads.upsampler.as_mut(), dv_up.as_ref(), data.stage0.as_ref())
        {
            let ds0 = up.stages[1].backward(s0, dv, &mut gup.stages[1]);
            up.stages[0].backward(&data.fused, &ds0, &mut gup.stages[0]);
        }
        Ok(())
    }
}

impl Denoiser for ToyDenoiser {
    fn predict_eps(&self, x_t: &MelTensor, t: usize, cond: Option<&ConditioningBundle>) -> Result<EpsEstimate> {
        self.forward(x_t, t, cond)
    }
}
