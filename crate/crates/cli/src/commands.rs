//! Subcommand implementations. Each one loads and checks every input
//! before it creates any output file.

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use guided_mel::audiodsp::{
    read_wav, write_wav, GriffinLim, MelAnalyzer, MelFilterbank, NormalizationStats, MEL_CLIP_FLOOR,
};
use guided_mel::guidance::GuidanceConfig;
use guided_mel::models::{ClassLabel, ToyClassifier};
use guided_mel::persistence::{
    denoiser_checkpoint, load_classifier, load_denoiser, read_checkpoint, read_mel, read_stats, store_classifier,
    write_checkpoint, write_mel, write_stats, Checkpoint, Config,
};
use guided_mel::sampler::{self, ClassifierGuide, ReverseRule, SampleOptions};
use guided_mel::sweep::{held_out_targets, run_sweep, SweepSpec, SweepWorld};
use guided_mel::trainer::{train_classifier, train_loop, DatasetKind, LossKind, Trainer};
use guided_mel::verify::{render_report, run_all, VerifyOptions};
use guided_mel::{Error, Result, Shape};

use crate::GuidanceArgs;

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

/// Fails with an I/O error unless `path` can be created: its parent
/// directory must exist.
fn check_output(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "parent directory does not exist"),
        });
    }
    if path.is_dir() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::IsADirectory, "output path is a directory"),
        });
    }
    Ok(())
}

fn analyzer(cfg: &Config) -> Result<MelAnalyzer> {
    MelAnalyzer::new(cfg.dsp.stft(), MelFilterbank::new(cfg.dsp.filterbank())?)
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// 16 kHz mono 16-bit PCM input.
    #[arg(long)]
    pub wav: PathBuf,
    /// Normalization stats written by `stats`.
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn preprocess(a: PreprocessArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let analyzer = analyzer(&cfg)?;
    let stats = read_stats(&a.stats)?;
    let signal = read_wav(&a.wav)?;
    check_output(&a.out)?;
    let m = analyzer.mel_spectrogram(&signal, &stats)?;
    write_mel(&m, &a.out)?;
    println!("{}: {} mels x {} frames", a.out.display(), m.n_mels(), m.n_frames());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory scanned (non-recursively) for `.wav` files.
    pub dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn stats(a: StatsArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let analyzer = analyzer(&cfg)?;
    let io_err = |e| Error::Io {
        path: a.dir.clone(),
        source: e,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.dir)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<io::Result<_>>()
        .map_err(io_err)?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no .wav files in {}", a.dir.display())));
    }
    let mels = files
        .iter()
        .map(|f| analyzer.log_mel(&read_wav(f)?))
        .collect::<Result<Vec<_>>>()?;
    check_output(&a.out)?;
    let s = NormalizationStats::from_log_mels(&mels)?;
    write_stats(&a.out, &s)?;
    println!("{} files: min {:?} max {:?}", files.len(), s.min(), s.max());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gaussian-classes or harmonic-mel.
    #[arg(long)]
    pub dataset_kind: Option<DatasetKind>,
    /// Total optimizer steps (including resumed ones).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path, rewritten at every save.
    #[arg(long)]
    pub out: PathBuf,
    /// l1 or l2.
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub dropout_p: Option<f64>,
    /// Classifier optimizer steps run after the denoiser (0 skips it).
    #[arg(long)]
    pub classifier_steps: Option<u64>,
    /// Continue from a checkpoint; its stored config is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Normalization stats stored in the checkpoint.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

/// Stats stored when none are given: the clip floor to a log energy of 2.
fn default_stats() -> NormalizationStats {
    NormalizationStats::new(MEL_CLIP_FLOOR.ln(), 2.0).expect("ordered")
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let (mut cfg, mut trainer, mut classifier) = match &a.resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            let (cfg, trainer) = load_denoiser(&ck)?;
            let clf = load_classifier(&ck, &cfg)?;
            (cfg, trainer, clf)
        }
        None => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(k) = a.dataset_kind {
                cfg.data.kind = k;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            if let Some(l) = a.loss {
                cfg.train.loss = l;
            }
            if let Some(p) = a.dropout_p {
                cfg.train.dropout_p = p;
            }
            if let Some(s) = a.classifier_steps {
                cfg.classifier.steps = s;
            }
            cfg.validate()?;
            let data = cfg.data.resolve();
            let model = guided_mel::models::ToyDenoiser::new(
                cfg.denoiser_config(),
                cfg.model.seed,
                cfg.model.null_seed,
                data.cond_frames(),
            )?;
            (cfg, Trainer::new(model), None)
        }
    };
    if let Some(s) = a.steps {
        cfg.train.step_budget = s;
    }
    cfg.validate()?;
    let stats = match &a.stats {
        Some(p) => read_stats(p)?,
        None => default_stats(),
    };
    let schedule = cfg.schedule.build()?;
    let data = cfg.data.resolve();
    let dataset = data.generate(cfg.data.size, cfg.data.seed)?;
    check_output(&a.out)?;

    let save = |ck: &Checkpoint| write_checkpoint(ck, &a.out);
    let carried = classifier.clone();
    let mut sink = |t: &Trainer<_>| {
        let mut ck = denoiser_checkpoint(&cfg, t, stats)?;
        if let Some(c) = &carried {
            store_classifier(&mut ck, c)?;
        }
        save(&ck)
    };
    let losses = train_loop(&mut trainer, &dataset, &schedule, &cfg.train, &mut sink)?;
    for (i, l) in losses.iter().enumerate() {
        let step = trainer.step - losses.len() as u64 + i as u64 + 1;
        if step % 100 == 0 || step == trainer.step {
            eprintln!("step {step} loss {l:.6}");
        }
    }
    if classifier.is_none() && cfg.classifier.steps > 0 {
        let mut c = ToyClassifier::new(cfg.classifier_config(), cfg.classifier.seed)?;
        let cl = train_classifier(&mut c, &dataset, &schedule, &cfg.classifier)?;
        eprintln!("classifier loss {:.6}", cl.last().copied().unwrap_or(f64::NAN));
        classifier = Some(c);
        let mut ck = denoiser_checkpoint(&cfg, &trainer, stats)?;
        store_classifier(&mut ck, classifier.as_ref().expect("set above"))?;
        save(&ck)?;
    }
    println!(
        "{}: step {} loss {}",
        a.out.display(),
        trainer.step,
        losses.last().map_or("-".into(), |l| format!("{l:.6}"))
    );
    Ok(ExitCode::SUCCESS)
}

fn apply_guidance(base: GuidanceConfig, g: &GuidanceArgs) -> GuidanceConfig {
    GuidanceConfig {
        w1: g.w1.unwrap_or(base.w1),
        w2: g.w2.unwrap_or(base.w2),
        t_start: g.t_start.unwrap_or(base.t_start),
        normalize: base.normalize && !g.no_guidance_norm,
    }
}

/// Loads the denoiser and its classifier (from `classifier` if given,
/// else from the same checkpoint).
fn load_models(
    checkpoint: &Path,
    classifier: Option<&Path>,
) -> Result<(Config, Trainer<guided_mel::models::ToyDenoiser>, Option<ToyClassifier>)> {
    let ck = read_checkpoint(checkpoint)?;
    let (cfg, trainer) = load_denoiser(&ck)?;
    let clf = match classifier {
        Some(p) => {
            let cck = read_checkpoint(p)?;
            let c = load_classifier(&cck, &cfg)?;
            if c.is_none() {
                return Err(Error::MissingTensor(format!("no classifier in {}", p.display())));
            }
            c
        }
        None => load_classifier(&ck, &cfg)?,
    };
    Ok((cfg, trainer, clf))
}

#[derive(Args)]
pub struct SampleArgs {
    /// Guidance defaults; the checkpoint's own config when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Checkpoint holding the guidance classifier.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Target class for classifier guidance.
    #[arg(long)]
    pub label: Option<usize>,
    /// Condition on held-out example `i` instead of the null tokens.
    #[arg(long)]
    pub cond_index: Option<usize>,
    /// Mel bins x frames; the training shape when absent.
    #[arg(long)]
    pub shape: Option<Shape>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, hide = true)]
    pub cumulative_divisor: bool,
}

pub fn sample(a: SampleArgs) -> Result<ExitCode> {
    let (ck_cfg, trainer, classifier) = load_models(&a.checkpoint, a.classifier.as_deref())?;
    let base = match &a.config {
        Some(p) => Config::load(p)?.guidance,
        None => ck_cfg.guidance,
    };
    let g = apply_guidance(base, &a.guidance);
    let schedule = ck_cfg.schedule.build()?;
    g.validate(schedule.steps())?;
    let data = ck_cfg.data.resolve();
    let shape = a.shape.unwrap_or(data.shape());
    if shape.n_mels != trainer.model.config.n_mels {
        return Err(Error::DimensionMismatch {
            expected: trainer.model.config.n_mels,
            got: shape.n_mels,
        });
    }
    let guide = if g.w2 > 0.0 {
        let classifier = classifier
            .as_ref()
            .ok_or_else(|| Error::Config("w2 > 0 needs a classifier; pass --classifier or --w2 0".into()))?;
        let label = a
            .label
            .ok_or_else(|| Error::Config("w2 > 0 needs --label".into()))?;
        let label = ClassLabel(label);
        label.check(classifier.config.n_classes)?;
        Some((classifier, label))
    } else {
        None
    };
    let cond = match a.cond_index {
        Some(i) => held_out_targets(&data, ck_cfg.data.seed, ck_cfg.data.size + i, 1)?
            .pop()
            .and_then(|(_, c)| c),
        None => None,
    };
    check_output(&a.out)?;
    if let Some(t) = &a.trace {
        check_output(t)?;
    }
    let opts = SampleOptions {
        trace: a.trace.is_some(),
        rule: if a.cumulative_divisor {
            ReverseRule::CumulativeDivisor
        } else {
            ReverseRule::Ancestral
        },
    };
    let out = sampler::sample(
        &schedule,
        &trainer.model,
        guide.map(|(c, label)| ClassifierGuide { classifier: c, label }),
        cond.as_ref(),
        &g,
        shape,
        a.seed,
        opts,
    )?;
    write_mel(&out.x0, &a.out)?;
    if let (Some(p), Some(tr)) = (&a.trace, &out.trace) {
        tr.write(p)?;
    }
    if let Some((c, _)) = guide {
        let label = c.predict(&out.x0, 1)?;
        eprintln!("classifier label at t=1: {}", label.0);
    }
    println!("{}: {}", a.out.display(), shape);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// w1, w2 or t_start.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    /// Chains per axis value.
    #[arg(long, default_value_t = 8)]
    pub seeds: u64,
    /// Seed of the first chain; chain `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Concurrent cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let (cfg, trainer, classifier) = load_models(&a.checkpoint, a.classifier.as_deref())?;
    let classifier =
        classifier.ok_or_else(|| Error::Config("sweep needs a classifier; pass --classifier".into()))?;
    let schedule = cfg.schedule.build()?;
    let fixed = apply_guidance(cfg.guidance, &a.guidance);
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let spec = SweepSpec::parse(&a.axis, &a.values, fixed, seeds, schedule.steps())?;
    let data = cfg.data.resolve();
    let targets = held_out_targets(&data, cfg.data.seed, cfg.data.size, spec.seeds.len())?;
    let centroids = data.generate(cfg.data.size, cfg.data.seed)?.centroids()?;
    let evaluator = |x: &guided_mel::MelTensor| centroids.classify(x);
    if a.out_dir.exists() && !a.out_dir.is_dir() {
        return Err(Error::Io {
            path: a.out_dir.clone(),
            source: io::Error::new(io::ErrorKind::AlreadyExists, "not a directory"),
        });
    }
    let world = SweepWorld {
        schedule: &schedule,
        denoiser: &trainer.model,
        classifier: &classifier,
        evaluator: &evaluator,
        shape: data.shape(),
        targets: &targets,
    };
    let report = run_sweep(&spec, &world, a.jobs)?;
    report.write(&a.out_dir)?;
    print!("{}", report.render());
    let failed: usize = report.rows.iter().map(|r| r.failures).sum();
    if failed > 0 {
        eprintln!("{failed} cells failed; see {}", a.out_dir.join("failures.txt").display());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    pub seed: u64,
    /// Negative control: sample with a schedule the oracle does not use.
    #[arg(long, hide = true)]
    pub corrupt_schedule: bool,
    /// Chains in the sampling-moment check.
    #[arg(long, hide = true)]
    pub moment_samples: Option<usize>,
}

pub fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let d = VerifyOptions::default();
    let opts = VerifyOptions {
        seed: a.seed,
        moment_samples: a.moment_samples.unwrap_or(d.moment_samples),
        corrupt_schedule: a.corrupt_schedule,
        ..d
    };
    let results = run_all(&opts);
    for r in &results {
        eprintln!("{:>8.3}s {}", r.elapsed.as_secs_f64(), r.name);
    }
    print!("{}", render_report(&results));
    Ok(if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Args)]
pub struct GriffinLimArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mel: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Iteration count; the config value when absent.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn griffinlim(a: GriffinLimArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let gl = GriffinLim::new(analyzer(&cfg)?)?;
    let m = read_mel(&a.mel)?;
    let stats = read_stats(&a.stats)?;
    check_output(&a.out)?;
    let iters = a.iters.unwrap_or(cfg.dsp.griffin_lim_iters);
    let (signal, history) = gl.run(&m, &stats, iters, a.seed)?;
    write_wav(&a.out, &signal)?;
    println!(
        "{}: {} samples, mel error {}",
        a.out.display(),
        signal.len(),
        history.last().map_or("-".into(), |e| format!("{e:.6}"))
    );
    Ok(ExitCode::SUCCESS)
}
