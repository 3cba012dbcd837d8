//! One-axis guidance sweeps. Each `(value, chain)` cell is an independent
//! seeded chain; cells run on a bounded thread pool and results are
//! reduced in cell order.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::models::{ClassLabel, Classifier, Denoiser};
use crate::persistence::write_mel;
use crate::sampler::{self, ClassifierGuide, SampleOptions, SampleTrace};
use crate::schedule::NoiseSchedule;
use crate::tensor::{MelTensor, Shape};
use crate::trainer::DataConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    W1,
    W2,
    TStart,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::W1 => "w1",
            Self::W2 => "w2",
            Self::TStart => "t_start",
        }
    }

    fn apply(self, base: &GuidanceConfig, value: f64) -> GuidanceConfig {
        let mut cfg = *base;
        match self {
            Self::W1 => cfg.w1 = value,
            Self::W2 => cfg.w2 = value,
            Self::TStart => cfg.t_start = value as usize,
        }
        cfg
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w1" => Ok(Self::W1),
            "w2" => Ok(Self::W2),
            "t_start" | "t-start" => Ok(Self::TStart),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (w1, w2, t_start)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub fixed: GuidanceConfig,
    /// Chain seeds run at every axis value.
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Parses a comma-separated value list and checks every resulting
    /// configuration against `steps`.
    pub fn parse(axis: &str, values: &str, fixed: GuidanceConfig, seeds: Vec<u64>, steps: usize) -> Result<Self> {
        let axis: SweepAxis = axis.parse()?;
        let values = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("sweep value `{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = Self {
            axis,
            values,
            fixed,
            seeds,
        };
        spec.validate(steps)?;
        Ok(spec)
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one axis value".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        for v in &self.values {
            if self.axis == SweepAxis::TStart && (v.fract() != 0.0 || *v < 0.0) {
                return Err(Error::Config(format!("t_start value {v} is not a step index")));
            }
            self.axis.apply(&self.fixed, *v).validate(steps)?;
        }
        Ok(())
    }

    pub fn config_at(&self, value: f64) -> GuidanceConfig {
        self.axis.apply(&self.fixed, value)
    }
}

/// What the sweep samples with and scores against.
pub struct SweepWorld<'a> {
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub classifier: &'a dyn Classifier,
    /// Labels an output tensor; the agreement with the target label is the
    /// accuracy metric.
    pub evaluator: &'a (dyn Fn(&MelTensor) -> Result<ClassLabel> + Sync),
    pub shape: Shape,
    /// Target label and conditioning of chain `i`.
    pub targets: &'a [(ClassLabel, Option<ConditioningBundle>)],
}

/// Chain `i` aims at label `i % K` and uses the conditioning of dataset
/// example `offset + i`, past the `offset` examples used for training.
pub fn held_out_targets(data: &DataConfig, seed: u64, offset: usize, n: usize) -> Result<Vec<(ClassLabel, Option<ConditioningBundle>)>> {
    let ds = data.generate(offset + n, seed)?;
    Ok(ds.examples[offset..]
        .iter()
        .enumerate()
        .map(|(i, ex)| (ClassLabel(i % data.n_classes), Some(ex.cond.clone())))
        .collect())
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub x0: MelTensor,
    pub trace: SampleTrace,
    pub predicted: ClassLabel,
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub label: ClassLabel,
    pub outcome: std::result::Result<CellOutcome, String>,
}

impl SweepCell {
    pub fn correct(&self) -> bool {
        matches!(&self.outcome, Ok(o) if o.predicted == self.label)
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: f64,
    pub mean_gamma: f64,
    pub median_gamma: f64,
    pub max_gamma: f64,
    pub failures: usize,
    pub unconditional_only: bool,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

fn run_cell(world: &SweepWorld<'_>, cfg: &GuidanceConfig, seed: u64, label: ClassLabel, cond: Option<&ConditioningBundle>) -> Result<CellOutcome> {
    let guide = (cfg.w2 > 0.0).then_some(ClassifierGuide {
        classifier: world.classifier,
        label,
    });
    let out = sampler::sample(
        world.schedule,
        world.denoiser,
        guide,
        cond,
        cfg,
        world.shape,
        seed,
        SampleOptions {
            trace: true,
            ..Default::default()
        },
    )?;
    Ok(CellOutcome {
        predicted: (world.evaluator)(&out.x0)?,
        trace: out.trace.unwrap_or_default(),
        x0: out.x0,
    })
}

/// Runs every cell with at most `jobs` threads. Cell failures are recorded
/// and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, world: &SweepWorld<'_>, jobs: usize) -> Result<SweepReport> {
    spec.validate(world.schedule.steps())?;
    if world.targets.len() < spec.seeds.len() {
        return Err(Error::Config(format!(
            "{} seeds but only {} targets",
            spec.seeds.len(),
            world.targets.len()
        )));
    }
    let jobs = jobs.max(1);
    let plan: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|v| (0..spec.seeds.len()).map(move |i| (*v, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells: Vec<SweepCell> = pool.install(|| {
        plan.par_iter()
            .map(|&(value, i)| {
                let (label, cond) = &world.targets[i];
                let cfg = spec.config_at(value);
                SweepCell {
                    value,
                    seed: spec.seeds[i],
                    label: *label,
                    outcome: run_cell(world, &cfg, spec.seeds[i], *label, cond.as_ref()).map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    let rows = spec
        .values
        .iter()
        .map(|&value| {
            let row: Vec<&SweepCell> = cells.iter().filter(|c| c.value == value).collect();
            let ok: Vec<&CellOutcome> = row.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let mut gammas: Vec<f64> = ok
                .iter()
                .flat_map(|o| o.trace.records.iter().filter(|r| r.gamma > 0.0).map(|r| r.gamma))
                .collect();
            gammas.sort_by(f64::total_cmp);
            SweepRow {
                value,
                accuracy: row.iter().filter(|c| c.correct()).count() as f64 / row.len() as f64,
                mean_gamma: if gammas.is_empty() {
                    0.0
                } else {
                    gammas.iter().sum::<f64>() / gammas.len() as f64
                },
                median_gamma: gammas.get(gammas.len() / 2).copied().unwrap_or(0.0),
                max_gamma: gammas.last().copied().unwrap_or(0.0),
                failures: row.len() - ok.len(),
                unconditional_only: spec.config_at(value).unconditional_only(),
            }
        })
        .collect();
    Ok(SweepReport {
        axis: spec.axis,
        cells,
        rows,
    })
}

impl SweepReport {
    /// Fixed-column summary, one row per axis value.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}\taccuracy\tmean_gamma\tmedian_gamma\tmax_gamma\tfailures\tnote", self.axis.name());
        for r in &self.rows {
            let note = if r.unconditional_only { "unconditional-only" } else { "-" };
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.6e}\t{:.6e}\t{:.6e}\t{}\t{note}",
                r.value, r.accuracy, r.mean_gamma, r.median_gamma, r.max_gamma, r.failures
            );
        }
        s
    }

    pub fn row(&self, value: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    /// Writes `summary.tsv` plus one mel file and trace per successful cell
    /// (`<axis>=<value>_seed<seed>.mel` / `.trace`), and `failures.txt`
    /// listing failed cells.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut failures = String::new();
        for c in &self.cells {
            let stem = format!("{}={}_seed{}", self.axis.name(), c.value, c.seed);
            match &c.outcome {
                Ok(o) => {
                    write_mel(&o.x0, &dir.join(format!("{stem}.mel")))?;
                    o.trace.write(&dir.join(format!("{stem}.trace")))?;
                }
                Err(e) => {
                    let _ = writeln!(failures, "{stem}\t{e}");
                }
            }
        }
        crate::persistence::atomic_write_bytes(&dir.join("summary.tsv"), self.render().as_bytes())?;
        if !failures.is_empty() {
            crate::persistence::atomic_write_bytes(&dir.join("failures.txt"), failures.as_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AnalyticClassifier, AnalyticDenoiser, GaussianWorld};

    #[test]
    fn parse_rejects_empty_and_invalid() {
        let g = GuidanceConfig::default();
        assert!(SweepSpec::parse("w2", "", g, vec![0], 400).is_err());
        assert!(SweepSpec::parse("w2", " , ", g, vec![0], 400).is_err());
        assert!(SweepSpec::parse("w1", "-2", g, vec![0], 400).is_err());
        assert!(SweepSpec::parse("t_start", "12.5", g, vec![0], 400).is_err());
        assert!(SweepSpec::parse("w3", "1", g, vec![0], 400).is_err());
        let s = SweepSpec::parse("w1", "-1, 0, 2", g, vec![0, 1], 400).unwrap();
        assert_eq!(s.values, vec![-1.0, 0.0, 2.0]);
    }

    fn world() -> (NoiseSchedule, AnalyticDenoiser, AnalyticClassifier) {
        let s = NoiseSchedule::linear(60, 1e-3, 0.2).unwrap();
        let w = GaussianWorld::symmetric(vec![1.5, -1.0], 0.1).unwrap();
        (
            s.clone(),
            AnalyticDenoiser {
                world: w.clone(),
                schedule: s.clone(),
                class: None,
            },
            AnalyticClassifier { world: w, schedule: s },
        )
    }

    #[test]
    fn w1_sweep_flags_unconditional_and_is_order_fixed() {
        let (s, d, c) = world();
        let eval = |x: &MelTensor| Ok(ClassLabel(usize::from(x.as_slice()[0] < 0.0)));
        let targets: Vec<_> = (0..4).map(|i| (ClassLabel(i % 2), None)).collect();
        let w = SweepWorld {
            schedule: &s,
            denoiser: &d,
            classifier: &c,
            evaluator: &eval,
            shape: Shape::new(2, 1),
            targets: &targets,
        };
        let fixed = GuidanceConfig {
            t_start: 60,
            ..GuidanceConfig::default()
        };
        let spec = SweepSpec::parse("w1", "-1,0,2", fixed, vec![5, 6, 7, 8], 60).unwrap();
        let a = run_sweep(&spec, &w, 1).unwrap();
        let b = run_sweep(&spec, &w, 3).unwrap();
        assert_eq!(a.render(), b.render());
        assert!(a.row(-1.0).unwrap().unconditional_only);
        assert!(!a.row(2.0).unwrap().unconditional_only);
        assert!(a.rows.iter().all(|r| r.failures == 0));
        assert!(a.render().lines().nth(1).unwrap().ends_with("unconditional-only"));
    }

    #[test]
    fn guidance_raises_accuracy_in_analytic_world() {
        let (s, d, c) = world();
        let eval = |x: &MelTensor| Ok(ClassLabel(usize::from(x.as_slice()[0] < 0.0)));
        let targets: Vec<_> = (0..40).map(|i| (ClassLabel(i % 2), None)).collect();
        let w = SweepWorld {
            schedule: &s,
            denoiser: &d,
            classifier: &c,
            evaluator: &eval,
            shape: Shape::new(2, 1),
            targets: &targets,
        };
        let fixed = GuidanceConfig {
            w1: 0.0,
            t_start: 60,
            ..GuidanceConfig::default()
        };
        let spec = SweepSpec::parse("w2", "0,1.5", fixed, (0..40).collect(), 60).unwrap();
        let r = run_sweep(&spec, &w, 2).unwrap();
        assert!(r.row(1.5).unwrap().accuracy > r.row(0.0).unwrap().accuracy + 0.3);
    }
}
