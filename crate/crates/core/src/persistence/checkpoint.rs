use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::atomic_write_bytes;
use crate::audiodsp::NormalizationStats;
use crate::conditioning::{null_from_tokens, ConditioningBundle};
use crate::error::{Error, Result};
use crate::models::Parameters;
use crate::schedule::NoiseSchedule;
use crate::tensor::Matrix;

pub const CKPT_MAGIC: [u8; 4] = *b"CKPT";
pub const CKPT_VERSION: u32 = 1;

pub const NULL_GLOBAL: &str = "null.global";
pub const NULL_FRAMES: &str = "null.frames";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams {
    pub steps: u32,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps as usize, self.beta_start, self.beta_end)
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: crate::schedule::DEFAULT_STEPS as u32,
            beta_start: crate::schedule::DEFAULT_BETA_START,
            beta_end: crate::schedule::DEFAULT_BETA_END,
        }
    }
}

/// Dimensions and seed of the null conditioning. All zero for checkpoints
/// of unconditioned networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NullTokenMeta {
    pub global_dim: u32,
    pub frame_dim: u32,
    pub frames: u32,
    pub seed: u64,
}

impl NullTokenMeta {
    pub fn is_present(&self) -> bool {
        self.global_dim > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().map(|d| *d as usize).product();
        let name = name.into();
        if n != data.len() {
            return Err(Error::shape(format!("{name} with {n} values"), data.len()));
        }
        Ok(Self { name, dims, data })
    }

    pub fn from_f64(name: impl Into<String>, dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(
            name,
            dims.iter().map(|d| *d as u32).collect(),
            data.iter().map(|v| *v as f32).collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleParams,
    pub stats: NormalizationStats,
    pub null: NullTokenMeta,
    pub step: u64,
    /// Free-form string attributes (model topology, dataset kind, ...), in
    /// write order.
    pub attrs: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(schedule: ScheduleParams, stats: NormalizationStats) -> Self {
        Self {
            schedule,
            stats,
            null: NullTokenMeta::default(),
            step: 0,
            attrs: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_attr(&self, key: &str) -> Result<&str> {
        self.attr(key)
            .ok_or_else(|| Error::TopologyMismatch(format!("checkpoint lacks attribute `{key}`")))
    }

    pub fn set_attr(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.attrs.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.attrs.push((key.to_string(), value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require_tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensor(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn push_tensor(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    /// Stores the null tokens and their metadata.
    pub fn set_null(&mut self, null: &ConditioningBundle, seed: u64) -> Result<()> {
        self.tensors.retain(|t| t.name != NULL_GLOBAL && t.name != NULL_FRAMES);
        self.null = NullTokenMeta {
            global_dim: null.global_dim() as u32,
            frame_dim: null.frame_dim() as u32,
            frames: null.n_frames() as u32,
            seed,
        };
        self.tensors
            .push(NamedTensor::from_f64(NULL_GLOBAL, &[null.global_dim()], null.global())?);
        self.tensors.push(NamedTensor::from_f64(
            NULL_FRAMES,
            &[null.n_frames(), null.frame_dim()],
            null.frames().as_slice(),
        )?);
        Ok(())
    }

    /// The stored null tokens, if any.
    pub fn null_bundle(&self) -> Result<Option<ConditioningBundle>> {
        if !self.null.is_present() {
            return Ok(None);
        }
        let g = self.require_tensor(NULL_GLOBAL)?;
        let f = self.require_tensor(NULL_FRAMES)?;
        let frames = Matrix::from_vec(self.null.frames as usize, self.null.frame_dim as usize, f.to_f64())?;
        null_from_tokens(&g.to_f64(), &frames).map(Some)
    }

    /// Appends every parameter tensor of `params` under `prefix`.
    pub fn store_params(&mut self, prefix: &str, params: &dyn Parameters) -> Result<()> {
        let mut err = None;
        params.visit(&mut |name, dims, data| {
            if err.is_none() {
                match NamedTensor::from_f64(format!("{prefix}{name}"), dims, data) {
                    Ok(t) => self.tensors.push(t),
                    Err(e) => err = Some(e),
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Overwrites `params` with the tensors stored under `prefix`.
    pub fn load_params(&self, prefix: &str, params: &mut dyn Parameters) -> Result<()> {
        let mut err = None;
        params.visit_mut(&mut |name, data| {
            if err.is_some() {
                return;
            }
            let full = format!("{prefix}{name}");
            match self.tensor(&full) {
                None => err = Some(Error::MissingTensor(full)),
                Some(t) if t.data.len() != data.len() => {
                    err = Some(Error::TopologyMismatch(format!(
                        "`{full}` holds {} values, model expects {}",
                        t.data.len(),
                        data.len()
                    )))
                }
                Some(t) => data.iter_mut().zip(&t.data).for_each(|(d, s)| *d = *s as f64),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::DuplicateTensor(t.name.clone()));
            }
            let n: usize = t.dims.iter().map(|d| *d as usize).product();
            if n != t.data.len() {
                return Err(Error::shape(format!("{} with {n} values", t.name), t.data.len()));
            }
        }
        let mut keys = HashSet::new();
        for (k, _) in &self.attrs {
            if !keys.insert(k.as_str()) {
                return Err(Error::Config(format!("duplicate checkpoint attribute `{k}`")));
            }
        }
        if self.null.is_present() {
            let g = self.require_tensor(NULL_GLOBAL)?;
            let f = self.require_tensor(NULL_FRAMES)?;
            let want_f = [self.null.frames, self.null.frame_dim];
            if g.dims != [self.null.global_dim] || f.dims != want_f {
                return Err(Error::TopologyMismatch(
                    "null-token tensors disagree with metadata".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Vec::new();
        w.extend_from_slice(&CKPT_MAGIC);
        put_u32(&mut w, CKPT_VERSION);
        put_u32(&mut w, self.schedule.steps);
        put_f64(&mut w, self.schedule.beta_start);
        put_f64(&mut w, self.schedule.beta_end);
        put_f64(&mut w, self.stats.min());
        put_f64(&mut w, self.stats.max());
        put_u32(&mut w, self.null.global_dim);
        put_u32(&mut w, self.null.frame_dim);
        put_u32(&mut w, self.null.frames);
        put_u64(&mut w, self.null.seed);
        put_u64(&mut w, self.step);
        put_u32(&mut w, self.attrs.len() as u32);
        for (k, v) in &self.attrs {
            put_str(&mut w, k);
            put_str(&mut w, v);
        }
        put_u32(&mut w, self.tensors.len() as u32);
        for t in &self.tensors {
            put_str(&mut w, &t.name);
            put_u32(&mut w, t.dims.len() as u32);
            for d in &t.dims {
                put_u32(&mut w, *d);
            }
            for v in &t.data {
                w.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(w)
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CKPT_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: CKPT_MAGIC,
                found: magic,
            });
        }
        let version = r.u32("version")?;
        if version != CKPT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                expected: CKPT_VERSION,
                found: version,
            });
        }
        let schedule = ScheduleParams {
            steps: r.u32("schedule")?,
            beta_start: r.f64("schedule")?,
            beta_end: r.f64("schedule")?,
        };
        let stats = NormalizationStats::new(r.f64("stats")?, r.f64("stats")?)?;
        let null = NullTokenMeta {
            global_dim: r.u32("null metadata")?,
            frame_dim: r.u32("null metadata")?,
            frames: r.u32("null metadata")?,
            seed: r.u64("null metadata")?,
        };
        let step = r.u64("step count")?;
        let n_attrs = r.u32("attribute count")?;
        let mut attrs = Vec::new();
        for _ in 0..n_attrs {
            attrs.push((r.string("attribute key")?, r.string("attribute value")?));
        }
        let n_tensors = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string("tensor name")?;
            let rank = r.u32("tensor rank")?;
            let dims = (0..rank).map(|_| r.u32("tensor dims")).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d as usize))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| r.truncated(&format!("`{name}` size overflows")))?;
            let raw = r.take(n, &format!("data of `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(r.truncated(&format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
        }
        let ck = Self {
            schedule,
            stats,
            null,
            step,
            attrs,
            tensors,
        };
        ck.validate()?;
        Ok(ck)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn truncated(&self, detail: &str) -> Error {
        Error::Truncated {
            path: self.path.to_path_buf(),
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.truncated(&format!("{what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.truncated(&format!("{what} is not UTF-8")))
    }
}

/// Validates everything, then writes atomically.
pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ck.encode()?;
    atomic_write_bytes(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(path, &bytes)
}
