//! Little-endian binary formats and the line-oriented config file.

mod checkpoint;
mod config;
mod mel;
mod store;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, NamedTensor, NullTokenMeta, ScheduleParams,
    CKPT_MAGIC, CKPT_VERSION,
};
pub use config::{Config, DataSection, DspSection, ModelSection};
pub use store::{
    checkpoint_config, denoiser_checkpoint, load_classifier, load_denoiser, store_classifier,
    CLASSIFIER_PREFIX, DENOISER_PREFIX,
};
pub use mel::{encode_mel, read_mel, write_mel, MEL_HEADER_LEN, MEL_MAGIC, MEL_VERSION};

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::audiodsp::NormalizationStats;
use crate::error::{Error, Result};

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes through a sibling temp file and renames it into place, so
/// readers see either the old file or the complete new one.
pub fn atomic_write(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<()> {
    let tmp = temp_path(path);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |w| w.write_all(bytes))
}

/// Two whitespace-separated numbers, `min max`.
pub fn write_stats(path: &Path, stats: &NormalizationStats) -> Result<()> {
    atomic_write(path, |w| writeln!(w, "{:?} {:?}", stats.min(), stats.max()))
}

pub fn read_stats(path: &Path) -> Result<NormalizationStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let nums: Vec<&str> = text.split_whitespace().collect();
    if nums.len() != 2 {
        return Err(Error::Config(format!(
            "{}: expected two numbers, found {} fields",
            path.display(),
            nums.len()
        )));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("{}: `{s}` is not a number", path.display())))
    };
    NormalizationStats::new(parse(nums[0])?, parse(nums[1])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        atomic_write_bytes(&p, b"abc").unwrap();
        atomic_write_bytes(&p, b"xyz").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"xyz");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_body_keeps_old_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        atomic_write_bytes(&p, b"old").unwrap();
        let err = atomic_write(&p, |w| {
            w.write_all(b"partial")?;
            Err(io::Error::other("boom"))
        })
        .unwrap_err();
        assert!(err.is_io());
        assert_eq!(fs::read(&p).unwrap(), b"old");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn stats_roundtrip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stats.txt");
        let st = NormalizationStats::new(-11.512925464970229, 3.0000000000000004).unwrap();
        write_stats(&p, &st).unwrap();
        assert_eq!(read_stats(&p).unwrap(), st);
        fs::write(&p, "1.0\n").unwrap();
        assert!(read_stats(&p).is_err());
    }
}
