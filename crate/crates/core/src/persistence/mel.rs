use std::fs;
use std::path::Path;

use super::atomic_write_bytes;
use crate::error::{Error, Result};
use crate::tensor::{MelTensor, Shape};

pub const MEL_MAGIC: [u8; 4] = *b"MELB";
pub const MEL_VERSION: u32 = 1;
pub const MEL_HEADER_LEN: usize = 16;

/// Header then `f32` values in frame-major order.
pub fn encode_mel(m: &MelTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(MEL_HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MEL_MAGIC);
    out.extend_from_slice(&MEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.n_mels() as u32).to_le_bytes());
    out.extend_from_slice(&(m.n_frames() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_mel(path: &Path, bytes: &[u8]) -> Result<MelTensor> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < MEL_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MEL_MAGIC {
            return Err(bad_magic(path, bytes));
        }
        return Err(truncated(format!("{} header bytes of {MEL_HEADER_LEN}", bytes.len())));
    }
    if bytes[..4] != MEL_MAGIC {
        return Err(bad_magic(path, bytes));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != MEL_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: MEL_VERSION,
            found: version,
        });
    }
    let (n_mels, n_frames) = (word(8) as usize, word(12) as usize);
    let want = n_mels
        .checked_mul(n_frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| truncated(format!("declared size {n_mels}x{n_frames} overflows")))?;
    let payload = &bytes[MEL_HEADER_LEN..];
    if payload.len() != want {
        return Err(truncated(format!(
            "payload is {} bytes, header declares {want}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MelTensor::from_vec(Shape::new(n_mels, n_frames), data)
}

fn bad_magic(path: &Path, bytes: &[u8]) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: MEL_MAGIC,
        found: bytes[..4].try_into().unwrap(),
    }
}

pub fn write_mel(m: &MelTensor, path: &Path) -> Result<()> {
    atomic_write_bytes(path, &encode_mel(m))
}

pub fn read_mel(path: &Path) -> Result<MelTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mel(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn single_value_layout() {
        let m = MelTensor::from_vec(Shape::new(1, 1), vec![0.5]).unwrap();
        let b = encode_mel(&m);
        assert_eq!(b.len(), 20);
        assert_eq!(&b[..4], b"MELB");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mel");
        let m = MelTensor::standard_normal(Shape::new(80, 100), &mut stream(3, Domain::Verify, 0))
            .quantized_f32();
        write_mel(&m, &p).unwrap();
        let back = read_mel(&p).unwrap();
        assert_eq!(back.shape(), m.shape());
        assert!(back
            .as_slice()
            .iter()
            .zip(m.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corruption_cases_are_distinct() {
        let p = Path::new("x.mel");
        let m = MelTensor::filled(Shape::new(2, 3), 1.25);
        let good = encode_mel(&m);
        assert!(matches!(
            decode_mel(p, &good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_mel(p, &magic), Err(Error::BadMagic { .. })));
        let mut ver = good.clone();
        ver[4] = 2;
        assert!(matches!(
            decode_mel(p, &ver),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        assert!(matches!(decode_mel(p, &good[..10]), Err(Error::Truncated { .. })));
    }
}
