//! RDT1 binary tensor files.
//!
//! Layout, little-endian throughout:
//!
//! | bytes        | field                                   |
//! |--------------|-----------------------------------------|
//! | 4            | magic `RDT1`                            |
//! | 1            | dtype code: 1 = f32, 2 = f64, 3 = u8    |
//! | 1            | ndim, always 2                          |
//! | 8 × ndim     | dims as u64                             |
//! | rest         | row-major payload                       |

use std::io::Write;
use std::path::Path;

use super::Tensor2D;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RDT1";
const HEADER_LEN: usize = 4 + 1 + 1 + 2 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U8 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

/// Serializes `x` with the given payload type.
///
/// `U8` requires every entry to be an integer in `0..=255`; `F32` rounds.
pub fn encode(x: &Tensor2D, dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + x.data().len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(2);
    out.extend_from_slice(&(x.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(x.cols() as u64).to_le_bytes());
    match dtype {
        DType::F64 => x.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => x.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::U8 => {
            for (i, &v) in x.data().iter().enumerate() {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Format(format!("payload: entry {i} ({v}) is not representable as u8")));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

/// Parses an RDT1 byte buffer. Every malformed input is an error, never a panic.
pub fn decode(bytes: &[u8]) -> Result<Tensor2D> {
    let magic = bytes.get(..4).ok_or_else(|| Error::Format("truncated header: magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let code = *bytes.get(4).ok_or_else(|| Error::Format("truncated header: dtype".into()))?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    let ndim = *bytes.get(5).ok_or_else(|| Error::Format("truncated header: ndim".into()))?;
    if ndim != 2 {
        return Err(Error::Format(format!("ndim must be 2, got {ndim}")));
    }
    let dims = bytes.get(6..HEADER_LEN).ok_or_else(|| Error::Format("truncated header: dims".into()))?;
    let dim = |k: usize| -> Result<usize> {
        let raw = u64::from_le_bytes(dims[k * 8..k * 8 + 8].try_into().expect("8-byte slice"));
        usize::try_from(raw).map_err(|_| Error::Format(format!("dims: dimension {k} ({raw}) overflows usize")))
    };
    let (rows, cols) = (dim(0)?, dim(1)?);

    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| Error::Format(format!("dims: {rows}x{cols} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < payload_len {
        return Err(Error::Format(format!(
            "truncated payload: expected {payload_len} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > payload_len {
        return Err(Error::Format(format!(
            "trailing bytes: {} after payload",
            payload.len() - payload_len
        )));
    }

    let data: Vec<f64> = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        DType::U8 => payload.iter().map(|&b| b as f64).collect(),
    };
    Tensor2D::from_vec(rows, cols, data).map_err(|e| Error::Format(format!("payload: {e}")))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor2D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a 64-bit tensor.
pub fn write_tensor(path: impl AsRef<Path>, x: &Tensor2D) -> Result<()> {
    write_tensor_as(path, x, DType::F64)
}

pub fn write_tensor_as(path: impl AsRef<Path>, x: &Tensor2D, dtype: DType) -> Result<()> {
    let bytes = encode(x, dtype)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes through a sibling temp file and renames, so a failed write leaves
/// no partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor2D {
        Tensor2D::from_rows(&[vec![1.5, -2.0], vec![0.1, 1e-300], vec![f64::MAX, -0.0]]).unwrap()
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rdt");
        let x = sample();
        write_tensor(&path, &x).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), (3, 2));
        for (a, b) in x.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_roundtrip() {
        let x = Tensor2D::zeros(0, 0);
        let back = decode(&encode(&x, DType::F64).unwrap()).unwrap();
        assert_eq!(back.shape(), (0, 0));
        assert!(back.data().is_empty());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&Tensor2D::zeros(3, 2), DType::F64).unwrap();
        assert_eq!(&bytes[..4], b"RDT1");
        assert_eq!(bytes[4], 2);
        assert_eq!(bytes[5], 2);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 22 + 6 * 8);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encode(&sample(), DType::F64).unwrap();
        bytes[0] = b'X';
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "tensor format: bad magic");
    }

    #[test]
    fn rejects_unknown_dtype() {
        let mut bytes = encode(&sample(), DType::F64).unwrap();
        bytes[4] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("dtype code 9"));
    }

    #[test]
    fn rejects_wrong_ndim() {
        let mut bytes = encode(&sample(), DType::F64).unwrap();
        bytes[5] = 3;
        assert!(decode(&bytes).unwrap_err().to_string().contains("ndim"));
    }

    #[test]
    fn rejects_truncation_and_trailing() {
        let bytes = encode(&sample(), DType::F64).unwrap();
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("truncated payload"), "{err}");
        assert!(decode(&bytes[..10]).unwrap_err().to_string().contains("truncated header: dims"));
        assert!(decode(&bytes[..2]).unwrap_err().to_string().contains("magic"));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn rejects_overflowing_dims() {
        let mut bytes = encode(&Tensor2D::zeros(0, 0), DType::F64).unwrap();
        bytes[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        bytes[14..22].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn f32_and_u8_payloads() {
        let x = Tensor2D::from_rows(&[vec![0.0, 1.0], vec![255.0, 7.0]]).unwrap();
        assert_eq!(decode(&encode(&x, DType::U8).unwrap()).unwrap(), x);
        assert_eq!(decode(&encode(&x, DType::F32).unwrap()).unwrap(), x);
        assert!(encode(&Tensor2D::filled(1, 1, 0.5), DType::U8).is_err());
    }

    #[test]
    fn rejects_nan_payload() {
        let mut bytes = encode(&Tensor2D::zeros(1, 1), DType::F64).unwrap();
        bytes[22..30].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&bytes).unwrap_err().to_string().contains("non-finite"));
    }
}
