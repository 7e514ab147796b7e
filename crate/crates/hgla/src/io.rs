//! Bit-exact tensor files.
//!
//! Layout: magic bytes `UGT1`, a `u32` little-endian rank, `rank` `u32`
//! little-endian dims, then the row-major IEEE-754 binary32 little-endian
//! payload. No padding, no checksum. Round trips reproduce every byte.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hgla_core::VideoLatent;

pub const MAGIC: [u8; 4] = *b"UGT1";

/// Highest rank the reader accepts; headers beyond this are malformed.
const MAX_RANK: u32 = 8;

#[derive(Debug)]
pub enum TensorIoError {
    /// Underlying filesystem failure.
    Io(std::io::Error),
    /// The file does not start with `UGT1`.
    BadMagic([u8; 4]),
    /// The file ends before the header plus payload is complete.
    Truncated { expected: usize, got: usize },
    /// Structurally invalid header or payload size.
    BadHeader(String),
}

impl fmt::Display for TensorIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorIoError::Io(e) => write!(f, "tensor I/O failed: {e}"),
            TensorIoError::BadMagic(m) => {
                write!(f, "bad magic bytes {m:?}, expected {MAGIC:?}")
            }
            TensorIoError::Truncated { expected, got } => {
                write!(
                    f,
                    "truncated tensor file: expected {expected} bytes, got {got}"
                )
            }
            TensorIoError::BadHeader(msg) => write!(f, "malformed tensor header: {msg}"),
        }
    }
}

impl std::error::Error for TensorIoError {}

impl From<std::io::Error> for TensorIoError {
    fn from(e: std::io::Error) -> Self {
        TensorIoError::Io(e)
    }
}

pub type IoResult<T> = Result<T, TensorIoError>;

/// Writes a tensor of arbitrary rank.
pub fn write_raw(path: &Path, dims: &[usize], data: &[f32]) -> IoResult<()> {
    let len: usize = dims.iter().product();
    if dims.is_empty() || dims.len() > MAX_RANK as usize {
        return Err(TensorIoError::BadHeader(format!(
            "rank must be 1..={MAX_RANK}, got {}",
            dims.len()
        )));
    }
    if len != data.len() {
        return Err(TensorIoError::BadHeader(format!(
            "dims {dims:?} need {len} values, got {}",
            data.len()
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a tensor of arbitrary rank.
pub fn read_raw(path: &Path) -> IoResult<(Vec<usize>, Vec<f32>)> {
    let file = File::open(path)?;
    let total = file.metadata()?.len() as usize;
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut input, &mut magic, total, 0)?;
    if magic != MAGIC {
        return Err(TensorIoError::BadMagic(magic));
    }

    let mut word = [0u8; 4];
    read_exact_or_truncated(&mut input, &mut word, total, 4)?;
    let rank = u32::from_le_bytes(word);
    if rank == 0 || rank > MAX_RANK {
        return Err(TensorIoError::BadHeader(format!(
            "rank must be 1..={MAX_RANK}, got {rank}"
        )));
    }

    let mut dims = Vec::with_capacity(rank as usize);
    for i in 0..rank {
        read_exact_or_truncated(&mut input, &mut word, total, 8 + 4 * i as usize)?;
        let d = u32::from_le_bytes(word) as usize;
        if d == 0 {
            return Err(TensorIoError::BadHeader("zero-sized dimension".into()));
        }
        dims.push(d);
    }

    let len: usize = dims.iter().product();
    let header = 8 + 4 * rank as usize;
    let expected = header + 4 * len;
    if total < expected {
        return Err(TensorIoError::Truncated {
            expected,
            got: total,
        });
    }
    if total > expected {
        return Err(TensorIoError::BadHeader(format!(
            "{} trailing bytes after the payload",
            total - expected
        )));
    }

    let mut payload = vec![0u8; 4 * len];
    input.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((dims, data))
}

fn read_exact_or_truncated(
    input: &mut impl Read,
    buf: &mut [u8],
    total: usize,
    offset: usize,
) -> IoResult<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TensorIoError::Truncated {
                expected: offset + buf.len(),
                got: total,
            }
        } else {
            TensorIoError::Io(e)
        }
    })
}

/// Writes a video latent as a rank-5 tensor.
pub fn write_tensor(path: &Path, z: &VideoLatent) -> IoResult<()> {
    write_raw(path, &z.dims(), z.data())
}

/// Reads a rank-5 tensor back into a video latent.
pub fn read_tensor(path: &Path) -> IoResult<VideoLatent> {
    let (dims, data) = read_raw(path)?;
    if dims.len() != 5 {
        return Err(TensorIoError::BadHeader(format!(
            "video latents have rank 5, file has rank {}",
            dims.len()
        )));
    }
    VideoLatent::new([dims[0], dims[1], dims[2], dims[3], dims[4]], data)
        .map_err(|e| TensorIoError::BadHeader(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgla_core::random_latent;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.ugt");
        let z = random_latent([2, 3, 4, 5, 6], 42).unwrap();
        write_tensor(&path, &z).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.dims(), z.dims());
        assert_eq!(back.data(), z.data());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        match read_raw(&dir.path().join("absent.ugt")) {
            Err(TensorIoError::Io(e)) => {
                assert_eq!(e.kind(), std::io::ErrorKind::NotFound)
            }
            other => panic!("expected Io, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ugt");
        std::fs::write(
            &path,
            b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f",
        )
        .unwrap();
        match read_raw(&path) {
            Err(TensorIoError::BadMagic(m)) => assert_eq!(&m, b"NOPE"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ugt");
        let z = random_latent([1, 1, 2, 2, 1], 0).unwrap();
        write_tensor(&path, &z).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match read_raw(&path) {
            Err(TensorIoError::Truncated { expected, got }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(got, bytes.len() - 3);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ugt");
        let z = random_latent([1, 1, 1, 1, 2], 1).unwrap();
        write_tensor(&path, &z).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_raw(&path), Err(TensorIoError::BadHeader(_))));
    }

    #[test]
    fn exact_byte_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layout.ugt");
        write_raw(&path, &[1, 2], &[1.0, -2.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"UGT1");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }
}
