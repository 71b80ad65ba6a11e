//! Persistence and ingestion: the binary feature-file format, annotation
//! tables, evaluation subset lists, model checkpoints, and the synthetic
//! dataset generator used for end-to-end checks.
//!
//! All binary layouts are little-endian and documented byte-for-byte in
//! `docs/formats.md`. Readers reject malformed input with typed errors;
//! nothing is silently truncated or repaired.

mod annotations;
mod checkpoint;
mod features;
mod synthetic;

pub use annotations::{
    load_annotations, load_subsets, parse_annotations, save_subsets, write_annotations,
    AnnotationRow, AnnotationTable, SubsetLists,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use features::{read_feature_file, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION};
pub use synthetic::{
    generate_synthetic, oracle_label, write_synthetic, FileDigest, SynthSpec, SyntheticDataset,
    SynthManifest,
};

use std::fmt;
use std::path::{Path, PathBuf};

use crate::sampler::SampleError;

/// Errors raised by readers, writers, and the generator.
#[derive(Debug)]
pub enum DataError {
    Io { path: PathBuf, source: std::io::Error },
    BadMagic { path: PathBuf, found: [u8; 4] },
    UnsupportedVersion { path: PathBuf, version: u16 },
    BadTag { path: PathBuf, what: &'static str, tag: u8 },
    Truncated { path: PathBuf, needed: usize, available: usize },
    TrailingBytes { path: PathBuf, extra: usize },
    EmptyPayload { path: PathBuf },
    MalformedRow { path: PathBuf, line: usize, reason: String },
    InvalidSegment { path: PathBuf, line: usize, start: f64, stop: f64 },
    UnknownSection { path: PathBuf, line: usize, section: String },
    DtypeMismatch { path: PathBuf, expected: u8, found: u8 },
    MissingTensor { name: String },
    UnexpectedTensor { name: String },
    TensorShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    InvalidSpec(String),
    Sample(SampleError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            DataError::BadMagic { path, found } => write!(
                f,
                "{}: bad magic {:02x?}, not a recognized container",
                path.display(),
                found
            ),
            DataError::UnsupportedVersion { path, version } => {
                write!(f, "{}: unsupported format version {version}", path.display())
            }
            DataError::BadTag { path, what, tag } => {
                write!(f, "{}: invalid {what} tag {tag}", path.display())
            }
            DataError::Truncated { path, needed, available } => write!(
                f,
                "{}: truncated, needed {needed} more bytes but only {available} remain",
                path.display()
            ),
            DataError::TrailingBytes { path, extra } => {
                write!(f, "{}: {extra} unexpected trailing bytes", path.display())
            }
            DataError::EmptyPayload { path } => {
                write!(f, "{}: zero frames or zero feature width", path.display())
            }
            DataError::MalformedRow { path, line, reason } => {
                write!(f, "{}:{line}: {reason}", path.display())
            }
            DataError::InvalidSegment { path, line, start, stop } => write!(
                f,
                "{}:{line}: segment start {start} is not before stop {stop}",
                path.display()
            ),
            DataError::UnknownSection { path, line, section } => {
                write!(f, "{}:{line}: unknown section [{section}]", path.display())
            }
            DataError::DtypeMismatch { path, expected, found } => write!(
                f,
                "{}: element type tag {found} does not match requested {expected}",
                path.display()
            ),
            DataError::MissingTensor { name } => write!(f, "checkpoint lacks tensor {name}"),
            DataError::UnexpectedTensor { name } => {
                write!(f, "checkpoint has unexpected tensor {name}")
            }
            DataError::TensorShape { name, expected, found } => write!(
                f,
                "tensor {name}: expected shape {expected:?}, found {found:?}"
            ),
            DataError::InvalidSpec(msg) => write!(f, "invalid generator spec: {msg}"),
            DataError::Sample(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<SampleError> for DataError {
    fn from(e: SampleError) -> Self {
        DataError::Sample(e)
    }
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ── Little-endian byte cursor ───────────────────────────────────────

/// Sequential reader over an in-memory buffer with truncation errors
/// that carry the originating path.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Self {
        ByteReader {
            buf,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), DataError> {
        let extra = self.remaining();
        if extra != 0 {
            return Err(DataError::TrailingBytes {
                path: self.path,
                extra,
            });
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.remaining() < n {
            return Err(DataError::Truncated {
                path: self.path.clone(),
                needed: n - self.remaining(),
                available: self.remaining(),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128, DataError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_bits(self.u32()?))
    }

    pub fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn string(&mut self) -> Result<String, DataError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| DataError::MalformedRow {
            path: self.path.clone(),
            line: 0,
            reason: format!("invalid utf-8 string: {e}"),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Append-only little-endian writer.
#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.u32(v.to_bits());
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn string(&mut self, s: &str) {
        assert!(s.len() <= u16::MAX as usize, "string too long for container");
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
}

/// FNV-1a 64-bit digest, used for manifest checksums.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
