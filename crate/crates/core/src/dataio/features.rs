//! Binary frame-feature container (`.tagf`).
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TAGF"
//! 4       2     version (currently 1)
//! 6       1     modality tag (0 rgb, 1 flow, 2 obj, 3 roi)
//! 7       4     T, frame count (u32, > 0)
//! 11      4     D, feature width (u32, > 0)
//! 15      4     fps (f32, > 0)
//! 19      4*T*D frame features, row-major f32
//! ```
//!
//! Timestamps are derived as `i / fps`. The video id comes from the file
//! name: `<video_id>.<modality>.tagf`.

use std::fs;
use std::path::Path;

use crate::sampler::{FrameFeatureSequence, FrameSource, Modality};

use super::{io_err, ByteReader, ByteWriter, DataError};

pub const FEATURE_MAGIC: [u8; 4] = *b"TAGF";
pub const FEATURE_VERSION: u16 = 1;

/// Serializes a sequence; fails on empty sequences rather than writing
/// an unreadable file.
pub fn write_feature_file(seq: &FrameFeatureSequence, path: &Path) -> Result<(), DataError> {
    if seq.len() == 0 || seq.dim() == 0 {
        return Err(DataError::EmptyPayload {
            path: path.to_path_buf(),
        });
    }
    // Uniform timestamps are an invariant of the format.
    let fps = if seq.len() > 1 {
        (seq.len() - 1) as f64 / (seq.timestamp(seq.len() - 1) - seq.timestamp(0))
    } else {
        1.0
    };
    let mut w = ByteWriter::new();
    w.bytes(&FEATURE_MAGIC);
    w.u16(FEATURE_VERSION);
    w.u8(seq.modality().tag());
    w.u32(seq.len() as u32);
    w.u32(seq.dim() as u32);
    w.f32(fps as f32);
    for &v in seq.features() {
        w.f32(v);
    }
    fs::write(path, w.into_bytes()).map_err(|e| io_err(path, e))
}

/// Reads a `.tagf` file back into a sequence with `i / fps` timestamps.
pub fn read_feature_file(path: &Path) -> Result<FrameFeatureSequence, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ByteReader::new(&bytes, path);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != FEATURE_VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let modality_tag = r.u8()?;
    let modality = Modality::from_tag(modality_tag).ok_or(DataError::BadTag {
        path: path.to_path_buf(),
        what: "modality",
        tag: modality_tag,
    })?;
    let frames = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let fps = r.f32()?;
    if frames == 0 || dim == 0 {
        return Err(DataError::EmptyPayload {
            path: path.to_path_buf(),
        });
    }
    if !fps.is_finite() || fps <= 0.0 {
        return Err(DataError::MalformedRow {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("invalid fps {fps}"),
        });
    }
    let mut features = Vec::with_capacity(frames * dim);
    let payload = r.take(frames * dim * 4)?;
    for chunk in payload.chunks_exact(4) {
        features.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    r.finish()?;
    let video_id = video_id_from_path(path, modality);
    FrameFeatureSequence::from_fps(video_id, modality, fps, features, dim).map_err(DataError::from)
}

/// Conventional feature file name for a video/modality pair.
pub fn feature_file_name(video_id: &str, modality: Modality) -> String {
    format!("{video_id}.{}.tagf", modality.name())
}

fn video_id_from_path(path: &Path, modality: Modality) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown");
    let suffix = format!(".{}", modality.name());
    stem.strip_suffix(suffix.as_str()).unwrap_or(stem).to_string()
}
