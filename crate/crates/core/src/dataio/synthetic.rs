//! Synthetic dataset generator for end-to-end checks.
//!
//! Every video carries one class identity `c`: all of its frames elevate
//! feature coordinates `[c*m, (c+1)*m)` (with `m = dim / classes`) by a
//! fixed margin above Gaussian noise. Max-pooling any window of frames
//! therefore preserves the class signature, so segment labels are
//! recoverable by [`oracle_label`] from pooled features alone — the task
//! is learnable by construction, for anticipation as well as for
//! recognition.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::sampler::{FrameFeatureSequence, Modality};

use super::features::{feature_file_name, write_feature_file};
use super::{
    fnv1a64, io_err, write_annotations, AnnotationRow, AnnotationTable, DataError, SubsetLists,
};

/// Margin added to the class-signature coordinates.
const ELEVATION: f32 = 2.0;
/// Standard deviation of the background noise.
const NOISE_SIGMA: f32 = 0.3;
/// Participants are assigned round-robin from this pool.
const PARTICIPANTS: usize = 10;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub videos: usize,
    pub segments_per_video: usize,
    pub fps: f32,
    pub dim: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Defaults sized for quick end-to-end runs: 5 segments per video,
    /// 8 fps, 4 coordinates per class.
    pub fn new(classes: usize, videos: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            videos,
            segments_per_video: 5,
            fps: 8.0,
            dim: 4 * classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.classes < 2 {
            return Err(DataError::InvalidSpec("need at least 2 classes".into()));
        }
        if self.videos == 0 || self.segments_per_video == 0 {
            return Err(DataError::InvalidSpec("need at least one video and segment".into()));
        }
        if self.dim < self.classes {
            return Err(DataError::InvalidSpec(format!(
                "dim {} cannot encode {} classes",
                self.dim, self.classes
            )));
        }
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(DataError::InvalidSpec(format!("fps {} must be positive", self.fps)));
        }
        Ok(())
    }

    fn verb_count(&self) -> usize {
        (self.classes.div_ceil(2)).max(2)
    }
}

/// Generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SynthSpec,
    pub sequences: Vec<FrameFeatureSequence>,
    pub annotations: AnnotationTable,
    /// Action class -> (verb, noun) ground truth.
    pub action_map: Vec<(usize, usize)>,
    pub subsets: SubsetLists,
}

/// The documented inverse rule: the class whose signature block has the
/// highest mean in max-pooled features.
pub fn oracle_label(pooled: &[f32], classes: usize) -> usize {
    let m = pooled.len() / classes;
    let mut best = 0usize;
    let mut best_score = f32::NEG_INFINITY;
    for c in 0..classes {
        let block = &pooled[c * m..(c + 1) * m];
        let score = block.iter().sum::<f32>() / m as f32;
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}

/// Generates a corpus deterministically from the seed in `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0f32, NOISE_SIGMA).expect("valid sigma");
    let block = spec.dim / spec.classes;
    let verb_count = spec.verb_count();

    let mut sequences = Vec::with_capacity(spec.videos);
    let mut rows = Vec::with_capacity(spec.videos * spec.segments_per_video);
    for v in 0..spec.videos {
        let class = rng.random_range(0..spec.classes);
        let video_id = format!("synth_{v:04}");
        let participant = format!("P{:02}", v % PARTICIPANTS);

        // Segment layout: a lead-in long enough for anticipation
        // history, then alternating segments and gaps.
        let mut pos = 3.0f64;
        for _ in 0..spec.segments_per_video {
            let len = rng.random_range(2.5..4.0);
            let start = pos;
            let stop = start + len;
            pos = stop + rng.random_range(2.6..3.4);
            rows.push(AnnotationRow {
                video_id: video_id.clone(),
                start_sec: (start * 100.0).round() / 100.0,
                stop_sec: (stop * 100.0).round() / 100.0,
                verb_class: class % verb_count,
                noun_class: class,
                action_class: class,
                participant_id: participant.clone(),
            });
        }
        let duration = pos + 1.0;
        let frames = (duration * spec.fps as f64).ceil() as usize + 1;
        let mut features = Vec::with_capacity(frames * spec.dim);
        for _ in 0..frames {
            for d in 0..spec.dim {
                let mut value = noise.sample(&mut rng);
                if d / block == class && d < block * spec.classes {
                    value += ELEVATION;
                }
                features.push(value);
            }
        }
        sequences.push(FrameFeatureSequence::from_fps(
            video_id,
            Modality::Rgb,
            spec.fps,
            features,
            spec.dim,
        )?);
    }

    let annotations = AnnotationTable::from_rows(rows);
    let action_map: Vec<(usize, usize)> = (0..spec.classes).map(|c| (c % verb_count, c)).collect();
    let subsets = derive_subsets(&annotations, spec);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        sequences,
        annotations,
        action_map,
        subsets,
    })
}

/// Marks the two highest-numbered participants as unseen and the least
/// frequent fifth of each vocabulary as tail classes.
fn derive_subsets(annotations: &AnnotationTable, spec: &SynthSpec) -> SubsetLists {
    let mut subsets = SubsetLists::default();
    let mut participants: Vec<String> = annotations
        .rows()
        .iter()
        .map(|r| r.participant_id.clone())
        .collect();
    participants.sort();
    participants.dedup();
    for p in participants.iter().rev().take(2) {
        subsets.unseen_participants.insert(p.clone());
    }

    let tail_of = |counts: Vec<usize>| {
        let mut by_freq: Vec<(usize, usize)> = counts
            .into_iter()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .collect();
        by_freq.sort_by_key(|&(c, n)| (n, c));
        let take = by_freq.len().div_ceil(5);
        by_freq.into_iter().take(take).map(|(c, _)| c).collect()
    };
    let mut verb_hist = vec![0usize; spec.verb_count()];
    let mut noun_hist = vec![0usize; spec.classes];
    let mut action_hist = vec![0usize; spec.classes];
    for r in annotations.rows() {
        verb_hist[r.verb_class] += 1;
        noun_hist[r.noun_class] += 1;
        action_hist[r.action_class] += 1;
    }
    subsets.tail_verbs = tail_of(verb_hist);
    subsets.tail_nouns = tail_of(noun_hist);
    subsets.tail_actions = tail_of(action_hist);
    subsets
}

/// One written file with its FNV-1a digest.
#[derive(Debug, Clone, PartialEq)]
pub struct FileDigest {
    pub relative_path: String,
    pub bytes: usize,
    pub fnv64: u64,
}

/// All files written by [`write_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthManifest {
    pub files: Vec<FileDigest>,
}

impl fmt::Display for SynthManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for file in &self.files {
            writeln!(
                f,
                "{:016x}  {:>10}  {}",
                file.fnv64, file.bytes, file.relative_path
            )?;
        }
        Ok(())
    }
}

/// Writes the corpus under `dir`: `features/<video>.rgb.tagf`,
/// `annotations.csv`, and `subsets.txt`.
pub fn write_synthetic(dataset: &SyntheticDataset, dir: &Path) -> Result<SynthManifest, DataError> {
    let features_dir = dir.join("features");
    fs::create_dir_all(&features_dir).map_err(|e| io_err(&features_dir, e))?;
    let mut files = Vec::new();
    let mut digest = |path: &Path, relative: String| -> Result<(), DataError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        files.push(FileDigest {
            relative_path: relative,
            bytes: bytes.len(),
            fnv64: fnv1a64(&bytes),
        });
        Ok(())
    };
    for seq in &dataset.sequences {
        use crate::sampler::FrameSource;
        let name = feature_file_name(seq.video_id(), seq.modality());
        let path = features_dir.join(&name);
        write_feature_file(seq, &path)?;
        digest(&path, format!("features/{name}"))?;
    }
    let ann_path = dir.join("annotations.csv");
    write_annotations(&dataset.annotations, &ann_path)?;
    digest(&ann_path, "annotations.csv".into())?;
    let subset_path = dir.join("subsets.txt");
    super::save_subsets(&dataset.subsets, &subset_path)?;
    digest(&subset_path, "subsets.txt".into())?;
    Ok(SynthManifest { files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::FrameSource;

    /// Brute-force pooled max over the frames of a window.
    fn pooled_max(seq: &FrameFeatureSequence, start: f64, stop: f64) -> Vec<f32> {
        let mut acc = vec![f32::NEG_INFINITY; seq.dim()];
        for i in 0..seq.len() {
            let ts = seq.timestamp(i);
            if ts >= start && ts <= stop {
                for (a, &v) in acc.iter_mut().zip(seq.row(i)) {
                    if v > *a {
                        *a = v;
                    }
                }
            }
        }
        acc
    }

    #[test]
    fn oracle_rule_recovers_every_label() {
        let spec = SynthSpec::new(4, 40, 7);
        let data = generate_synthetic(&spec).unwrap();
        let mut by_id: std::collections::HashMap<&str, &FrameFeatureSequence> =
            std::collections::HashMap::new();
        for seq in &data.sequences {
            by_id.insert(seq.video_id(), seq);
        }
        for row in data.annotations.rows() {
            let seq = by_id[row.video_id.as_str()];
            let pooled = pooled_max(seq, row.start_sec, row.stop_sec);
            assert_eq!(oracle_label(&pooled, spec.classes), row.action_class);
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let spec = SynthSpec::new(3, 6, 123);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = write_synthetic(&generate_synthetic(&spec).unwrap(), d1.path()).unwrap();
        let m2 = write_synthetic(&generate_synthetic(&spec).unwrap(), d2.path()).unwrap();
        assert_eq!(m1, m2);
        // Spot-check actual bytes, not just digests.
        let f = &m1.files[0].relative_path;
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap()
        );
    }

    #[test]
    fn label_histogram_near_uniform() {
        let spec = SynthSpec::new(2, 200, 0);
        let data = generate_synthetic(&spec).unwrap();
        let mut counts = [0usize; 2];
        for row in data.annotations.rows() {
            counts[row.action_class] += 1;
        }
        let total = (counts[0] + counts[1]) as f64;
        for c in counts {
            let frac = c as f64 / total;
            assert!((frac - 0.5).abs() < 0.1, "histogram {counts:?}");
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(generate_synthetic(&SynthSpec::new(1, 10, 0)).is_err());
        let mut spec = SynthSpec::new(4, 10, 0);
        spec.dim = 2;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn anticipation_windows_have_frames() {
        // Every segment must leave enough causal history for the
        // anticipation sampler at the default fps.
        let spec = SynthSpec::new(5, 8, 3);
        let data = generate_synthetic(&spec).unwrap();
        let cfg = crate::sampler::SamplingConfig::epic100_anticipation();
        let by_id: std::collections::HashMap<&str, &FrameFeatureSequence> = data
            .sequences
            .iter()
            .map(|s| (s.video_id(), s))
            .collect();
        for row in data.annotations.rows() {
            let seq = by_id[row.video_id.as_str()];
            crate::sampler::sample_anticipation(seq, row.start_sec, &cfg).unwrap();
        }
    }
}
