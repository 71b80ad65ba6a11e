//! Snippet sampling: turning frame-feature sequences into recent and
//! spanning snippet sets for anticipation, recognition, and activity
//! recognition.
//!
//! A scope is split into K equal sub-intervals and the frame features
//! inside each are max-pooled coordinatewise. Sub-intervals that contain
//! no frame borrow the temporally nearest frame inside the scope, so the
//! output shape depends only on the configuration, never on the frame
//! rate.

use std::cell::RefCell;
use std::fmt;

/// Feature modality of a frame sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    Flow,
    Obj,
    Roi,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Rgb, Modality::Flow, Modality::Obj, Modality::Roi];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
            Modality::Obj => "obj",
            Modality::Roi => "roi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(Modality::Rgb),
            "flow" => Some(Modality::Flow),
            "obj" => Some(Modality::Obj),
            "roi" => Some(Modality::Roi),
            _ => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Modality::Rgb => 0,
            Modality::Flow => 1,
            Modality::Obj => 2,
            Modality::Roi => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Modality::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Read-only view of a timestamped frame-feature matrix.
///
/// The sampler only touches frames through this trait, which lets tests
/// interpose [`AuditedFrames`] to prove which rows were actually read.
pub trait FrameSource {
    fn video_id(&self) -> &str;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn dim(&self) -> usize;
    /// Timestamp of frame `idx`, in seconds. Metadata, not a feature access.
    fn timestamp(&self, idx: usize) -> f64;
    /// Feature row of frame `idx`. This is the audited access.
    fn row(&self, idx: usize) -> &[f32];
}

/// Per-video, per-modality frame features with strictly increasing
/// timestamps.
#[derive(Debug, Clone)]
pub struct FrameFeatureSequence {
    video_id: String,
    modality: Modality,
    timestamps: Vec<f64>,
    features: Vec<f32>,
    dim: usize,
}

impl FrameFeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        modality: Modality,
        timestamps: Vec<f64>,
        features: Vec<f32>,
        dim: usize,
    ) -> Result<Self, SampleError> {
        let video_id = video_id.into();
        if dim == 0 || timestamps.is_empty() {
            return Err(SampleError::EmptySequence { video_id });
        }
        if features.len() != timestamps.len() * dim {
            return Err(SampleError::FeatureShape {
                video_id,
                frames: timestamps.len(),
                dim,
                len: features.len(),
            });
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SampleError::UnsortedTimestamps { video_id });
        }
        Ok(Self {
            video_id,
            modality,
            timestamps,
            features,
            dim,
        })
    }

    /// Uniformly spaced timestamps `i / fps`, the layout produced by
    /// frame-level feature extractors.
    pub fn from_fps(
        video_id: impl Into<String>,
        modality: Modality,
        fps: f32,
        features: Vec<f32>,
        dim: usize,
    ) -> Result<Self, SampleError> {
        let frames = features.len().checked_div(dim).unwrap_or(0);
        let timestamps = (0..frames).map(|i| i as f64 / fps as f64).collect();
        Self::new(video_id, modality, timestamps, features, dim)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// `[first, last]` timestamp span of the footage.
    pub fn span(&self) -> (f64, f64) {
        (self.timestamps[0], self.timestamps[self.timestamps.len() - 1])
    }
}

impl FrameSource for FrameFeatureSequence {
    fn video_id(&self) -> &str {
        &self.video_id
    }
    fn len(&self) -> usize {
        self.timestamps.len()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn timestamp(&self, idx: usize) -> f64 {
        self.timestamps[idx]
    }
    fn row(&self, idx: usize) -> &[f32] {
        &self.features[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Wrapper that records the timestamp of every feature-row access.
/// Test hook for the anticipation causality audit; single-threaded.
pub struct AuditedFrames<'a, S: FrameSource> {
    inner: &'a S,
    accessed: RefCell<Vec<f64>>,
}

impl<'a, S: FrameSource> AuditedFrames<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            accessed: RefCell::new(Vec::new()),
        }
    }

    /// Timestamps of all rows read so far.
    pub fn accessed_timestamps(&self) -> Vec<f64> {
        self.accessed.borrow().clone()
    }

    pub fn accesses_at_or_after(&self, t: f64) -> usize {
        self.accessed.borrow().iter().filter(|&&ts| ts >= t).count()
    }
}

impl<S: FrameSource> FrameSource for AuditedFrames<'_, S> {
    fn video_id(&self) -> &str {
        self.inner.video_id()
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn timestamp(&self, idx: usize) -> f64 {
        self.inner.timestamp(idx)
    }
    fn row(&self, idx: usize) -> &[f32] {
        self.accessed.borrow_mut().push(self.inner.timestamp(idx));
        self.inner.row(idx)
    }
}

/// Whether a snippet set covers a recent window or the long-term span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnippetKind {
    Recent,
    Spanning,
}

/// K max-pooled snippet vectors with their temporal extents.
#[derive(Debug, Clone)]
pub struct SnippetSet {
    vectors: Vec<f32>,
    dim: usize,
    extents: Vec<(f64, f64)>,
    pub kind: SnippetKind,
}

impl SnippetSet {
    /// Builds a set from an explicit `K×D` matrix and matching extents.
    pub fn new(
        vectors: Vec<f32>,
        dim: usize,
        extents: Vec<(f64, f64)>,
        kind: SnippetKind,
    ) -> Result<Self, SampleError> {
        if dim == 0 || extents.is_empty() || vectors.len() != extents.len() * dim {
            return Err(SampleError::InvalidConfig(format!(
                "snippet set of {} values cannot hold {} x {} snippets",
                vectors.len(),
                extents.len(),
                dim
            )));
        }
        Ok(Self {
            vectors,
            dim,
            extents,
            kind,
        })
    }

    /// Number of snippets.
    pub fn scale(&self) -> usize {
        self.extents.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `K×D` snippet matrix.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> &[f32] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// `(start, end)` seconds of each snippet, in order.
    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents
    }
}

/// Whether the final sub-interval includes its right endpoint.
///
/// Segment pooling closes the last sub-interval so the segment's final
/// frame is kept; anticipation keeps every boundary half-open so that no
/// frame at or after the observation boundary is ever read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndRule {
    Inclusive,
    Exclusive,
}

/// How the recent scopes of a task are derived.
#[derive(Debug, Clone, PartialEq)]
pub enum RecentSpec {
    /// Anticipation: offsets (seconds) before the observation boundary;
    /// each scope runs `[t - offset, t)`.
    StartOffsets(Vec<f64>),
    /// Recognition: symmetric expansions (seconds) of the segment;
    /// each scope is `(s - x, e + x)` clipped to footage.
    WindowExpansions(Vec<f64>),
    /// Activity recognition: the video split into this many equal parts.
    Partitions(usize),
}

impl RecentSpec {
    /// Number of recent scopes (and therefore of TABs downstream).
    pub fn scope_count(&self) -> usize {
        match self {
            RecentSpec::StartOffsets(v) => v.len(),
            RecentSpec::WindowExpansions(v) => v.len(),
            RecentSpec::Partitions(n) => *n,
        }
    }
}

/// Extent that the spanning snippet sets cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpanningScope {
    /// Anticipation: seconds before the boundary. Recognition: margin
    /// added on both sides of the segment.
    Seconds(f64),
    EntireVideo,
}

/// Task selector for sampling and training defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Anticipation,
    Recognition,
    Activity,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Anticipation => "anticipation",
            Task::Recognition => "recognition",
            Task::Activity => "activity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "anticipation" => Some(Task::Anticipation),
            "recognition" => Some(Task::Recognition),
            "activity" => Some(Task::Activity),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Task-specific sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub task: Task,
    pub recent: RecentSpec,
    /// Snippets per recent scope (K_R).
    pub recent_snippets: usize,
    /// Spanning snippet counts, one set per scale.
    pub spanning_scales: Vec<usize>,
    pub spanning_scope: SpanningScope,
    /// Seconds between observation boundary and action start (τ).
    pub anticipation_gap: f64,
}

impl SamplingConfig {
    /// EPIC-KITCHENS-100 anticipation: recent starts 1.6/1.2/0.8/0.4 s
    /// before the boundary with 2 snippets each, spanning 6 s at scales
    /// {2, 3, 5}, gap 1 s.
    pub fn epic100_anticipation() -> Self {
        Self {
            task: Task::Anticipation,
            recent: RecentSpec::StartOffsets(vec![1.6, 1.2, 0.8, 0.4]),
            recent_snippets: 2,
            spanning_scales: vec![2, 3, 5],
            spanning_scope: SpanningScope::Seconds(6.0),
            anticipation_gap: 1.0,
        }
    }

    /// EPIC-KITCHENS-100 recognition: segment windows expanded by
    /// 0/1/2/3 s with 5 snippets each, spanning (s-6, e+6) at scales
    /// {2, 3, 5}.
    pub fn epic100_recognition() -> Self {
        Self {
            task: Task::Recognition,
            recent: RecentSpec::WindowExpansions(vec![0.0, 1.0, 2.0, 3.0]),
            recent_snippets: 5,
            spanning_scales: vec![2, 3, 5],
            spanning_scope: SpanningScope::Seconds(6.0),
            anticipation_gap: 0.0,
        }
    }

    /// Breakfast activity recognition: video thirds with 5 snippets
    /// each, spanning the entire video at scales {10, 15, 20}.
    pub fn breakfast_activity() -> Self {
        Self {
            task: Task::Activity,
            recent: RecentSpec::Partitions(3),
            recent_snippets: 5,
            spanning_scales: vec![10, 15, 20],
            spanning_scope: SpanningScope::EntireVideo,
            anticipation_gap: 0.0,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Anticipation => Self::epic100_anticipation(),
            Task::Recognition => Self::epic100_recognition(),
            Task::Activity => Self::breakfast_activity(),
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.recent_snippets == 0 {
            return Err(SampleError::InvalidConfig("recent_snippets must be >= 1".into()));
        }
        if self.spanning_scales.is_empty() || self.spanning_scales.contains(&0) {
            return Err(SampleError::InvalidConfig(
                "spanning_scales must be non-empty positive counts".into(),
            ));
        }
        let mut seen = self.spanning_scales.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.spanning_scales.len() {
            return Err(SampleError::InvalidConfig("spanning scales must be distinct".into()));
        }
        match &self.recent {
            RecentSpec::StartOffsets(offsets) => {
                if offsets.is_empty() || offsets.iter().any(|&o| o <= 0.0) {
                    return Err(SampleError::InvalidConfig(
                        "recent start offsets must be positive".into(),
                    ));
                }
            }
            RecentSpec::WindowExpansions(exps) => {
                if exps.is_empty() || exps.iter().any(|&x| x < 0.0) {
                    return Err(SampleError::InvalidConfig(
                        "window expansions must be non-negative".into(),
                    ));
                }
            }
            RecentSpec::Partitions(n) => {
                if *n == 0 {
                    return Err(SampleError::InvalidConfig("partitions must be >= 1".into()));
                }
            }
        }
        if let SpanningScope::Seconds(s) = self.spanning_scope {
            if s <= 0.0 {
                return Err(SampleError::InvalidConfig("spanning scope must be positive".into()));
            }
        }
        if self.task == Task::Anticipation && self.anticipation_gap <= 0.0 {
            return Err(SampleError::InvalidConfig(
                "anticipation gap must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of recent scopes, one TAB each.
    pub fn recent_scopes(&self) -> usize {
        self.recent.scope_count()
    }
}

/// A window that had to be clipped to the available footage.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipNote {
    pub kind: SnippetKind,
    pub index: usize,
    pub requested: (f64, f64),
    pub actual: (f64, f64),
}

/// Sampler output for one segment: one snippet set per recent scope,
/// one per spanning scale, plus any clipping that occurred.
#[derive(Debug, Clone)]
pub struct SampledInputs {
    pub recents: Vec<SnippetSet>,
    pub spannings: Vec<SnippetSet>,
    pub clips: Vec<ClipNote>,
}

/// Errors raised while sampling snippets.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleError {
    EmptySequence { video_id: String },
    FeatureShape { video_id: String, frames: usize, dim: usize, len: usize },
    UnsortedTimestamps { video_id: String },
    InvalidScope { video_id: String, start: f64, end: f64 },
    NoFramesInScope { video_id: String, start: f64, end: f64 },
    InsufficientHistory { video_id: String, boundary: f64 },
    InvalidConfig(String),
}

impl fmt::Display for SampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleError::EmptySequence { video_id } => {
                write!(f, "{video_id}: sequence has no frames or zero feature width")
            }
            SampleError::FeatureShape { video_id, frames, dim, len } => write!(
                f,
                "{video_id}: {frames} frames x {dim} dims does not match buffer of {len}"
            ),
            SampleError::UnsortedTimestamps { video_id } => {
                write!(f, "{video_id}: timestamps not strictly increasing")
            }
            SampleError::InvalidScope { video_id, start, end } => {
                write!(f, "{video_id}: invalid scope ({start:.3}, {end:.3})")
            }
            SampleError::NoFramesInScope { video_id, start, end } => {
                write!(f, "{video_id}: no frames in scope ({start:.3}, {end:.3})")
            }
            SampleError::InsufficientHistory { video_id, boundary } => {
                write!(f, "{video_id}: no features before boundary {boundary:.3}")
            }
            SampleError::InvalidConfig(msg) => write!(f, "invalid sampling config: {msg}"),
        }
    }
}

impl std::error::Error for SampleError {}

/// True when `ts` falls inside sub-interval `k` of `K` over `(start, end)`.
fn in_sub_interval(ts: f64, start: f64, end: f64, k: usize, count: usize, rule: EndRule) -> bool {
    let width = (end - start) / count as f64;
    let lo = start + k as f64 * width;
    let hi = if k + 1 == count { end } else { start + (k + 1) as f64 * width };
    if k + 1 == count && rule == EndRule::Inclusive {
        ts >= lo && ts <= hi
    } else {
        ts >= lo && ts < hi
    }
}

/// Distance from a timestamp to a sub-interval, zero inside it.
fn interval_distance(ts: f64, lo: f64, hi: f64) -> f64 {
    if ts < lo {
        lo - ts
    } else if ts > hi {
        ts - hi
    } else {
        0.0
    }
}

/// Max-pools the frames of `scope` into `count` equal snippets.
///
/// Frames belong to the sub-interval `[lo, hi)` containing their
/// timestamp; under [`EndRule::Inclusive`] the final sub-interval also
/// claims its right endpoint. A sub-interval with no frame borrows the
/// nearest in-scope frame (earlier frame on distance ties). Fails if the
/// whole scope holds no frames.
pub fn pool_snippets<S: FrameSource + ?Sized>(
    seq: &S,
    scope: (f64, f64),
    count: usize,
    kind: SnippetKind,
    rule: EndRule,
) -> Result<SnippetSet, SampleError> {
    let (start, end) = scope;
    if count == 0 || start > end || !start.is_finite() || !end.is_finite() {
        return Err(SampleError::InvalidScope {
            video_id: seq.video_id().to_string(),
            start,
            end,
        });
    }
    // Frames inside the scope, under the same end rule as the last
    // sub-interval.
    let in_scope: Vec<usize> = (0..seq.len())
        .filter(|&i| {
            let ts = seq.timestamp(i);
            ts >= start
                && match rule {
                    EndRule::Inclusive => ts <= end,
                    EndRule::Exclusive => ts < end,
                }
        })
        .collect();
    if in_scope.is_empty() {
        return Err(SampleError::NoFramesInScope {
            video_id: seq.video_id().to_string(),
            start,
            end,
        });
    }

    let dim = seq.dim();
    let width = (end - start) / count as f64;
    let mut vectors = Vec::with_capacity(count * dim);
    let mut extents = Vec::with_capacity(count);
    for k in 0..count {
        let members: Vec<usize> = in_scope
            .iter()
            .copied()
            .filter(|&i| in_sub_interval(seq.timestamp(i), start, end, k, count, rule))
            .collect();
        let pooled: Vec<f32> = if members.is_empty() {
            let lo = start + k as f64 * width;
            let hi = if k + 1 == count { end } else { lo + width };
            let nearest = in_scope
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = interval_distance(seq.timestamp(a), lo, hi);
                    let db = interval_distance(seq.timestamp(b), lo, hi);
                    da.partial_cmp(&db)
                        .expect("finite distances")
                        .then(a.cmp(&b))
                })
                .expect("in_scope is non-empty");
            seq.row(nearest).to_vec()
        } else {
            let mut acc = seq.row(members[0]).to_vec();
            for &idx in &members[1..] {
                for (a, &v) in acc.iter_mut().zip(seq.row(idx)) {
                    if v > *a {
                        *a = v;
                    }
                }
            }
            acc
        };
        vectors.extend_from_slice(&pooled);
        extents.push((start + k as f64 * width, if k + 1 == count { end } else { start + (k + 1) as f64 * width }));
    }
    Ok(SnippetSet {
        vectors,
        dim,
        extents,
        kind,
    })
}

fn clip_window(
    requested: (f64, f64),
    footage: (f64, f64),
    kind: SnippetKind,
    index: usize,
    clips: &mut Vec<ClipNote>,
) -> (f64, f64) {
    let actual = (requested.0.max(footage.0), requested.1.min(footage.1));
    if actual != requested {
        clips.push(ClipNote {
            kind,
            index,
            requested,
            actual,
        });
    }
    actual
}

/// Samples recent and spanning sets for anticipating the action that
/// starts at `action_start`. The observation boundary is
/// `t = action_start - gap`; nothing at or after `t` is read.
pub fn sample_anticipation<S: FrameSource + ?Sized>(
    seq: &S,
    action_start: f64,
    cfg: &SamplingConfig,
) -> Result<SampledInputs, SampleError> {
    cfg.validate()?;
    let t = action_start - cfg.anticipation_gap;
    let has_history = seq.len() > 0 && seq.timestamp(0) < t;
    if t <= 0.0 || !has_history {
        return Err(SampleError::InsufficientHistory {
            video_id: seq.video_id().to_string(),
            boundary: t,
        });
    }
    let offsets = match &cfg.recent {
        RecentSpec::StartOffsets(offsets) => offsets,
        _ => {
            return Err(SampleError::InvalidConfig(
                "anticipation requires recent start offsets".into(),
            ))
        }
    };
    let mut recents = Vec::with_capacity(offsets.len());
    for &offset in offsets {
        recents.push(pool_snippets(
            seq,
            (t - offset, t),
            cfg.recent_snippets,
            SnippetKind::Recent,
            EndRule::Exclusive,
        )?);
    }
    let span_seconds = match cfg.spanning_scope {
        SpanningScope::Seconds(s) => s,
        SpanningScope::EntireVideo => t - seq.timestamp(0),
    };
    let mut spannings = Vec::with_capacity(cfg.spanning_scales.len());
    for &k in &cfg.spanning_scales {
        spannings.push(pool_snippets(
            seq,
            (t - span_seconds, t),
            k,
            SnippetKind::Spanning,
            EndRule::Exclusive,
        )?);
    }
    Ok(SampledInputs {
        recents,
        spannings,
        clips: Vec::new(),
    })
}

/// Samples recent and spanning sets for recognizing the segment
/// `(start, end)`. Expanded windows are clipped to the footage and the
/// clipping recorded.
pub fn sample_recognition<S: FrameSource + ?Sized>(
    seq: &S,
    segment: (f64, f64),
    cfg: &SamplingConfig,
) -> Result<SampledInputs, SampleError> {
    cfg.validate()?;
    let (s, e) = segment;
    if s >= e {
        return Err(SampleError::InvalidScope {
            video_id: seq.video_id().to_string(),
            start: s,
            end: e,
        });
    }
    let expansions = match &cfg.recent {
        RecentSpec::WindowExpansions(exps) => exps,
        _ => {
            return Err(SampleError::InvalidConfig(
                "recognition requires window expansions".into(),
            ))
        }
    };
    let footage = footage_span(seq)?;
    let mut clips = Vec::new();
    let mut recents = Vec::with_capacity(expansions.len());
    for (i, &x) in expansions.iter().enumerate() {
        let scope = clip_window((s - x, e + x), footage, SnippetKind::Recent, i, &mut clips);
        recents.push(pool_snippets(
            seq,
            scope,
            cfg.recent_snippets,
            SnippetKind::Recent,
            EndRule::Inclusive,
        )?);
    }
    let mut spannings = Vec::with_capacity(cfg.spanning_scales.len());
    for (i, &k) in cfg.spanning_scales.iter().enumerate() {
        let requested = match cfg.spanning_scope {
            SpanningScope::Seconds(margin) => (s - margin, e + margin),
            SpanningScope::EntireVideo => footage,
        };
        let scope = clip_window(requested, footage, SnippetKind::Spanning, i, &mut clips);
        spannings.push(pool_snippets(
            seq,
            scope,
            k,
            SnippetKind::Spanning,
            EndRule::Inclusive,
        )?);
    }
    Ok(SampledInputs {
        recents,
        spannings,
        clips,
    })
}

/// Samples recent and spanning sets for whole-video activity
/// recognition: the recent scopes are equal partitions of the video and
/// the spanning sets cover all of it.
pub fn sample_activity<S: FrameSource + ?Sized>(
    seq: &S,
    cfg: &SamplingConfig,
) -> Result<SampledInputs, SampleError> {
    cfg.validate()?;
    let parts = match &cfg.recent {
        RecentSpec::Partitions(n) => *n,
        _ => {
            return Err(SampleError::InvalidConfig(
                "activity recognition requires partition counts".into(),
            ))
        }
    };
    let (first, last) = footage_span(seq)?;
    let width = (last - first) / parts as f64;
    let mut recents = Vec::with_capacity(parts);
    for p in 0..parts {
        let lo = first + p as f64 * width;
        let hi = if p + 1 == parts { last } else { first + (p + 1) as f64 * width };
        recents.push(pool_snippets(
            seq,
            (lo, hi),
            cfg.recent_snippets,
            SnippetKind::Recent,
            EndRule::Inclusive,
        )?);
    }
    let mut spannings = Vec::with_capacity(cfg.spanning_scales.len());
    for &k in &cfg.spanning_scales {
        spannings.push(pool_snippets(
            seq,
            (first, last),
            k,
            SnippetKind::Spanning,
            EndRule::Inclusive,
        )?);
    }
    Ok(SampledInputs {
        recents,
        spannings,
        clips: Vec::new(),
    })
}

/// Samples one segment according to the configured task.
pub fn sample_for_task<S: FrameSource + ?Sized>(
    seq: &S,
    segment: (f64, f64),
    cfg: &SamplingConfig,
) -> Result<SampledInputs, SampleError> {
    match cfg.task {
        Task::Anticipation => sample_anticipation(seq, segment.0, cfg),
        Task::Recognition => sample_recognition(seq, segment, cfg),
        Task::Activity => sample_activity(seq, cfg),
    }
}

fn footage_span<S: FrameSource + ?Sized>(seq: &S) -> Result<(f64, f64), SampleError> {
    if seq.is_empty() {
        return Err(SampleError::EmptySequence {
            video_id: seq.video_id().to_string(),
        });
    }
    Ok((seq.timestamp(0), seq.timestamp(seq.len() - 1)))
}
