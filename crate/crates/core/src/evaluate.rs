//! Top-k accuracy, class-mean top-k recall, verb/noun marginalization,
//! multimodal late fusion, and the per-split metric report.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::dataio::{io_err, AnnotationTable, DataError, SubsetLists};

/// Published full-scale reference scores for this architecture, kept
/// for documentation; the desk-scale pipeline does not attempt to
/// reproduce them (they require ~100 h of backbone CNN features).
pub mod reference {
    /// EPIC-KITCHENS-100 validation, anticipation, four-modality fusion:
    /// action class-mean top-5 recall (%).
    pub const EPIC100_ANTICIPATION_FUSION_ACTION_RECALL: f64 = 14.73;
    /// EPIC-KITCHENS-100 validation, recognition, four-modality fusion:
    /// action top-1 accuracy (%).
    pub const EPIC100_RECOGNITION_FUSION_ACTION_TOP1: f64 = 45.26;
    /// Breakfast activity recognition on frozen I3D features: accuracy (%).
    pub const BREAKFAST_ACTIVITY_ACCURACY: f64 = 80.8;
}

/// N segment ids with an N×C matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    ids: Vec<String>,
    classes: usize,
    scores: Vec<f64>,
}

/// Errors raised by metric computations.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    RowNotStochastic { row: usize, sum: f64 },
    ShapeMismatch { expected: usize, got: usize },
    KOutOfRange { k: usize, classes: usize },
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    EmptyInput,
    EmptyClassSubset,
    IdMismatch { index: usize, left: String, right: String },
    UnknownSegment { id: String },
    UnmappedAction { class: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::RowNotStochastic { row, sum } => {
                write!(f, "prediction row {row} sums to {sum}, not 1")
            }
            EvalError::ShapeMismatch { expected, got } => {
                write!(f, "expected {expected} entries, got {got}")
            }
            EvalError::KOutOfRange { k, classes } => {
                write!(f, "k={k} out of range for {classes} classes")
            }
            EvalError::LabelOutOfRange { row, label, classes } => {
                write!(f, "row {row}: label {label} out of range for {classes} classes")
            }
            EvalError::EmptyInput => write!(f, "empty input"),
            EvalError::EmptyClassSubset => {
                write!(f, "no classes with instances in the requested subset")
            }
            EvalError::IdMismatch { index, left, right } => {
                write!(f, "segment id mismatch at {index}: `{left}` vs `{right}`")
            }
            EvalError::UnknownSegment { id } => {
                write!(f, "prediction for unknown segment `{id}`")
            }
            EvalError::UnmappedAction { class } => {
                write!(f, "action class {class} has no (verb, noun) mapping")
            }
        }
    }
}

impl std::error::Error for EvalError {}

impl PredictionMatrix {
    /// Validates shape, non-negativity, and row sums (1 ± 1e-5).
    pub fn new(ids: Vec<String>, classes: usize, scores: Vec<f64>) -> Result<Self, EvalError> {
        if classes == 0 || scores.len() != ids.len() * classes {
            return Err(EvalError::ShapeMismatch {
                expected: ids.len() * classes,
                got: scores.len(),
            });
        }
        for (row, chunk) in scores.chunks(classes).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > 1e-5 || chunk.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(EvalError::RowNotStochastic { row, sum });
            }
        }
        Ok(PredictionMatrix {
            ids,
            classes,
            scores,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.scores[idx * self.classes..(idx + 1) * self.classes]
    }

    /// Row subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> PredictionMatrix {
        let mut ids = Vec::with_capacity(indices.len());
        let mut scores = Vec::with_capacity(indices.len() * self.classes);
        for &i in indices {
            ids.push(self.ids[i].clone());
            scores.extend_from_slice(self.row(i));
        }
        PredictionMatrix {
            ids,
            classes: self.classes,
            scores,
        }
    }
}

/// Rank of `label` in a score row: the number of classes that beat it.
/// Ties rank the lower class index first.
fn label_rank(row: &[f64], label: usize) -> usize {
    let target = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < label))
        .count()
}

/// Percentage of rows whose label ranks within the top `k` scores.
pub fn topk_accuracy(preds: &PredictionMatrix, labels: &[usize], k: usize) -> Result<f64, EvalError> {
    if labels.len() != preds.len() {
        return Err(EvalError::ShapeMismatch {
            expected: preds.len(),
            got: labels.len(),
        });
    }
    if k == 0 || k > preds.classes() {
        return Err(EvalError::KOutOfRange {
            k,
            classes: preds.classes(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut hits = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        if label >= preds.classes() {
            return Err(EvalError::LabelOutOfRange {
                row,
                label,
                classes: preds.classes(),
            });
        }
        if label_rank(preds.row(row), label) < k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Mean over classes (optionally restricted to `class_subset`, always
/// restricted to classes that occur in `labels`) of per-class top-k
/// recall, as a percentage.
pub fn class_mean_topk_recall(
    preds: &PredictionMatrix,
    labels: &[usize],
    k: usize,
    class_subset: Option<&BTreeSet<usize>>,
) -> Result<f64, EvalError> {
    if labels.len() != preds.len() {
        return Err(EvalError::ShapeMismatch {
            expected: preds.len(),
            got: labels.len(),
        });
    }
    if k == 0 || k > preds.classes() {
        return Err(EvalError::KOutOfRange {
            k,
            classes: preds.classes(),
        });
    }
    let mut counts: HashMap<usize, (usize, usize)> = HashMap::new();
    for (row, &label) in labels.iter().enumerate() {
        if label >= preds.classes() {
            return Err(EvalError::LabelOutOfRange {
                row,
                label,
                classes: preds.classes(),
            });
        }
        if let Some(subset) = class_subset {
            if !subset.contains(&label) {
                continue;
            }
        }
        let entry = counts.entry(label).or_insert((0, 0));
        entry.0 += 1;
        if label_rank(preds.row(row), label) < k {
            entry.1 += 1;
        }
    }
    if counts.is_empty() {
        return Err(EvalError::EmptyClassSubset);
    }
    let recall_sum: f64 = counts
        .values()
        .map(|&(total, hit)| hit as f64 / total as f64)
        .sum();
    Ok(100.0 * recall_sum / counts.len() as f64)
}

/// Elementwise mean of the score matrices ("average voting").
///
/// Inputs are summed in a content-canonical order so that permuting the
/// modality list cannot change rounding; fusing a matrix with itself is
/// exactly the identity.
pub fn late_fuse(inputs: &[PredictionMatrix]) -> Result<PredictionMatrix, EvalError> {
    let first = inputs.first().ok_or(EvalError::EmptyInput)?;
    for m in &inputs[1..] {
        if m.classes != first.classes || m.len() != first.len() {
            return Err(EvalError::ShapeMismatch {
                expected: first.scores.len(),
                got: m.scores.len(),
            });
        }
        for (i, (a, b)) in first.ids.iter().zip(&m.ids).enumerate() {
            if a != b {
                return Err(EvalError::IdMismatch {
                    index: i,
                    left: a.clone(),
                    right: b.clone(),
                });
            }
        }
    }
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&inputs[a].scores, &inputs[b].scores);
        sa.iter()
            .zip(sb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let inv = 1.0 / inputs.len() as f64;
    let mut scores = vec![0.0f64; first.scores.len()];
    for &idx in &order {
        for (acc, &v) in scores.iter_mut().zip(&inputs[idx].scores) {
            *acc += v;
        }
    }
    for v in &mut scores {
        *v *= inv;
    }
    PredictionMatrix::new(first.ids.clone(), first.classes, scores)
}

/// Sums action probabilities over the classes mapping to each verb and
/// noun. `map[action] = (verb, noun)` must cover every action column.
pub fn marginalize_action_to_verb_noun(
    preds: &PredictionMatrix,
    map: &[(usize, usize)],
) -> Result<(PredictionMatrix, PredictionMatrix), EvalError> {
    if map.len() < preds.classes() {
        return Err(EvalError::UnmappedAction { class: map.len() });
    }
    let verb_count = map.iter().map(|&(v, _)| v + 1).max().unwrap_or(0);
    let noun_count = map.iter().map(|&(_, n)| n + 1).max().unwrap_or(0);
    let mut verb_scores = vec![0.0f64; preds.len() * verb_count];
    let mut noun_scores = vec![0.0f64; preds.len() * noun_count];
    for i in 0..preds.len() {
        for (a, &p) in preds.row(i).iter().enumerate() {
            let (v, n) = map[a];
            verb_scores[i * verb_count + v] += p;
            noun_scores[i * noun_count + n] += p;
        }
    }
    let verbs = PredictionMatrix::new(preds.ids.clone(), verb_count, verb_scores)?;
    let nouns = PredictionMatrix::new(preds.ids.clone(), noun_count, noun_scores)?;
    Ok((verbs, nouns))
}

// ── Split report ────────────────────────────────────────────────────

/// Metrics for one (split, label level) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCell {
    pub top1: f64,
    pub top5: f64,
    /// Class-mean top-5 recall; absent when every class present has
    /// fewer instances than required (never at desk scale).
    pub class_mean_recall_top5: Option<f64>,
}

/// Verb/noun/action metrics for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMetrics {
    pub verb: Option<MetricCell>,
    pub noun: Option<MetricCell>,
    pub action: MetricCell,
}

/// The full evaluation grid: overall plus the unseen-participant and
/// tail-class breakdowns when subset definitions are available.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub segments: usize,
    pub overall: LevelMetrics,
    pub unseen: Option<LevelMetrics>,
    pub tail: Option<LevelMetrics>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    /// Machine-readable table: one row per (split, level), tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("split\tlevel\ttop1\ttop5\tclass_mean_recall_top5\n");
        let mut emit = |split: &str, level: &str, cell: &MetricCell| {
            let recall = cell
                .class_mean_recall_top5
                .map_or("-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{split}\t{level}\t{:.4}\t{:.4}\t{recall}\n",
                cell.top1, cell.top5
            ));
        };
        let mut level_rows = |split: &str, level: &LevelMetrics| {
            if let Some(v) = &level.verb {
                emit(split, "verb", v);
            }
            if let Some(n) = &level.noun {
                emit(split, "noun", n);
            }
            emit(split, "action", &level.action);
        };
        level_rows("overall", &self.overall);
        if let Some(u) = &self.unseen {
            level_rows("unseen", u);
        }
        if let Some(t) = &self.tail {
            level_rows("tail", t);
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "segments = {}", self.segments)?;
        let cell = |f: &mut fmt::Formatter<'_>, split: &str, level: &str, c: &MetricCell| {
            writeln!(f, "{split}.{level}.top1 = {:.4}", c.top1)?;
            writeln!(f, "{split}.{level}.top5 = {:.4}", c.top5)?;
            if let Some(r) = c.class_mean_recall_top5 {
                writeln!(f, "{split}.{level}.class_mean_recall_top5 = {r:.4}")?;
            }
            Ok(())
        };
        let levels = |f: &mut fmt::Formatter<'_>, split: &str, m: &LevelMetrics| {
            if let Some(v) = &m.verb {
                cell(f, split, "verb", v)?;
            }
            if let Some(n) = &m.noun {
                cell(f, split, "noun", n)?;
            }
            cell(f, split, "action", &m.action)
        };
        levels(f, "overall", &self.overall)?;
        if let Some(u) = &self.unseen {
            levels(f, "unseen", u)?;
        }
        if let Some(t) = &self.tail {
            levels(f, "tail", t)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning = {w}")?;
        }
        Ok(())
    }
}

fn metric_cell(
    preds: &PredictionMatrix,
    labels: &[usize],
    recall_subset: Option<&BTreeSet<usize>>,
) -> Result<MetricCell, EvalError> {
    let k5 = 5.min(preds.classes());
    let recall = match class_mean_topk_recall(preds, labels, k5, recall_subset) {
        Ok(v) => Some(v),
        Err(EvalError::EmptyClassSubset) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricCell {
        top1: topk_accuracy(preds, labels, 1)?,
        top5: topk_accuracy(preds, labels, k5)?,
        class_mean_recall_top5: recall,
    })
}

/// Scores `preds` against the matching annotation rows, producing the
/// overall/unseen/tail × verb/noun/action grid.
///
/// Verb and noun cells require the annotation table to determine the
/// (verb, noun) of every action class; otherwise they are omitted with a
/// warning. Unseen and tail cells require `subsets`.
pub fn evaluate_split(
    preds: &PredictionMatrix,
    annotations: &AnnotationTable,
    subsets: Option<&SubsetLists>,
) -> Result<MetricReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut warnings = Vec::new();

    // Resolve each prediction row to its annotation.
    let mut by_id = HashMap::with_capacity(annotations.len());
    for i in 0..annotations.len() {
        by_id.insert(annotations.segment_id(i), i);
    }
    let rows: Vec<usize> = preds
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| EvalError::UnknownSegment { id: id.clone() })
        })
        .collect::<Result<_, _>>()?;
    let action_labels: Vec<usize> = rows.iter().map(|&r| annotations.rows()[r].action_class).collect();
    let verb_labels: Vec<usize> = rows.iter().map(|&r| annotations.rows()[r].verb_class).collect();
    let noun_labels: Vec<usize> = rows.iter().map(|&r| annotations.rows()[r].noun_class).collect();

    let marginals = match annotations.action_map(preds.classes()) {
        Some(map) => Some(marginalize_action_to_verb_noun(preds, &map)?),
        None => {
            warnings.push(
                "annotations do not cover every action class; verb/noun metrics omitted".into(),
            );
            None
        }
    };

    let level_metrics = |preds: &PredictionMatrix,
                         marginals: &Option<(PredictionMatrix, PredictionMatrix)>,
                         indices: Option<&[usize]>,
                         tail: Option<&SubsetLists>|
     -> Result<LevelMetrics, EvalError> {
        let pick = |labels: &[usize]| -> Vec<usize> {
            match indices {
                Some(idx) => idx.iter().map(|&i| labels[i]).collect(),
                None => labels.to_vec(),
            }
        };
        let subset_preds = |m: &PredictionMatrix| match indices {
            Some(idx) => m.select(idx),
            None => m.clone(),
        };
        let action = metric_cell(
            &subset_preds(preds),
            &pick(&action_labels),
            tail.map(|s| &s.tail_actions),
        )?;
        let (verb, noun) = match marginals {
            Some((vp, np)) => (
                Some(metric_cell(
                    &subset_preds(vp),
                    &pick(&verb_labels),
                    tail.map(|s| &s.tail_verbs),
                )?),
                Some(metric_cell(
                    &subset_preds(np),
                    &pick(&noun_labels),
                    tail.map(|s| &s.tail_nouns),
                )?),
            ),
            None => (None, None),
        };
        Ok(LevelMetrics { verb, noun, action })
    };

    let overall = level_metrics(preds, &marginals, None, None)?;

    let (unseen, tail) = match subsets {
        None => {
            warnings.push("no subset definitions; overall-only report".into());
            (None, None)
        }
        Some(subsets) => {
            let unseen_idx: Vec<usize> = rows
                .iter()
                .enumerate()
                .filter(|&(_, &r)| {
                    subsets
                        .unseen_participants
                        .contains(&annotations.rows()[r].participant_id)
                })
                .map(|(i, _)| i)
                .collect();
            let unseen = if unseen_idx.is_empty() {
                warnings.push("unseen-participant subset matches no segments; cells omitted".into());
                None
            } else {
                Some(level_metrics(preds, &marginals, Some(&unseen_idx), None)?)
            };

            // Tail accuracies restrict to instances whose true label is a
            // tail class; tail class-mean recall restricts the class set.
            let tail = if subsets.tail_actions.is_empty() {
                warnings.push("tail-class subset is empty; cells omitted".into());
                None
            } else {
                let tail_action_idx: Vec<usize> = action_labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, l)| subsets.tail_actions.contains(l))
                    .map(|(i, _)| i)
                    .collect();
                if tail_action_idx.is_empty() {
                    warnings
                        .push("no segments with tail-class labels in this split; cells omitted".into());
                    None
                } else {
                    let action = metric_cell(
                        &preds.select(&tail_action_idx),
                        &tail_action_idx.iter().map(|&i| action_labels[i]).collect::<Vec<_>>(),
                        Some(&subsets.tail_actions),
                    )?;
                    let verb_noun = match &marginals {
                        Some((vp, np)) => {
                            let verb_idx: Vec<usize> = verb_labels
                                .iter()
                                .enumerate()
                                .filter(|&(_, l)| subsets.tail_verbs.contains(l))
                                .map(|(i, _)| i)
                                .collect();
                            let noun_idx: Vec<usize> = noun_labels
                                .iter()
                                .enumerate()
                                .filter(|&(_, l)| subsets.tail_nouns.contains(l))
                                .map(|(i, _)| i)
                                .collect();
                            let verb = if verb_idx.is_empty() {
                                None
                            } else {
                                Some(metric_cell(
                                    &vp.select(&verb_idx),
                                    &verb_idx.iter().map(|&i| verb_labels[i]).collect::<Vec<_>>(),
                                    Some(&subsets.tail_verbs),
                                )?)
                            };
                            let noun = if noun_idx.is_empty() {
                                None
                            } else {
                                Some(metric_cell(
                                    &np.select(&noun_idx),
                                    &noun_idx.iter().map(|&i| noun_labels[i]).collect::<Vec<_>>(),
                                    Some(&subsets.tail_nouns),
                                )?)
                            };
                            (verb, noun)
                        }
                        None => (None, None),
                    };
                    Some(LevelMetrics {
                        verb: verb_noun.0,
                        noun: verb_noun.1,
                        action,
                    })
                }
            };
            (unseen, tail)
        }
    };

    Ok(MetricReport {
        segments: preds.len(),
        overall,
        unseen,
        tail,
        warnings,
    })
}

// ── Prediction files ────────────────────────────────────────────────

/// Writes `segment_id,<C probabilities>` rows under a header. Floats use
/// the shortest round-trip representation, so read-back is exact.
pub fn write_predictions(preds: &PredictionMatrix, path: &Path) -> Result<(), DataError> {
    let mut text = String::from("segment_id");
    for c in 0..preds.classes() {
        text.push_str(&format!(",class{c}"));
    }
    text.push('\n');
    for i in 0..preds.len() {
        text.push_str(&preds.ids()[i]);
        for &v in preds.row(i) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_predictions(path: &Path) -> Result<PredictionMatrix, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::MalformedRow {
        path: path.to_path_buf(),
        line: 1,
        reason: "empty prediction file".into(),
    })?;
    let classes = header.split(',').count().saturating_sub(1);
    if !header.starts_with("segment_id") || classes == 0 {
        return Err(DataError::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: "expected header `segment_id,class0,...`".into(),
        });
    }
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for (lineno, raw) in lines {
        let line = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split(',');
        let id = fields.next().unwrap_or_default();
        let probs: Vec<f64> = fields
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("bad probability: {e}"),
            })?;
        if probs.len() != classes {
            return Err(DataError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("expected {classes} probabilities, got {}", probs.len()),
            });
        }
        ids.push(id.to_string());
        scores.extend(probs);
    }
    PredictionMatrix::new(ids, classes, scores).map_err(|e| DataError::MalformedRow {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })
}
