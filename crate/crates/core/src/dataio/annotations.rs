//! Segment annotations and evaluation subset lists.
//!
//! Annotations are comma-separated text, one segment per row:
//!
//! ```text
//! video_id,start_sec,stop_sec,verb_class,noun_class,action_class,participant_id
//! ```
//!
//! A header row is accepted and skipped; `#` starts a comment. Subset
//! lists are sectioned text (`[unseen_participants]`, `[tail_verbs]`,
//! `[tail_nouns]`, `[tail_actions]`) with one entry per line.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{io_err, DataError};

/// One annotated segment.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub video_id: String,
    pub start_sec: f64,
    pub stop_sec: f64,
    pub verb_class: usize,
    pub noun_class: usize,
    pub action_class: usize,
    pub participant_id: String,
}

/// Validated list of segments with the inferred vocabulary sizes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationTable {
    rows: Vec<AnnotationRow>,
    verb_count: usize,
    noun_count: usize,
    action_count: usize,
}

impl AnnotationTable {
    pub fn from_rows(rows: Vec<AnnotationRow>) -> Self {
        let verb_count = rows.iter().map(|r| r.verb_class + 1).max().unwrap_or(0);
        let noun_count = rows.iter().map(|r| r.noun_class + 1).max().unwrap_or(0);
        let action_count = rows.iter().map(|r| r.action_class + 1).max().unwrap_or(0);
        AnnotationTable {
            rows,
            verb_count,
            noun_count,
            action_count,
        }
    }

    pub fn rows(&self) -> &[AnnotationRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Smallest vocabulary sizes covering the observed class indices.
    pub fn vocab_sizes(&self) -> (usize, usize, usize) {
        (self.verb_count, self.noun_count, self.action_count)
    }

    /// Stable id of row `idx`: `<video_id>:<ordinal>`.
    pub fn segment_id(&self, idx: usize) -> String {
        format!("{}:{idx}", self.rows[idx].video_id)
    }

    /// Action-to-(verb, noun) map over `classes` entries; `None` if some
    /// action class never occurs in the table.
    pub fn action_map(&self, classes: usize) -> Option<Vec<(usize, usize)>> {
        let mut map = vec![None; classes];
        for r in &self.rows {
            if r.action_class < classes {
                map[r.action_class] = Some((r.verb_class, r.noun_class));
            }
        }
        map.into_iter().collect()
    }
}

/// Parses annotation rows from text. `origin` is used in errors.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<AnnotationTable, DataError> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if lineno == 0 && fields.first() == Some(&"video_id") {
            continue;
        }
        if fields.len() != 7 {
            return Err(DataError::MalformedRow {
                path: origin.to_path_buf(),
                line,
                reason: format!("expected 7 comma-separated fields, got {}", fields.len()),
            });
        }
        let num = |idx: usize, what: &str| -> Result<f64, DataError> {
            fields[idx].parse::<f64>().map_err(|_| DataError::MalformedRow {
                path: origin.to_path_buf(),
                line,
                reason: format!("{what} `{}` is not a number", fields[idx]),
            })
        };
        let class = |idx: usize, what: &str| -> Result<usize, DataError> {
            fields[idx].parse::<usize>().map_err(|_| DataError::MalformedRow {
                path: origin.to_path_buf(),
                line,
                reason: format!("{what} `{}` is not a class index", fields[idx]),
            })
        };
        let start_sec = num(1, "start_sec")?;
        let stop_sec = num(2, "stop_sec")?;
        if !start_sec.is_finite() || !stop_sec.is_finite() || start_sec >= stop_sec {
            return Err(DataError::InvalidSegment {
                path: origin.to_path_buf(),
                line,
                start: start_sec,
                stop: stop_sec,
            });
        }
        rows.push(AnnotationRow {
            video_id: fields[0].to_string(),
            start_sec,
            stop_sec,
            verb_class: class(3, "verb_class")?,
            noun_class: class(4, "noun_class")?,
            action_class: class(5, "action_class")?,
            participant_id: fields[6].to_string(),
        });
    }
    Ok(AnnotationTable::from_rows(rows))
}

pub fn load_annotations(path: &Path) -> Result<AnnotationTable, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(table: &AnnotationTable, path: &Path) -> Result<(), DataError> {
    let mut text = String::from(
        "video_id,start_sec,stop_sec,verb_class,noun_class,action_class,participant_id\n",
    );
    for r in table.rows() {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.video_id, r.start_sec, r.stop_sec, r.verb_class, r.noun_class, r.action_class,
            r.participant_id
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Evaluation subsets: participants unseen during training and tail
/// (rare) classes per label level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubsetLists {
    pub unseen_participants: BTreeSet<String>,
    pub tail_verbs: BTreeSet<usize>,
    pub tail_nouns: BTreeSet<usize>,
    pub tail_actions: BTreeSet<usize>,
}

pub fn load_subsets(path: &Path) -> Result<SubsetLists, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut subsets = SubsetLists::default();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
            if !matches!(
                section.as_str(),
                "unseen_participants" | "tail_verbs" | "tail_nouns" | "tail_actions"
            ) {
                return Err(DataError::UnknownSection {
                    path: path.to_path_buf(),
                    line,
                    section,
                });
            }
            continue;
        }
        let class_entry = |set: &mut BTreeSet<usize>| -> Result<(), DataError> {
            let id = trimmed.parse::<usize>().map_err(|_| DataError::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("`{trimmed}` is not a class index"),
            })?;
            set.insert(id);
            Ok(())
        };
        match section.as_str() {
            "unseen_participants" => {
                subsets.unseen_participants.insert(trimmed.to_string());
            }
            "tail_verbs" => class_entry(&mut subsets.tail_verbs)?,
            "tail_nouns" => class_entry(&mut subsets.tail_nouns)?,
            "tail_actions" => class_entry(&mut subsets.tail_actions)?,
            _ => {
                return Err(DataError::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason: "entry before any [section] header".into(),
                })
            }
        }
    }
    Ok(subsets)
}

pub fn save_subsets(subsets: &SubsetLists, path: &Path) -> Result<(), DataError> {
    let mut text = String::new();
    text.push_str("[unseen_participants]\n");
    for p in &subsets.unseen_participants {
        text.push_str(p);
        text.push('\n');
    }
    for (name, set) in [
        ("tail_verbs", &subsets.tail_verbs),
        ("tail_nouns", &subsets.tail_nouns),
        ("tail_actions", &subsets.tail_actions),
    ] {
        text.push_str(&format!("[{name}]\n"));
        for c in set {
            text.push_str(&format!("{c}\n"));
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}
