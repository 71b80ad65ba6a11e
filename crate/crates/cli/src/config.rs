//! Run configuration: named presets carrying the published model
//! parameters, layered under an optional `key = value` config file and
//! command-line flag overrides.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use tempagg::sampler::{Modality, SamplingConfig, Task};
use tempagg::trainer::TrainConfig;

use crate::CliError;

/// Fully resolved settings for a training or prediction run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub features_root: PathBuf,
    pub annotations: PathBuf,
    pub subsets: Option<PathBuf>,
    pub out: PathBuf,
    pub modality: Modality,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub hidden: usize,
    pub repr: usize,
    /// Action vocabulary size; inferred from the annotations when absent.
    pub classes: Option<usize>,
}

/// Preset names covering the published parameter tables.
pub const PRESETS: [&str; 3] = [
    "epic100-anticipation",
    "epic100-recognition",
    "breakfast-activity",
];

pub fn preset_for(name: &str) -> Result<(Task, SamplingConfig), CliError> {
    match name {
        "epic100-anticipation" => Ok((Task::Anticipation, SamplingConfig::epic100_anticipation())),
        "epic100-recognition" => Ok((Task::Recognition, SamplingConfig::epic100_recognition())),
        "breakfast-activity" => Ok((Task::Activity, SamplingConfig::breakfast_activity())),
        other => Err(CliError::Config(format!(
            "unknown preset `{other}`; expected one of {PRESETS:?}"
        ))),
    }
}

pub fn default_preset(task: Task) -> &'static str {
    match task {
        Task::Anticipation => "epic100-anticipation",
        Task::Recognition => "epic100-recognition",
        Task::Activity => "breakfast-activity",
    }
}

/// `key = value` lines; `#` comments and blank lines ignored.
pub fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "config {}:{}: expected `key = value`, got `{line}`",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flag-level overrides; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<String>,
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub subsets: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub modality: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    pub dropout: Option<f64>,
    pub hidden: Option<usize>,
    pub repr: Option<usize>,
    pub classes: Option<usize>,
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| CliError::Config(format!("field `{key}`: cannot parse `{value}`")))
}

/// Resolves preset, config file, and flags (in that precedence order)
/// into a validated [`RunConfig`].
pub fn resolve(overrides: &Overrides) -> Result<RunConfig, CliError> {
    let file: HashMap<String, String> = match &overrides.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };
    let lookup = |key: &str| file.get(key).map(String::as_str);

    // Task / preset. A flag beats the file; an explicit preset beats the
    // task's default preset.
    let task_name = overrides
        .task
        .as_deref()
        .or_else(|| lookup("task"))
        .map(str::to_string);
    let preset_name = overrides
        .preset
        .as_deref()
        .or_else(|| lookup("preset"))
        .map(str::to_string);
    let (task, sampling) = match (&preset_name, &task_name) {
        (Some(p), maybe_task) => {
            let (task, sampling) = preset_for(p)?;
            if let Some(t) = maybe_task {
                let named = Task::parse(t)
                    .ok_or_else(|| CliError::Config(format!("unknown task `{t}`")))?;
                if named != task {
                    return Err(CliError::Config(format!(
                        "task `{t}` conflicts with preset `{p}`"
                    )));
                }
            }
            (task, sampling)
        }
        (None, Some(t)) => {
            let task = Task::parse(t)
                .ok_or_else(|| CliError::Config(format!("unknown task `{t}`")))?;
            preset_for(default_preset(task))?
        }
        (None, None) => {
            return Err(CliError::Config(
                "missing `--task` or `--preset` (or config keys task/preset)".into(),
            ))
        }
    };

    let mut train = TrainConfig::for_task(task);
    if let Some(v) = lookup("seed") {
        train.seed = parse_field("seed", v)?;
    }
    if let Some(v) = lookup("epochs") {
        train.epochs = parse_field("epochs", v)?;
    }
    if let Some(v) = lookup("batch_size") {
        train.batch_size = parse_field("batch_size", v)?;
    }
    if let Some(v) = lookup("lr0") {
        train.lr0 = parse_field("lr0", v)?;
    }
    if let Some(v) = lookup("dropout") {
        train.dropout = parse_field("dropout", v)?;
    }
    if let Some(v) = overrides.seed {
        train.seed = v;
    }
    if let Some(v) = overrides.epochs {
        train.epochs = v;
    }
    if let Some(v) = overrides.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = overrides.lr0 {
        train.lr0 = v;
    }
    if let Some(v) = overrides.dropout {
        train.dropout = v;
    }

    let modality_name = overrides
        .modality
        .as_deref()
        .or_else(|| lookup("modality"))
        .unwrap_or("rgb");
    let modality = Modality::parse(modality_name)
        .ok_or_else(|| CliError::Config(format!("unknown modality `{modality_name}`")))?;

    let path_field = |flag: &Option<PathBuf>, key: &str| -> Option<PathBuf> {
        flag.clone().or_else(|| lookup(key).map(PathBuf::from))
    };
    let features_root = path_field(&overrides.features, "features")
        .ok_or_else(|| CliError::Config("missing `--features` directory".into()))?;
    let annotations = path_field(&overrides.annotations, "annotations")
        .ok_or_else(|| CliError::Config("missing `--annotations` file".into()))?;
    let subsets = path_field(&overrides.subsets, "subsets");
    let out = path_field(&overrides.out, "out")
        .ok_or_else(|| CliError::Config("missing `--out` directory".into()))?;

    let mut hidden = 512usize;
    let mut repr = 512usize;
    if let Some(v) = lookup("hidden") {
        hidden = parse_field("hidden", v)?;
    }
    if let Some(v) = lookup("repr") {
        repr = parse_field("repr", v)?;
    }
    if let Some(v) = overrides.hidden {
        hidden = v;
    }
    if let Some(v) = overrides.repr {
        repr = v;
    }
    let classes = match (overrides.classes, lookup("classes")) {
        (Some(v), _) => Some(v),
        (None, Some(v)) => Some(parse_field("classes", v)?),
        (None, None) => None,
    };

    // Referenced paths must exist up front.
    if !features_root.is_dir() {
        return Err(CliError::Config(format!(
            "features: `{}` is not a directory",
            features_root.display()
        )));
    }
    if !annotations.is_file() {
        return Err(CliError::Config(format!(
            "annotations: `{}` is not a file",
            annotations.display()
        )));
    }
    if let Some(s) = &subsets {
        if !s.is_file() {
            return Err(CliError::Config(format!(
                "subsets: `{}` is not a file",
                s.display()
            )));
        }
    }

    train
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    sampling
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    Ok(RunConfig {
        task,
        features_root,
        annotations,
        subsets,
        out,
        modality,
        sampling,
        train,
        hidden,
        repr,
        classes,
    })
}
