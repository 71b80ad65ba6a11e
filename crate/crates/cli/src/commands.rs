//! Implementations of the pipeline subcommands.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempagg::dataio::{
    generate_synthetic, load_annotations, load_checkpoint, load_subsets, read_feature_file,
    save_checkpoint, write_synthetic, AnnotationTable, Checkpoint, SynthSpec,
};
use tempagg::evaluate::{
    evaluate_split, late_fuse, read_predictions, write_predictions, PredictionMatrix,
};
use tempagg::model::{gradcheck_model, ModelConfig, ModelParams};
use tempagg::sampler::{sample_for_task, FrameFeatureSequence, Modality, SamplingConfig};
use tempagg::trainer::{infer_probs, LabeledExample, Trainer};

use crate::config::RunConfig;
use crate::CliError;

/// Tolerance the gradcheck command enforces.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn cmd_synth(
    classes: usize,
    videos: usize,
    segments_per_video: usize,
    fps: f32,
    dim: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let mut spec = SynthSpec::new(classes, videos, seed);
    spec.segments_per_video = segments_per_video;
    spec.fps = fps;
    if let Some(d) = dim {
        spec.dim = d;
    }
    let dataset = generate_synthetic(&spec)?;
    let manifest = write_synthetic(&dataset, out)?;
    print!("{manifest}");
    println!(
        "wrote {} videos, {} segments, {} classes under {}",
        spec.videos,
        dataset.annotations.len(),
        spec.classes,
        out.display()
    );
    Ok(())
}

/// Reads every referenced feature file once and samples every segment.
/// Data-coverage failures abort with the offending segment ids.
fn load_dataset(
    features_root: &Path,
    annotations: &AnnotationTable,
    modality: Modality,
    sampling: &SamplingConfig,
) -> Result<(Vec<LabeledExample>, usize), CliError> {
    let mut cache: HashMap<String, FrameFeatureSequence> = HashMap::new();
    let mut examples = Vec::with_capacity(annotations.len());
    let mut failures: Vec<String> = Vec::new();
    let mut input_dim = 0usize;
    for (i, row) in annotations.rows().iter().enumerate() {
        let seq = match cache.entry(row.video_id.clone()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let path = features_root.join(format!("{}.{}.tagf", row.video_id, modality.name()));
                e.insert(read_feature_file(&path)?)
            }
        };
        use tempagg::sampler::FrameSource;
        if input_dim == 0 {
            input_dim = seq.dim();
        } else if seq.dim() != input_dim {
            return Err(CliError::Data(format!(
                "{}: feature width {} differs from {}",
                row.video_id,
                seq.dim(),
                input_dim
            )));
        }
        match sample_for_task(seq, (row.start_sec, row.stop_sec), sampling) {
            Ok(inputs) => examples.push(LabeledExample {
                id: annotations.segment_id(i),
                inputs,
                label: row.action_class,
            }),
            Err(e) => failures.push(format!("{} ({e})", annotations.segment_id(i))),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Data(format!(
            "data coverage failed for {} segment(s): {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    Ok((examples, input_dim))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let annotations = load_annotations(&cfg.annotations)?;
    if annotations.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no segments",
            cfg.annotations.display()
        )));
    }
    let (examples, input_dim) =
        load_dataset(&cfg.features_root, &annotations, cfg.modality, &cfg.sampling)?;

    let classes = cfg.classes.unwrap_or(annotations.vocab_sizes().2);
    if let Some(bad) = examples.iter().find(|e| e.label >= classes) {
        return Err(CliError::Data(format!(
            "segment {}: action class {} outside vocabulary of {classes}",
            bad.id, bad.label
        )));
    }

    let model_config = ModelConfig {
        input_dim,
        hidden: cfg.hidden,
        repr: cfg.repr,
        classes,
        scale_count: cfg.sampling.spanning_scales.len(),
        recent_scopes: cfg.sampling.recent_scopes(),
        dropout: cfg.train.dropout,
    };
    let mut params = ModelParams::<f32>::init(model_config, cfg.train.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut trainer = Trainer::new(cfg.train.clone(), &params)?;

    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("out {}: {e}", cfg.out.display())))?;
    let log_path = cfg.out.join("train_log.txt");
    let mut log = fs::File::create(&log_path)
        .map_err(|e| CliError::Config(format!("log {}: {e}", log_path.display())))?;

    println!(
        "training {} on {} segments ({} classes, {} params, modality {})",
        cfg.task,
        examples.len(),
        classes,
        params.param_count(),
        cfg.modality
    );
    if let Some(subsets) = &cfg.subsets {
        println!("evaluation subsets: {}", subsets.display());
    }
    for _ in 0..cfg.train.epochs {
        let stats = trainer.epoch_step(&mut params, &examples)?;
        let line = stats.record();
        println!("{line}");
        writeln!(log, "{line}").map_err(|e| CliError::Data(format!("log write: {e}")))?;

        let ckpt = Checkpoint {
            modality: cfg.modality,
            model: params.clone(),
            sampling: cfg.sampling.clone(),
            train: cfg.train.clone(),
            epoch: (stats.epoch + 1) as u32,
            rng: trainer.rng.clone(),
        };
        save_checkpoint(&ckpt, &cfg.out.join(format!("checkpoint_epoch{:03}.tagc", stats.epoch)))?;
        save_checkpoint(&ckpt, &cfg.out.join("model.tagc"))?;
    }
    println!("final checkpoint: {}", cfg.out.join("model.tagc").display());
    Ok(())
}

pub fn cmd_predict(
    checkpoint: &Path,
    features_root: &Path,
    annotations_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let annotations = load_annotations(annotations_path)?;
    if annotations.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no segments",
            annotations_path.display()
        )));
    }
    let (examples, input_dim) =
        load_dataset(features_root, &annotations, ckpt.modality, &ckpt.sampling)?;
    if input_dim != ckpt.model.config.input_dim {
        return Err(CliError::Data(format!(
            "feature width {input_dim} does not match checkpoint width {}",
            ckpt.model.config.input_dim
        )));
    }

    let classes = ckpt.model.config.classes;
    let mut ids = Vec::with_capacity(examples.len());
    let mut scores = Vec::with_capacity(examples.len() * classes);
    for ex in &examples {
        let probs = infer_probs(&ckpt.model, &ex.inputs).map_err(CliError::from)?;
        ids.push(ex.id.clone());
        scores.extend(probs.iter().map(|&v| v as f64));
    }
    let preds = PredictionMatrix::new(ids, classes, scores)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    write_predictions(&preds, out)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

pub fn cmd_eval(
    predictions: &Path,
    annotations_path: &Path,
    subsets_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let preds = read_predictions(predictions)?;
    let annotations = load_annotations(annotations_path)?;
    let subsets = subsets_path.map(load_subsets).transpose()?;
    let report = evaluate_split(&preds, &annotations, subsets.as_ref())?;
    print!("{report}");
    if let Some(path) = out {
        fs::write(path, report.to_tsv())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        println!("wrote table to {}", path.display());
    }
    Ok(())
}

pub fn cmd_fuse(inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    if inputs.len() < 2 {
        return Err(CliError::Config(
            "fuse needs at least two prediction files".into(),
        ));
    }
    let matrices = inputs
        .iter()
        .map(|p| read_predictions(p))
        .collect::<Result<Vec<_>, _>>()?;
    let fused = late_fuse(&matrices)?;
    write_predictions(&fused, out)?;
    println!(
        "fused {} files over {} segments into {}",
        inputs.len(),
        fused.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, samples_per_tensor: usize) -> Result<(), CliError> {
    let report = gradcheck_model(seed, samples_per_tensor).map_err(CliError::from)?;
    println!(
        "gradcheck: max_rel_err={:.3e} coords={}{}",
        report.max_rel_err,
        report.coords_checked,
        report
            .worst
            .as_ref()
            .map(|(name, idx)| format!(" worst={name}[{idx}]"))
            .unwrap_or_default()
    );
    if report.passes(GRADCHECK_TOLERANCE) {
        println!("PASS (tolerance {GRADCHECK_TOLERANCE:.0e})");
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:.0e}",
            report.max_rel_err
        )))
    }
}
