//! End-to-end checks of the command-line surface: flag handling, exit
//! codes, config layering, and the synth/train/predict/eval/fuse loop.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tempagg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tempagg")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_corpus(dir: &Path, videos: usize, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let out = run(&[
        "synth",
        "--classes",
        "4",
        "--videos",
        &videos.to_string(),
        "--segments-per-video",
        "3",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    (
        dir.join("features"),
        dir.join("annotations.csv"),
        dir.join("subsets.txt"),
    )
}

#[test]
fn synth_writes_expected_file_count_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d1 = dir.path().join("a");
    let d2 = dir.path().join("b");
    let out1 = run(&[
        "synth", "--classes", "4", "--videos", "40", "--seed", "7", "--out",
        d1.to_str().unwrap(),
    ]);
    assert!(out1.status.success());
    let count = std::fs::read_dir(d1.join("features")).unwrap().count();
    assert_eq!(count, 40);
    assert!(d1.join("annotations.csv").is_file());

    let out2 = run(&[
        "synth", "--classes", "4", "--videos", "40", "--seed", "7", "--out",
        d2.to_str().unwrap(),
    ]);
    // Identical manifests, checksums included (the trailing summary line
    // carries the differing output path).
    let manifest = |o: &Output| -> Vec<String> {
        stdout(o)
            .lines()
            .filter(|l| l.contains(".tagf") || l.contains(".csv") || l.contains(".txt"))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(manifest(&out1), manifest(&out2));
    assert_eq!(manifest(&out1).len(), 42);
}

#[test]
fn train_anticipation_defaults_run_15_epochs_with_decay_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations, _) = synth_corpus(dir.path(), 4, 3);
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--task",
        "anticipation",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--hidden",
        "8",
        "--repr",
        "8",
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let log = std::fs::read_to_string(run_dir.join("train_log.txt")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 15, "anticipation default is 15 epochs");
    assert!(lines[0].contains("lr=1e-4"), "{}", lines[0]);
    assert!(lines[9].contains("lr=1e-4"), "{}", lines[9]);
    assert!(lines[10].contains("lr=1e-5"), "{}", lines[10]);
    assert!(run_dir.join("model.tagc").is_file());
    assert!(run_dir.join("checkpoint_epoch014.tagc").is_file());
}

#[test]
fn train_recognition_defaults_run_25_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations, _) = synth_corpus(dir.path(), 3, 11);
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--task",
        "recognition",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--hidden",
        "8",
        "--repr",
        "8",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let log = std::fs::read_to_string(run_dir.join("train_log.txt")).unwrap();
    assert_eq!(log.lines().count(), 25, "recognition default is 25 epochs");
    let last = log.lines().last().unwrap();
    assert!(last.contains("lr=1e-6"), "epoch 24 is in the third decade: {last}");
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations, _) = synth_corpus(dir.path(), 3, 2);
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "task = anticipation\nfeatures = {}\nannotations = {}\nepochs = 3\nhidden = 8\nrepr = 8\n",
            features.display(),
            annotations.display()
        ),
    )
    .unwrap();
    let run_dir = dir.path().join("run");

    // File alone: 3 epochs.
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(run_dir.join("train_log.txt")).unwrap();
    assert_eq!(log.lines().count(), 3);

    // Flag overrides the file: 1 epoch.
    let run_dir2 = dir.path().join("run2");
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        run_dir2.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(run_dir2.join("train_log.txt")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn predict_then_eval_and_fuse_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations, subsets) = synth_corpus(dir.path(), 5, 13);
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--task",
        "anticipation",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--hidden",
        "8",
        "--repr",
        "8",
        "--epochs",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let preds = dir.path().join("preds.csv");
    let out = run(&[
        "predict",
        "--checkpoint",
        run_dir.join("model.tagc").to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "predict failed: {}", stderr(&out));

    // Rows are stochastic.
    let text = std::fs::read_to_string(&preds).unwrap();
    for line in text.lines().skip(1) {
        let sum: f64 = line
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-5, "{line}");
    }

    let out = run(&[
        "eval",
        "--predictions",
        preds.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--subsets",
        subsets.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("overall.action.top1"));

    // Fuse four copies (stand-ins for per-modality predictions); output
    // must stay row-stochastic and equal the input here.
    let fused = dir.path().join("fused.csv");
    let p = preds.to_str().unwrap();
    let out = run(&["fuse", p, p, p, p, "--out", fused.to_str().unwrap()]);
    assert!(out.status.success(), "fuse failed: {}", stderr(&out));
    let fused_text = std::fs::read_to_string(&fused).unwrap();
    assert_eq!(fused_text, text, "mean of identical inputs is the identity");
}

#[test]
fn eval_of_perfect_predictions_reports_100() {
    let dir = tempfile::tempdir().unwrap();
    // Hand-written annotations covering every action class, so the
    // verb/noun marginalization map is total.
    let annotations = dir.path().join("annotations.csv");
    let mut csv = String::new();
    for i in 0..12 {
        let action = i % 4;
        csv.push_str(&format!("v{i},0.0,1.0,{},{action},{action},P0{}\n", action % 2, i % 3));
    }
    std::fs::write(&annotations, csv).unwrap();

    // Build one-hot predictions straight from the annotations.
    let table = tempagg::dataio::load_annotations(&annotations).unwrap();
    let classes = table.vocab_sizes().2;
    let mut scores = vec![0.0f64; table.len() * classes];
    let ids: Vec<String> = (0..table.len()).map(|i| table.segment_id(i)).collect();
    for (i, row) in table.rows().iter().enumerate() {
        scores[i * classes + row.action_class] = 1.0;
    }
    let preds = tempagg::evaluate::PredictionMatrix::new(ids, classes, scores).unwrap();
    let pred_path = dir.path().join("perfect.csv");
    tempagg::evaluate::write_predictions(&preds, &pred_path).unwrap();

    let out = run(&[
        "eval",
        "--predictions",
        pred_path.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("overall.action.top1 = 100.0000"), "{text}");
    assert!(text.contains("overall.verb.top1 = 100.0000"), "{text}");
}

#[test]
fn gradcheck_command_passes_on_tiny_config() {
    let out = run(&["gradcheck", "--seed", "0", "--samples", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max_rel_err"), "{text}");
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (features, annotations, _) = synth_corpus(dir.path(), 3, 19);

    // Missing task/preset: config error, exit 2, no partial output.
    let ghost = dir.path().join("ghost");
    let out = run(&[
        "train",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        ghost.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!ghost.exists(), "failed run must not leave outputs");

    // Unknown preset: exit 2.
    let out = run(&[
        "train",
        "--preset",
        "epic100-dishwashing",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        ghost.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed annotation row: data error, exit 3, with line number.
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "v,1.0,not_a_number,0,0,0,P00\n").unwrap();
    let out = run(&[
        "train",
        "--task",
        "anticipation",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        broken.to_str().unwrap(),
        "--out",
        ghost.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains(":1"), "{}", stderr(&out));

    // Truncated feature file: data error, exit 3.
    let corrupt_dir = dir.path().join("corrupt");
    std::fs::create_dir_all(&corrupt_dir).unwrap();
    for entry in std::fs::read_dir(&features).unwrap() {
        let entry = entry.unwrap();
        let mut bytes = std::fs::read(entry.path()).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(corrupt_dir.join(entry.file_name()), bytes).unwrap();
    }
    let out = run(&[
        "train",
        "--task",
        "anticipation",
        "--features",
        corrupt_dir.to_str().unwrap(),
        "--annotations",
        annotations.to_str().unwrap(),
        "--out",
        ghost.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("truncated"), "{}", stderr(&out));
}

#[test]
fn data_coverage_errors_name_the_offending_segments() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _, _) = synth_corpus(dir.path(), 3, 23);
    // A segment starting at 0.5 s leaves no history before t = -0.5.
    let early = dir.path().join("early.csv");
    std::fs::write(&early, "synth_0000,0.5,2.0,0,0,0,P00\n").unwrap();
    let ghost = dir.path().join("ghost");
    let out = run(&[
        "train",
        "--task",
        "anticipation",
        "--features",
        features.to_str().unwrap(),
        "--annotations",
        early.to_str().unwrap(),
        "--out",
        ghost.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("synth_0000:0"), "{}", stderr(&out));
}
