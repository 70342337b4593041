//! End-to-end CLI runs: generate -> label -> train -> ensemble -> evaluate
//! -> report against real files in a temp directory, plus exit-code
//! contracts for the documented failure classes.

use std::path::Path;
use std::process::{Command, Output};

use phenoml::cohort::load_cohort;
use phenoml::ensemble::VoteMatrix;

const SYNTH_CONFIG: &str = r#"
[experiment]
k = 2
seed = 13
models = ["structured", "logistic"]
ensembles = ["majority_vote", "label_model"]

[cohort.synthetic]
n_cases = 40
n_controls = 40
code_vocab_size = 10
disease_code_pool = ["ICD:D000", "ICD:D001", "ICD:D002"]
background_code_pool = ["ICD:B000", "ICD:B001", "ICD:B002", "ICD:B003", "ICD:B004", "ICD:B005", "ICD:B006"]
p_case_code = 0.5
p_control_code = 0.1
p_note_evidence_case = 0.5
p_code_suppression = 0.2
note_template_bank = ["seen today for follow up", "vitals stable at rest"]
evidence_keywords = ["persistent cough"]
mean_note_sentences = 3
seed = 5

[rule]
disease_name = "smoke disease"
include_codes = ["ICD:D000", "ICD:D001", "ICD:D002"]
keywords = ["persistent cough"]

[train]
epochs = 6
batch_size = 16
learning_rate = 0.01

[preprocess]
window = 1
fallback_sentences = 2
chunk_size = 16
max_chunks = 2
min_count = 1
embed_dim = 8
"#;

fn phenoml(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_phenoml"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn run_ok(args: &[&str], extra: &[&Path]) -> String {
    let out = phenoml(args, extra);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let synth_config = dir.path().join("synth.toml");
    std::fs::write(&synth_config, SYNTH_CONFIG).unwrap();
    let out_dir = dir.path().join("run");

    let stdout = run_ok(&["generate", "--config"], &[&synth_config, Path::new("--out"), &out_dir]);
    assert!(stdout.contains("wrote 80 records"), "{stdout}");
    let cohort_path = out_dir.join("cohort.jsonl");
    let generated = load_cohort(&cohort_path, "smoke disease").unwrap();
    assert_eq!(generated.records.len(), 80);
    assert!(generated.labels.is_some(), "generator output keeps ground truth");

    // same experiment, but read back from the file that generate wrote
    let file_config_text = SYNTH_CONFIG
        .split("[cohort.synthetic]")
        .next()
        .unwrap()
        .to_string()
        + &format!("[cohort]\npath = \"{}\"\n", cohort_path.display())
        + SYNTH_CONFIG.split_once("[rule]").map(|(_, r)| format!("[rule]{r}")).unwrap().as_str();
    let file_config = dir.path().join("file.toml");
    std::fs::write(&file_config, file_config_text).unwrap();

    let stdout = run_ok(&["label", "--config"], &[&file_config, Path::new("--out"), &out_dir]);
    assert!(stdout.contains("labeled 80 records"), "{stdout}");
    assert!(stdout.contains("rule agrees with stored labels on"), "{stdout}");
    let labeled = load_cohort(&out_dir.join("labeled.jsonl"), "smoke disease").unwrap();
    assert_eq!(labeled.records, generated.records);
    assert!(labeled.labels.is_some());

    run_ok(&["train", "--config"], &[&file_config, Path::new("--out"), &out_dir]);
    for stem in ["structured", "logistic"] {
        assert!(out_dir.join("models").join(format!("{stem}.phew")).is_file());
        assert!(out_dir.join("models").join(format!("{stem}.toml")).is_file());
    }

    run_ok(&["ensemble", "--config"], &[&file_config, Path::new("--out"), &out_dir]);
    let votes_text = std::fs::read_to_string(out_dir.join("votes.csv")).unwrap();
    let votes = VoteMatrix::from_delimited(&votes_text).unwrap();
    assert_eq!(votes.n_patients(), 80);
    assert_eq!(votes.classifier_names(), ["structured", "logistic"]);
    let labels_text = std::fs::read_to_string(out_dir.join("ensemble_labels.csv")).unwrap();
    assert_eq!(labels_text.lines().count(), 81);
    assert!(labels_text.starts_with("patient_id,majority_vote,label_model,label_model_posterior"));
    assert!(out_dir.join("label_model.toml").is_file());

    let stdout = run_ok(&["evaluate", "--config"], &[&file_config, Path::new("--out"), &out_dir]);
    assert!(stdout.contains("disease: smoke disease"), "{stdout}");
    let csv_after_evaluate = std::fs::read(out_dir.join("reports.csv")).unwrap();

    // re-render from reports.json alone, no config
    let stdout = run_ok(&["report", "--out"], &[&out_dir]);
    assert!(stdout.contains("structured"), "{stdout}");
    let csv_after_report = std::fs::read(out_dir.join("reports.csv")).unwrap();
    assert_eq!(csv_after_evaluate, csv_after_report);

    let header = String::from_utf8(csv_after_report).unwrap();
    assert!(header.starts_with("disease,model,metric,mean,std,summary\n"));
    // 4 rows per model and ensemble plus the header
    assert_eq!(header.lines().count(), 1 + 4 * 4);
}

#[test]
fn seed_override_changes_reports_and_reruns_do_not() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.toml");
    std::fs::write(&config, SYNTH_CONFIG).unwrap();

    let csv = |out: &str, seed: Option<&str>| {
        let out_dir = dir.path().join(out);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_phenoml"));
        cmd.arg("evaluate").arg("--config").arg(&config);
        if let Some(s) = seed {
            cmd.arg("--seed").arg(s);
        }
        cmd.arg("--out").arg(&out_dir);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("reports.csv")).unwrap()
    };

    let base = csv("a", None);
    let rerun = csv("b", None);
    let reseeded = csv("c", Some("99"));
    assert_eq!(base, rerun, "same seed must reproduce the same bytes");
    assert_ne!(base, reseeded, "a different seed must change the report");
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();

    // no --config at all: validation, exit 1
    let out = phenoml(&["evaluate"], &[]);
    assert_eq!(out.status.code(), Some(1), "missing config should exit 1");

    // config file absent: runtime io failure, exit 2
    let missing = dir.path().join("nope.toml");
    let out = phenoml(&["evaluate", "--config"], &[&missing]);
    assert_eq!(out.status.code(), Some(2), "missing file should exit 2");

    // malformed TOML: validation, exit 1
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "not = [valid").unwrap();
    let out = phenoml(&["evaluate", "--config"], &[&broken]);
    assert_eq!(out.status.code(), Some(1), "bad file format should exit 1");

    // structurally valid but semantically bad config: k = 1
    let bad_k = SYNTH_CONFIG.replace("k = 2", "k = 1");
    let bad_k_path = dir.path().join("bad_k.toml");
    std::fs::write(&bad_k_path, bad_k).unwrap();
    let out = phenoml(&["evaluate", "--config"], &[&bad_k_path]);
    assert_eq!(out.status.code(), Some(1), "k = 1 should exit 1");

    // ensemble before train: missing checkpoints, exit 2
    let config = dir.path().join("synth.toml");
    std::fs::write(&config, SYNTH_CONFIG).unwrap();
    let out_dir = dir.path().join("empty");
    let out = phenoml(&["ensemble", "--config"], &[&config, Path::new("--out"), &out_dir]);
    assert_eq!(out.status.code(), Some(2), "missing checkpoints should exit 2");

    // generate on a file-backed cohort: validation, exit 1
    let head = SYNTH_CONFIG.split("[cohort.synthetic]").next().unwrap();
    let tail = SYNTH_CONFIG.split_once("[rule]").map(|(_, r)| r).unwrap();
    let file_cfg = format!("{head}[cohort]\npath = \"somewhere.jsonl\"\n\n[rule]{tail}");
    let file_cfg_path = dir.path().join("file.toml");
    std::fs::write(&file_cfg_path, file_cfg).unwrap();
    let out = phenoml(&["generate", "--config"], &[&file_cfg_path]);
    assert_eq!(out.status.code(), Some(1), "generate without synthetic should exit 1");
}
