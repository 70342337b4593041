use std::path::PathBuf;

use clap::{Parser, Subcommand};

use phenoml::cohort::{label_cohort, save_cohort, PatientRecord};
use phenoml::config::load_experiment_config;
use phenoml::ensemble::{build_vote_matrix, fit_label_model, label_model_predict, majority_vote};
use phenoml::harness::experiment::{EM_MAX_ITERS, EM_TOL};
use phenoml::harness::{
    load_experiment_cohort, read_report_file, render_table, run_experiment, write_report_files,
    CohortSource, ExperimentConfig,
};
use phenoml::models::{
    derive_seed, train_fusion, train_logistic_baseline, train_structured, train_text,
    TrainedModel,
};
use phenoml::preprocess::build_vocabulary;
use phenoml::{Error, Result};

#[derive(Parser)]
#[command(
    name = "phenoml",
    version,
    about = "Weak-supervision phenotype prediction over coded records and clinical notes"
)]
struct Cli {
    /// Experiment config file (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config's random seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Overrides the config's output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured synthetic cohort into <out>/cohort.jsonl
    Generate,
    /// Apply the phenotype rule, writing <out>/labeled.jsonl
    Label,
    /// Train every configured model on the full cohort into <out>/models/
    Train,
    /// Score saved checkpoints into votes and ensemble labels
    Ensemble,
    /// Cross-validate all models and ensembles, writing reports
    Evaluate,
    /// Re-render report tables from <out>/reports.json
    Report,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Report = cli.command {
        return report(cli);
    }
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let cfg = load_experiment_config(config_path, cli.seed, cli.out.clone())?;
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Label => label(&cfg),
        Command::Train => train(&cfg),
        Command::Ensemble => ensemble(&cfg),
        Command::Evaluate => evaluate(&cfg),
        Command::Report => unreachable!("handled above"),
    }
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let CohortSource::Synthetic(_) = &cfg.cohort else {
        return Err(Error::InvalidConfig(
            "generate needs a [cohort.synthetic] section".into(),
        ));
    };
    let dataset = load_experiment_cohort(cfg)?;
    ensure_out_dir(cfg)?;
    let path = cfg.output_dir.join("cohort.jsonl");
    save_cohort(&path, &dataset)?;
    let positives: usize = dataset
        .labels
        .as_ref()
        .map(|l| l.iter().map(|&v| v as usize).sum())
        .unwrap_or(0);
    println!(
        "wrote {} records ({} positive) to {}",
        dataset.records.len(),
        positives,
        path.display()
    );
    Ok(())
}

fn label(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = load_experiment_cohort(cfg)?;
    let labeled = label_cohort(&cfg.rule, &dataset);
    ensure_out_dir(cfg)?;
    let path = cfg.output_dir.join("labeled.jsonl");
    save_cohort(&path, &labeled)?;
    let pseudo = labeled.labels.as_ref().expect("label_cohort always labels");
    let positives: usize = pseudo.iter().map(|&v| v as usize).sum();
    println!(
        "labeled {} records, {} positive, into {}",
        labeled.records.len(),
        positives,
        path.display()
    );
    if let Some(truth) = &dataset.labels {
        let agree = truth
            .iter()
            .zip(pseudo)
            .filter(|(a, b)| a == b)
            .count();
        println!(
            "rule agrees with stored labels on {}/{} records",
            agree,
            truth.len()
        );
    }
    Ok(())
}

fn train_all(cfg: &ExperimentConfig) -> Result<Vec<TrainedModel>> {
    let dataset = load_experiment_cohort(cfg)?;
    let records: Vec<&PatientRecord> = dataset.records.iter().collect();
    let pseudo: Vec<u8> = dataset
        .records
        .iter()
        .map(|r| phenoml::cohort::apply_phenotype_rule(&cfg.rule, r))
        .collect();
    let vocab = build_vocabulary(records.iter().copied(), cfg.preprocess.min_count)?;
    let mut models = Vec::with_capacity(cfg.models.len());
    for (slot, choice) in cfg.models.iter().enumerate() {
        let mut tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, slot as u64);
        use phenoml::harness::ModelChoice;
        let model = match choice {
            ModelChoice::Structured => train_structured(&records, &pseudo, &vocab, &tc)?,
            ModelChoice::TextCnn => train_text(
                &records,
                &pseudo,
                &cfg.rule.keywords,
                &cfg.preprocess,
                &cfg.encoder,
                &tc,
            )?,
            ModelChoice::Fusion => train_fusion(
                &records,
                &pseudo,
                &vocab,
                &cfg.rule.keywords,
                &cfg.preprocess,
                &cfg.encoder,
                &tc,
            )?,
            ModelChoice::Logistic => {
                train_logistic_baseline(&records, &pseudo, &vocab, cfg.logistic_l2, &tc)?
            }
        };
        models.push(model);
    }
    Ok(models)
}

fn models_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("models")
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let models = train_all(cfg)?;
    let dir = models_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (choice, model) in cfg.models.iter().zip(&models) {
        let (weights, manifest) = model.save(&dir, choice.name())?;
        println!("saved {} ({} and {})", choice.name(), weights.display(), manifest.display());
    }
    Ok(())
}

fn ensemble(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = load_experiment_cohort(cfg)?;
    let records: Vec<&PatientRecord> = dataset.records.iter().collect();
    let dir = models_dir(cfg);
    let mut models = Vec::with_capacity(cfg.models.len());
    for choice in &cfg.models {
        models.push(TrainedModel::load(&dir, choice.name())?);
    }
    let refs: Vec<&TrainedModel> = models.iter().collect();
    let votes = build_vote_matrix(&refs, &records)?;

    ensure_out_dir(cfg)?;
    let votes_path = cfg.output_dir.join("votes.csv");
    std::fs::write(&votes_path, votes.to_delimited()).map_err(|e| Error::io(&votes_path, e))?;

    let params = fit_label_model(&votes, EM_MAX_ITERS, EM_TOL, derive_seed(cfg.seed, 99))?;
    let lm_path = cfg.output_dir.join("label_model.toml");
    std::fs::write(&lm_path, params.to_toml_string()).map_err(|e| Error::io(&lm_path, e))?;

    let hard = majority_vote(&votes)?;
    let (posteriors, lm_hard) = label_model_predict(&params, &votes)?;
    let labels_path = cfg.output_dir.join("ensemble_labels.csv");
    let mut body = String::from("patient_id,majority_vote,label_model,label_model_posterior\n");
    for (i, id) in votes.patient_ids().iter().enumerate() {
        body.push_str(&format!("{id},{},{},{:.6}\n", hard[i], lm_hard[i], posteriors[i]));
    }
    std::fs::write(&labels_path, body).map_err(|e| Error::io(&labels_path, e))?;

    println!(
        "wrote {}, {} and {} for {} patients",
        votes_path.display(),
        lm_path.display(),
        labels_path.display(),
        records.len()
    );
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let reports = run_experiment(cfg)?;
    write_report_files(&cfg.output_dir, &reports)?;
    print!("{}", render_table(&reports)?);
    println!("reports written to {}", cfg.output_dir.display());
    Ok(())
}

fn report(cli: Cli) -> Result<()> {
    let dir: PathBuf = match (&cli.config, cli.out.clone()) {
        (Some(path), out) => load_experiment_config(path, cli.seed, out)?.output_dir,
        (None, Some(out)) => out,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "report needs --config or --out to locate reports.json".into(),
            ))
        }
    };
    let reports = read_report_file(&dir)?;
    write_report_files(&dir, &reports)?;
    print!("{}", render_table(&reports)?);
    Ok(())
}
