use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::cohort::{
    apply_phenotype_rule, generate_synthetic_cohort, load_cohort, split_stratified_kfold,
    train_indices, CohortDataset, PatientRecord, PhenotypeRule, SyntheticCohortSpec,
};
use crate::ensemble::{
    build_vote_matrix, fit_label_model, label_model_predict, majority_vote,
};
use crate::models::{
    derive_seed, train_fusion, train_logistic_baseline, train_structured, train_text,
    EncoderSource, TrainedModel,
};
use crate::nncore::TrainConfig;
use crate::preprocess::{build_vocabulary, PreprocessConfig};
use crate::{Error, Result};

use super::metrics::{precision_recall_f1, roc_auc};

pub const EM_MAX_ITERS: usize = 200;
pub const EM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Structured,
    TextCnn,
    Fusion,
    Logistic,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Structured => "structured",
            ModelChoice::TextCnn => "text_cnn",
            ModelChoice::Fusion => "fusion",
            ModelChoice::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(ModelChoice::Structured),
            "text_cnn" => Ok(ModelChoice::TextCnn),
            "fusion" => Ok(ModelChoice::Fusion),
            "logistic" => Ok(ModelChoice::Logistic),
            other => Err(Error::InvalidConfig(format!("unknown model {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleChoice {
    MajorityVote,
    LabelModel,
}

impl EnsembleChoice {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleChoice::MajorityVote => "majority_vote",
            EnsembleChoice::LabelModel => "label_model",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "majority_vote" => Ok(EnsembleChoice::MajorityVote),
            "label_model" => Ok(EnsembleChoice::LabelModel),
            other => Err(Error::InvalidConfig(format!("unknown ensemble {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CohortSource {
    File(PathBuf),
    Synthetic(SyntheticCohortSpec),
}

/// Fully resolved experiment: cohort, labeling rule, fold count, model and
/// ensemble lists, and shared training settings. The run seed governs fold
/// assignment and every derived per-fold, per-model seed.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub cohort: CohortSource,
    pub rule: PhenotypeRule,
    pub k: usize,
    pub seed: u64,
    pub models: Vec<ModelChoice>,
    pub ensembles: Vec<EnsembleChoice>,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderSource,
    pub logistic_l2: f64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("k must be >= 2".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("at least one model is required".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !seen.insert(m.name()) {
                return Err(Error::InvalidConfig(format!("model {} listed twice", m.name())));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.ensembles {
            if !seen.insert(e.name()) {
                return Err(Error::InvalidConfig(format!(
                    "ensemble {} listed twice",
                    e.name()
                )));
            }
        }
        if !(self.logistic_l2.is_finite() && self.logistic_l2 >= 0.0) {
            return Err(Error::InvalidConfig("logistic_l2 must be finite and >= 0".into()));
        }
        self.train.validate()?;
        self.preprocess.validate()?;
        self.rule.clone().validated()?;
        if let CohortSource::Synthetic(spec) = &self.cohort {
            spec.validate()?;
        }
        Ok(())
    }

    /// Hash of the resolved experiment (output directory excluded): runs
    /// that differ only in where they write share a hash.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_description().as_bytes());
        format!("{:x}", hasher.finalize())
    }

    fn canonical_description(&self) -> String {
        let mut out = String::new();
        match &self.cohort {
            CohortSource::File(p) => out.push_str(&format!("cohort=file:{}\n", p.display())),
            CohortSource::Synthetic(spec) => {
                let spec_toml = toml::to_string(spec).expect("synthetic spec serializes");
                out.push_str("cohort=synthetic\n");
                out.push_str(&spec_toml);
            }
        }
        let rule_toml = toml::to_string(&self.rule).expect("rule serializes");
        out.push_str("[rule]\n");
        out.push_str(&rule_toml);
        out.push_str(&format!("k={}\nseed={}\n", self.k, self.seed));
        out.push_str(&format!(
            "models={:?}\nensembles={:?}\n",
            self.models.iter().map(|m| m.name()).collect::<Vec<_>>(),
            self.ensembles.iter().map(|e| e.name()).collect::<Vec<_>>(),
        ));
        out.push_str(&toml::to_string(&self.train).expect("train config serializes"));
        out.push_str(&toml::to_string(&self.preprocess).expect("preprocess serializes"));
        match &self.encoder {
            EncoderSource::BuiltIn => out.push_str("encoder=builtin\n"),
            EncoderSource::File(p) => out.push_str(&format!("encoder=file:{}\n", p.display())),
        }
        out.push_str(&format!("logistic_l2={}\n", self.logistic_l2));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FoldMetrics {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// Per-fold and aggregate test metrics for one model or ensemble.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub disease: String,
    pub model: String,
    pub seed: u64,
    pub config_sha256: String,
    pub folds: Vec<FoldMetrics>,
    pub auc: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub f1: MetricSummary,
}

/// Mean and sample (n-1) standard deviation; a single fold has std 0.
pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MetricSummary { mean, std }
}

fn metrics_from_probs(probs: &[f64], labels: &[u8]) -> Result<FoldMetrics> {
    let auc = roc_auc(probs, labels)?;
    let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let (precision, recall, f1) = precision_recall_f1(&preds, labels)?;
    Ok(FoldMetrics { auc, precision, recall, f1 })
}

fn metrics_from_scores_and_preds(scores: &[f64], preds: &[u8], labels: &[u8]) -> Result<FoldMetrics> {
    let auc = roc_auc(scores, labels)?;
    let (precision, recall, f1) = precision_recall_f1(preds, labels)?;
    Ok(FoldMetrics { auc, precision, recall, f1 })
}

fn assemble_report(
    cfg: &ExperimentConfig,
    hash: &str,
    name: &str,
    folds: Vec<FoldMetrics>,
) -> MetricsReport {
    let auc = summarize(&folds.iter().map(|f| f.auc).collect::<Vec<_>>());
    let precision = summarize(&folds.iter().map(|f| f.precision).collect::<Vec<_>>());
    let recall = summarize(&folds.iter().map(|f| f.recall).collect::<Vec<_>>());
    let f1 = summarize(&folds.iter().map(|f| f.f1).collect::<Vec<_>>());
    MetricsReport {
        disease: cfg.rule.disease_name.clone(),
        model: name.to_string(),
        seed: cfg.seed,
        config_sha256: hash.to_string(),
        folds,
        auc,
        precision,
        recall,
        f1,
    }
}

pub fn load_experiment_cohort(cfg: &ExperimentConfig) -> Result<CohortDataset> {
    match &cfg.cohort {
        CohortSource::File(path) => load_cohort(path, &cfg.rule.disease_name),
        CohortSource::Synthetic(spec) => generate_synthetic_cohort(spec),
    }
}

/// Stratified k-fold cross validation of every requested model and
/// ensemble. Training always uses the rule's pseudo-labels; metrics are
/// computed against the cohort's stored labels when it has them (synthetic
/// ground truth or file labels), falling back to the pseudo-labels.
/// The label model is fitted on the train fold's votes only.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let rule = cfg.rule.clone().validated()?;
    let dataset = load_experiment_cohort(cfg)?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty cohort".into()));
    }
    let records = &dataset.records;
    let pseudo: Vec<u8> = records.iter().map(|r| apply_phenotype_rule(&rule, r)).collect();
    let eval_labels: Vec<u8> = dataset.labels.clone().unwrap_or_else(|| pseudo.clone());

    let hash = cfg.config_hash();
    let folds = split_stratified_kfold(&eval_labels, cfg.k, cfg.seed)?;

    let mut model_folds: Vec<Vec<FoldMetrics>> = vec![Vec::new(); cfg.models.len()];
    let mut ensemble_folds: Vec<Vec<FoldMetrics>> = vec![Vec::new(); cfg.ensembles.len()];

    for fold in 0..cfg.k {
        let test_idx = &folds[fold];
        let train_idx = train_indices(&folds, fold);
        let train_records: Vec<&PatientRecord> = train_idx.iter().map(|&i| &records[i]).collect();
        let train_y: Vec<u8> = train_idx.iter().map(|&i| pseudo[i]).collect();
        let test_records: Vec<&PatientRecord> = test_idx.iter().map(|&i| &records[i]).collect();
        let test_y: Vec<u8> = test_idx.iter().map(|&i| eval_labels[i]).collect();

        let fold_seed = derive_seed(cfg.seed, 1000 + fold as u64);
        let vocab = build_vocabulary(train_records.iter().copied(), cfg.preprocess.min_count)
            .map_err(|e| e.in_fold(fold, "vocabulary"))?;

        let mut trained: Vec<TrainedModel> = Vec::with_capacity(cfg.models.len());
        for (slot, choice) in cfg.models.iter().enumerate() {
            let mut tc = cfg.train;
            tc.seed = derive_seed(fold_seed, slot as u64);
            let model = match choice {
                ModelChoice::Structured => train_structured(&train_records, &train_y, &vocab, &tc),
                ModelChoice::TextCnn => train_text(
                    &train_records,
                    &train_y,
                    &rule.keywords,
                    &cfg.preprocess,
                    &cfg.encoder,
                    &tc,
                ),
                ModelChoice::Fusion => train_fusion(
                    &train_records,
                    &train_y,
                    &vocab,
                    &rule.keywords,
                    &cfg.preprocess,
                    &cfg.encoder,
                    &tc,
                ),
                ModelChoice::Logistic => {
                    train_logistic_baseline(&train_records, &train_y, &vocab, cfg.logistic_l2, &tc)
                }
            }
            .map_err(|e| e.in_fold(fold, &format!("train {}", choice.name())))?;

            let probs = model
                .predict_batch(&test_records)
                .map_err(|e| e.in_fold(fold, &format!("predict {}", choice.name())))?;
            let fm = metrics_from_probs(&probs, &test_y)
                .map_err(|e| e.in_fold(fold, &format!("score {}", choice.name())))?;
            model_folds[slot].push(fm);
            trained.push(model);
        }

        if !cfg.ensembles.is_empty() {
            let refs: Vec<&TrainedModel> = trained.iter().collect();
            let train_votes = build_vote_matrix(&refs, &train_records)
                .map_err(|e| e.in_fold(fold, "train vote matrix"))?;
            let test_votes = build_vote_matrix(&refs, &test_records)
                .map_err(|e| e.in_fold(fold, "test vote matrix"))?;
            for (slot, strategy) in cfg.ensembles.iter().enumerate() {
                let fm = match strategy {
                    EnsembleChoice::MajorityVote => {
                        let hard = majority_vote(&test_votes)
                            .map_err(|e| e.in_fold(fold, "majority vote"))?;
                        let scores: Vec<f64> = (0..test_votes.n_patients())
                            .map(|i| test_votes.mean_prob(i).expect("members never abstain"))
                            .collect();
                        metrics_from_scores_and_preds(&scores, &hard, &test_y)
                    }
                    EnsembleChoice::LabelModel => {
                        let params = fit_label_model(
                            &train_votes,
                            EM_MAX_ITERS,
                            EM_TOL,
                            derive_seed(fold_seed, 99),
                        )
                        .map_err(|e| e.in_fold(fold, "fit label model"))?;
                        let (posteriors, hard) = label_model_predict(&params, &test_votes)
                            .map_err(|e| e.in_fold(fold, "apply label model"))?;
                        metrics_from_scores_and_preds(&posteriors, &hard, &test_y)
                    }
                }
                .map_err(|e| e.in_fold(fold, &format!("score {}", strategy.name())))?;
                ensemble_folds[slot].push(fm);
            }
        }
    }

    let mut reports = Vec::with_capacity(cfg.models.len() + cfg.ensembles.len());
    for (slot, choice) in cfg.models.iter().enumerate() {
        reports.push(assemble_report(cfg, &hash, choice.name(), std::mem::take(&mut model_folds[slot])));
    }
    for (slot, strategy) in cfg.ensembles.iter().enumerate() {
        reports.push(assemble_report(cfg, &hash, strategy.name(), std::mem::take(&mut ensemble_folds[slot])));
    }
    Ok(reports)
}
