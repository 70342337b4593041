//! TOML experiment configuration: the on-disk schema and its resolution
//! into a validated [`ExperimentConfig`].
//!
//! Relative paths inside the file (cohort path, embedding file) are taken
//! relative to the directory containing the config file, so a config
//! directory can be moved as a unit.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cohort::{PhenotypeRule, SyntheticCohortSpec};
use crate::harness::{CohortSource, EnsembleChoice, ExperimentConfig, ModelChoice};
use crate::models::EncoderSource;
use crate::nncore::TrainConfig;
use crate::preprocess::PreprocessConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub experiment: RawExperiment,
    pub cohort: RawCohort,
    pub rule: PhenotypeRule,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub text: RawText,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawExperiment {
    pub k: usize,
    pub seed: u64,
    pub models: Vec<String>,
    pub ensembles: Vec<String>,
    pub logistic_l2: f64,
    pub output_dir: PathBuf,
}

impl Default for RawExperiment {
    fn default() -> Self {
        RawExperiment {
            k: 5,
            seed: 0,
            models: vec!["structured".into(), "text_cnn".into(), "fusion".into()],
            ensembles: vec!["majority_vote".into(), "label_model".into()],
            logistic_l2: 1e-3,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Exactly one of `path` (line-delimited JSON cohort) or `synthetic`
/// (generator settings) must be present.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCohort {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticCohortSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawText {
    /// "builtin" hashes tokens to deterministic vectors; "file" reads a
    /// precomputed embedding file.
    pub encoder: String,
    pub embedding_file: Option<PathBuf>,
}

impl Default for RawText {
    fn default() -> Self {
        RawText {
            encoder: "builtin".into(),
            embedding_file: None,
        }
    }
}

impl RawConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::BadFileFormat {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RawConfig::from_toml_str(&text, path)
    }

    /// Applies CLI overrides and anchors relative paths at `base_dir`.
    pub fn resolve(
        self,
        base_dir: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<ExperimentConfig> {
        let anchor = |p: PathBuf| -> PathBuf {
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let cohort = match (self.cohort.path, self.cohort.synthetic) {
            (Some(path), None) => CohortSource::File(anchor(path)),
            (None, Some(spec)) => CohortSource::Synthetic(spec),
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "cohort has both path and synthetic; pick one".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "cohort needs either path or synthetic".into(),
                ))
            }
        };

        let models = self
            .experiment
            .models
            .iter()
            .map(|s| ModelChoice::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let ensembles = self
            .experiment
            .ensembles
            .iter()
            .map(|s| EnsembleChoice::parse(s))
            .collect::<Result<Vec<_>>>()?;

        let encoder = match self.text.encoder.as_str() {
            "builtin" => {
                if self.text.embedding_file.is_some() {
                    return Err(Error::InvalidConfig(
                        "embedding_file is only used with encoder = \"file\"".into(),
                    ));
                }
                EncoderSource::BuiltIn
            }
            "file" => match self.text.embedding_file {
                Some(p) => EncoderSource::File(anchor(p)),
                None => {
                    return Err(Error::InvalidConfig(
                        "encoder = \"file\" needs embedding_file".into(),
                    ))
                }
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown encoder {other}; expected builtin or file"
                )))
            }
        };

        let seed = seed_override.unwrap_or(self.experiment.seed);
        let mut train = self.train;
        train.seed = seed;

        let cfg = ExperimentConfig {
            cohort,
            rule: self.rule.validated()?,
            k: self.experiment.k,
            seed,
            models,
            ensembles,
            train,
            preprocess: self.preprocess,
            encoder,
            logistic_l2: self.experiment.logistic_l2,
            output_dir: out_override
                .map(anchor)
                .unwrap_or_else(|| anchor(self.experiment.output_dir)),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and resolves a config file in one step.
pub fn load_experiment_config(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let raw = RawConfig::from_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    raw.resolve(base, seed_override, out_override)
}
