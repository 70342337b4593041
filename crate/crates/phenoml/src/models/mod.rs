//! The four trainable classifiers and their on-disk form: a binary
//! checkpoint holding the parameter tensors plus a TOML manifest tying
//! them to the feature space and settings they were trained with.

mod nets;
mod train;

pub use nets::{
    FusionNet, LogisticNet, StructuredNet, TextInput, TextNet, DEFAULT_KERNEL_WIDTHS,
    DEFAULT_N_FILTERS, FUSED_WIDTH, STRUCTURED_LATENT, TEXT_LATENT,
};
pub use train::{
    derive_seed, train_fusion, train_logistic_baseline, train_structured, train_text,
    EncoderSource,
};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cohort::PatientRecord;
use crate::nncore::{
    read_checkpoint, write_checkpoint_bytes, Tensor2D, TensorKind, TrainConfig,
};
use crate::preprocess::{
    embed_chunks, encode_structured, extract_note, load_embeddings, tokenize_and_chunk,
    PrecomputedEmbeddings, PreprocessConfig, SparseFeatureVector, TextEncoder, Vocabulary,
};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum NetSpec {
    Structured(StructuredNet),
    Text(TextNet),
    Fusion(FusionNet),
    Logistic(LogisticNet),
}

impl NetSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            NetSpec::Structured(_) => "structured",
            NetSpec::Text(_) => "text_cnn",
            NetSpec::Fusion(_) => "fusion",
            NetSpec::Logistic(_) => "logistic",
        }
    }
}

#[derive(Clone, Debug)]
pub enum EncoderArtifact {
    /// Trainable token table; row i embeds tokens[i].
    BuiltIn { tokens: Vec<String> },
    /// Chunk vectors from an external file, reloaded on use.
    File { path: PathBuf, embeddings: PrecomputedEmbeddings },
}

#[derive(Clone, Debug)]
pub struct TextArtifacts {
    /// Normalized, sorted, deduplicated extraction keywords.
    pub keywords: Vec<String>,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderArtifact,
}

/// A trained classifier, self-contained for prediction on raw records.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub spec: NetSpec,
    pub params: Vec<Tensor2D>,
    pub vocab: Option<Vocabulary>,
    pub text: Option<TextArtifacts>,
    pub l2: Option<f64>,
    pub train: TrainConfig,
    pub epoch_losses: Vec<f64>,
    token_index: Option<HashMap<String, usize>>,
}

fn expected_kinds(spec: &NetSpec) -> Vec<TensorKind> {
    use TensorKind::*;
    match spec {
        NetSpec::Structured(_) => vec![
            DenseWeight, DenseBias, DenseWeight, DenseBias, DenseWeight, DenseBias,
        ],
        NetSpec::Logistic(_) => vec![DenseWeight, DenseBias],
        NetSpec::Text(net) => {
            let mut kinds = vec![Embedding];
            for _ in &net.widths {
                kinds.push(ConvKernel);
                kinds.push(ConvBias);
            }
            kinds.push(DenseWeight);
            kinds.push(DenseBias);
            kinds
        }
        NetSpec::Fusion(net) => {
            let mut kinds = vec![DenseWeight, DenseBias, DenseWeight, DenseBias, Embedding];
            for _ in &net.text.widths {
                kinds.push(ConvKernel);
                kinds.push(ConvBias);
            }
            kinds.extend([DenseWeight, DenseBias, DenseWeight, DenseBias]);
            kinds
        }
    }
}

fn sha256_lines(lines: &[String]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for l in lines {
        hasher.update(l.as_bytes());
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

// scalar and array fields first; tables (train, preprocess) must come
// last or the manifest would not serialize to TOML
#[derive(serde::Serialize, serde::Deserialize)]
struct ModelManifest {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vocabulary_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    keywords_sha256: Option<String>,
    epoch_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vocabulary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    keywords: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    preprocess: Option<PreprocessConfig>,
}

impl TrainedModel {
    pub(crate) fn assemble(
        spec: NetSpec,
        params: Vec<Tensor2D>,
        vocab: Option<Vocabulary>,
        text: Option<TextArtifacts>,
        l2: Option<f64>,
        train: TrainConfig,
        epoch_losses: Vec<f64>,
    ) -> Result<TrainedModel> {
        if params.len() != expected_kinds(&spec).len() {
            return Err(Error::DimMismatch(format!(
                "{} parameter tensors for a {} model, expected {}",
                params.len(),
                spec.kind_name(),
                expected_kinds(&spec).len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: "model parameters".into() });
        }
        let token_index = text.as_ref().and_then(|t| match &t.encoder {
            EncoderArtifact::BuiltIn { tokens } => Some(
                tokens
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t.clone(), i))
                    .collect(),
            ),
            EncoderArtifact::File { .. } => None,
        });
        Ok(TrainedModel {
            spec,
            params,
            vocab,
            text,
            l2,
            train,
            epoch_losses,
            token_index,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        self.spec.kind_name()
    }

    fn sparse_input(&self, record: &PatientRecord) -> Result<SparseFeatureVector> {
        let vocab = self
            .vocab
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model carries no vocabulary".into()))?;
        Ok(encode_structured(record, vocab))
    }

    fn text_input(&self, record: &PatientRecord) -> Result<TextInput> {
        let ta = self
            .text
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("model carries no text settings".into()))?;
        let note = extract_note(record, &ta.keywords, ta.preprocess.window, ta.preprocess.fallback_sentences)?;
        let chunks = tokenize_and_chunk(&note.sentences, ta.preprocess.chunk_size, ta.preprocess.max_chunks)?;
        match &ta.encoder {
            EncoderArtifact::BuiltIn { .. } => {
                let index = self.token_index.as_ref().expect("built-in encoder index");
                Ok(TextInput::Ids(
                    chunks
                        .chunks
                        .iter()
                        .map(|c| c.iter().filter_map(|t| index.get(t).copied()).collect())
                        .collect(),
                ))
            }
            EncoderArtifact::File { embeddings, .. } => Ok(TextInput::Fixed(embed_chunks(
                &record.patient_id,
                &chunks,
                embeddings,
            )?)),
        }
    }

    pub fn predict_proba(&self, record: &PatientRecord) -> Result<f64> {
        match &self.spec {
            NetSpec::Structured(net) => {
                let sv = self.sparse_input(record)?;
                Ok(net.predict_batch(&self.params, &[&sv])?[0])
            }
            NetSpec::Logistic(net) => {
                let sv = self.sparse_input(record)?;
                Ok(net.predict_batch(&self.params, &[&sv])?[0])
            }
            NetSpec::Text(net) => net.predict_one(&self.params, &self.text_input(record)?),
            NetSpec::Fusion(net) => net.predict_one(
                &self.params,
                &self.sparse_input(record)?,
                &self.text_input(record)?,
            ),
        }
    }

    pub fn predict_batch(&self, records: &[&PatientRecord]) -> Result<Vec<f64>> {
        match &self.spec {
            NetSpec::Structured(net) => {
                let data: Vec<SparseFeatureVector> = records
                    .iter()
                    .map(|r| self.sparse_input(r))
                    .collect::<Result<_>>()?;
                let refs: Vec<&SparseFeatureVector> = data.iter().collect();
                net.predict_batch(&self.params, &refs)
            }
            NetSpec::Logistic(net) => {
                let data: Vec<SparseFeatureVector> = records
                    .iter()
                    .map(|r| self.sparse_input(r))
                    .collect::<Result<_>>()?;
                let refs: Vec<&SparseFeatureVector> = data.iter().collect();
                net.predict_batch(&self.params, &refs)
            }
            _ => records.iter().map(|r| self.predict_proba(r)).collect(),
        }
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let kinds = expected_kinds(&self.spec);
        let pairs: Vec<(TensorKind, &Tensor2D)> =
            kinds.into_iter().zip(self.params.iter()).collect();
        write_checkpoint_bytes(&pairs)
    }

    fn manifest(&self) -> ModelManifest {
        let (encoder, embedding_file, tokens, keywords, keywords_sha256, preprocess) =
            match &self.text {
                None => (None, None, None, None, None, None),
                Some(ta) => {
                    let (enc, file, tok) = match &ta.encoder {
                        EncoderArtifact::BuiltIn { tokens } => {
                            ("builtin".to_string(), None, Some(tokens.clone()))
                        }
                        EncoderArtifact::File { path, .. } => (
                            "file".to_string(),
                            Some(path.to_string_lossy().into_owned()),
                            None,
                        ),
                    };
                    (
                        Some(enc),
                        file,
                        tok,
                        Some(ta.keywords.clone()),
                        Some(sha256_lines(&ta.keywords)),
                        Some(ta.preprocess.clone()),
                    )
                }
            };
        ModelManifest {
            kind: self.kind_name().to_string(),
            l2: self.l2,
            encoder,
            embedding_file,
            vocabulary_sha256: self.vocab.as_ref().map(|v| v.content_hash()),
            keywords_sha256,
            epoch_losses: self.epoch_losses.clone(),
            vocabulary: self.vocab.clone(),
            keywords,
            tokens,
            train: self.train,
            preprocess,
        }
    }

    /// Writes `<stem>.phew` and `<stem>.toml` under `dir`. Saving the same
    /// model twice produces byte-identical files.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let ckpt_path = dir.join(format!("{stem}.phew"));
        let manifest_path = dir.join(format!("{stem}.toml"));
        let bytes = self.checkpoint_bytes();
        fs::write(&ckpt_path, bytes).map_err(|e| Error::io(&ckpt_path, e))?;
        let text = toml::to_string_pretty(&self.manifest())
            .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok((ckpt_path, manifest_path))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<TrainedModel> {
        let manifest_path = dir.join(format!("{stem}.toml"));
        let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: ModelManifest = toml::from_str(&raw).map_err(|e| Error::BadFileFormat {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
        let ckpt_path = dir.join(format!("{stem}.phew"));
        let tensors = read_checkpoint(&ckpt_path)?;
        let bad = |message: String| Error::BadFileFormat {
            path: manifest_path.clone(),
            message,
        };

        let (kinds, params): (Vec<TensorKind>, Vec<Tensor2D>) = tensors.into_iter().unzip();
        if let (Some(v), Some(h)) = (&m.vocabulary, &m.vocabulary_sha256) {
            if &v.content_hash() != h {
                return Err(bad("vocabulary does not match its recorded hash".into()));
            }
        }
        if let (Some(k), Some(h)) = (&m.keywords, &m.keywords_sha256) {
            if &sha256_lines(k) != h {
                return Err(bad("keywords do not match their recorded hash".into()));
            }
        }

        let text_artifacts = |embed_dim: usize| -> Result<Option<TextArtifacts>> {
            let (Some(keywords), Some(preprocess), Some(encoder)) =
                (m.keywords.clone(), m.preprocess.clone(), m.encoder.as_deref())
            else {
                return Err(bad("text model manifest is missing text settings".into()));
            };
            let encoder = match encoder {
                "builtin" => EncoderArtifact::BuiltIn {
                    tokens: m
                        .tokens
                        .clone()
                        .ok_or_else(|| bad("builtin encoder without token list".into()))?,
                },
                "file" => {
                    let path = PathBuf::from(
                        m.embedding_file
                            .clone()
                            .ok_or_else(|| bad("file encoder without embedding_file".into()))?,
                    );
                    let embeddings = load_embeddings(&path)?;
                    if embeddings.dim() != embed_dim {
                        return Err(bad(format!(
                            "embedding file dim {} vs checkpoint {embed_dim}",
                            embeddings.dim()
                        )));
                    }
                    EncoderArtifact::File { path, embeddings }
                }
                other => return Err(bad(format!("unknown encoder {other}"))),
            };
            Ok(Some(TextArtifacts { keywords, preprocess, encoder }))
        };

        // conv kernels are stored as (width*embed_dim) x n_filters, so the
        // bank geometry is recoverable from the checkpoint itself
        let bank_geometry = |convs: &[Tensor2D], embed_dim: usize| -> Result<(Vec<usize>, usize)> {
            let mut widths = Vec::new();
            let mut n_filters = None;
            for k in convs.iter().step_by(2) {
                if embed_dim == 0 || k.rows() % embed_dim != 0 {
                    return Err(bad(format!(
                        "conv kernel rows {} not a multiple of embed dim {embed_dim}",
                        k.rows()
                    )));
                }
                widths.push(k.rows() / embed_dim);
                match n_filters {
                    None => n_filters = Some(k.cols()),
                    Some(f) if f == k.cols() => {}
                    Some(f) => {
                        return Err(bad(format!(
                            "conv banks disagree on filter count: {f} vs {}",
                            k.cols()
                        )))
                    }
                }
            }
            Ok((widths, n_filters.unwrap_or(0)))
        };

        let spec = match m.kind.as_str() {
            "structured" => {
                if params.len() != 6 {
                    return Err(bad(format!("structured checkpoint with {} tensors", params.len())));
                }
                NetSpec::Structured(StructuredNet {
                    vocab_dim: params[0].rows(),
                    hidden: (params[0].cols(), params[2].cols()),
                })
            }
            "logistic" => {
                if params.len() != 2 {
                    return Err(bad(format!("logistic checkpoint with {} tensors", params.len())));
                }
                NetSpec::Logistic(LogisticNet::new(
                    params[0].rows(),
                    m.l2.ok_or_else(|| bad("logistic manifest without l2".into()))?,
                ))
            }
            "text_cnn" => {
                if params.len() < 5 || (params.len() - 3) % 2 != 0 {
                    return Err(bad(format!("text checkpoint with {} tensors", params.len())));
                }
                let embed_dim = params[0].cols();
                let (widths, n_filters) = bank_geometry(&params[1..params.len() - 2], embed_dim)?;
                NetSpec::Text(TextNet {
                    embed_dim,
                    n_tokens: params[0].rows(),
                    widths,
                    n_filters,
                })
            }
            "fusion" => {
                if params.len() < 11 || (params.len() - 9) % 2 != 0 {
                    return Err(bad(format!("fusion checkpoint with {} tensors", params.len())));
                }
                let embed_dim = params[4].cols();
                let (widths, n_filters) = bank_geometry(&params[5..params.len() - 4], embed_dim)?;
                let net = FusionNet {
                    structured: StructuredNet {
                        vocab_dim: params[0].rows(),
                        hidden: (params[0].cols(), params[2].cols()),
                    },
                    text: TextNet {
                        embed_dim,
                        n_tokens: params[4].rows(),
                        widths,
                        n_filters,
                    },
                    head_hidden: params[params.len() - 4].cols(),
                };
                net.validate()?;
                NetSpec::Fusion(net)
            }
            other => return Err(bad(format!("unknown model kind {other}"))),
        };

        if kinds != expected_kinds(&spec) {
            return Err(bad("checkpoint tensor kinds do not match the model layout".into()));
        }
        if let Some(v) = &m.vocabulary {
            if matches!(spec, NetSpec::Structured(_) | NetSpec::Logistic(_) | NetSpec::Fusion(_))
                && v.dimension() != params[0].rows()
            {
                return Err(bad(format!(
                    "vocabulary of {} keys vs input weight rows {}",
                    v.dimension(),
                    params[0].rows()
                )));
            }
        }
        let text = match &spec {
            NetSpec::Text(net) => text_artifacts(net.embed_dim)?,
            NetSpec::Fusion(net) => text_artifacts(net.text.embed_dim)?,
            _ => None,
        };
        if let Some(ta) = &text {
            if let EncoderArtifact::BuiltIn { tokens } = &ta.encoder {
                let n_tokens = match &spec {
                    NetSpec::Text(net) => net.n_tokens,
                    NetSpec::Fusion(net) => net.text.n_tokens,
                    _ => unreachable!(),
                };
                if tokens.len() != n_tokens {
                    return Err(bad(format!(
                        "{} tokens vs table rows {n_tokens}",
                        tokens.len()
                    )));
                }
            }
        }
        if matches!(spec, NetSpec::Structured(_) | NetSpec::Logistic(_) | NetSpec::Fusion(_))
            && m.vocabulary.is_none()
        {
            return Err(bad("manifest is missing the vocabulary".into()));
        }

        TrainedModel::assemble(spec, params, m.vocabulary, text, m.l2, m.train, m.epoch_losses)
    }
}
