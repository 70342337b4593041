use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{normalize_phrase, PatientRecord};
use crate::nncore::{AdamConfig, AdamState, Tensor2D, TrainConfig};
use crate::preprocess::{
    build_token_vocabulary, embed_chunks, encode_structured, extract_note, load_embeddings,
    tokenize_and_chunk, PreprocessConfig, SparseFeatureVector, TokenChunks, Vocabulary,
};
use crate::{Error, Result};

use super::nets::{FusionNet, LogisticNet, StructuredNet, TextInput, TextNet};
use super::{EncoderArtifact, NetSpec, TextArtifacts, TrainedModel};

/// Where a text model's chunk vectors come from: the trainable built-in
/// token table, or a precomputed embedding file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncoderSource {
    BuiltIn,
    File(PathBuf),
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Decorrelated child seed, so init and shuffling draw from independent
/// streams of the one configured seed. Kept to 63 bits: derived seeds land
/// in model manifests, and TOML integers are i64.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & (u64::MAX >> 1)
}

pub(super) trait BatchObjective {
    fn n_examples(&self) -> usize;
    fn loss_and_grads(&self, params: &[Tensor2D], batch: &[usize]) -> Result<(f64, Vec<Tensor2D>)>;
}

/// Shuffled mini-batch Adam. Returns final parameters and the mean
/// training loss of each epoch.
pub(super) fn run_sgd<O: BatchObjective>(
    obj: &O,
    mut params: Vec<Tensor2D>,
    cfg: &TrainConfig,
) -> Result<(Vec<Tensor2D>, Vec<f64>)> {
    cfg.validate()?;
    let n = obj.n_examples();
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = obj.loss_and_grads(&params, batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "training loss".into() });
            }
            adam.step(&mut params, &grads);
            epoch_loss += loss * batch.len() as f64;
        }
        losses.push(epoch_loss / n as f64);
    }
    Ok((params, losses))
}

/// Examples are re-sorted by patient_id before the seeded shuffle, so the
/// caller's ordering cannot leak into training.
fn canonical_indices(records: &[&PatientRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| records[a].patient_id.cmp(&records[b].patient_id));
    idx
}

fn check_training_inputs(records: &[&PatientRecord], labels: &[u8]) -> Result<()> {
    if records.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} records vs {} labels",
            records.len(),
            labels.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleClassTrainingSet);
    }
    Ok(())
}

fn normalized_keywords(keywords: &[String]) -> Result<Vec<String>> {
    let mut kw: Vec<String> = keywords
        .iter()
        .map(|k| normalize_phrase(k))
        .filter(|k| !k.is_empty())
        .collect();
    kw.sort_unstable();
    kw.dedup();
    if kw.is_empty() {
        return Err(Error::InvalidRule("text models need at least one keyword".into()));
    }
    Ok(kw)
}

fn chunks_for(
    record: &PatientRecord,
    keywords: &[String],
    pp: &PreprocessConfig,
) -> Result<TokenChunks> {
    let note = extract_note(record, keywords, pp.window, pp.fallback_sentences)?;
    tokenize_and_chunk(&note.sentences, pp.chunk_size, pp.max_chunks)
}

fn ids_input(chunks: &TokenChunks, index: &HashMap<&str, usize>) -> TextInput {
    TextInput::Ids(
        chunks
            .chunks
            .iter()
            .map(|c| c.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
            .collect(),
    )
}

/// Text-side inputs in canonical record order, plus the model pieces they
/// imply (network dims and the encoder artifact kept for prediction).
fn prepare_text_side(
    records: &[&PatientRecord],
    order: &[usize],
    keywords: &[String],
    pp: &PreprocessConfig,
    encoder: &EncoderSource,
) -> Result<(Vec<TextInput>, usize, usize, TextArtifacts)> {
    pp.validate()?;
    let kw = normalized_keywords(keywords)?;
    let chunks: Vec<TokenChunks> = order
        .iter()
        .map(|&i| chunks_for(records[i], &kw, pp))
        .collect::<Result<_>>()?;
    match encoder {
        EncoderSource::BuiltIn => {
            let refs: Vec<&TokenChunks> = chunks.iter().collect();
            let tokens = build_token_vocabulary(&refs, pp.min_count)?;
            let index: HashMap<&str, usize> = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.as_str(), i))
                .collect();
            let inputs = chunks.iter().map(|c| ids_input(c, &index)).collect();
            let artifacts = TextArtifacts {
                keywords: kw,
                preprocess: pp.clone(),
                encoder: EncoderArtifact::BuiltIn { tokens: tokens.clone() },
            };
            Ok((inputs, pp.embed_dim, tokens.len(), artifacts))
        }
        EncoderSource::File(path) => {
            let emb = load_embeddings(path)?;
            let mut inputs = Vec::with_capacity(chunks.len());
            for (&i, c) in order.iter().zip(&chunks) {
                inputs.push(TextInput::Fixed(embed_chunks(
                    &records[i].patient_id,
                    c,
                    &emb,
                )?));
            }
            use crate::preprocess::TextEncoder;
            let dim = emb.dim();
            let artifacts = TextArtifacts {
                keywords: kw,
                preprocess: pp.clone(),
                encoder: EncoderArtifact::File { path: path.clone(), embeddings: emb },
            };
            Ok((inputs, dim, 0, artifacts))
        }
    }
}

struct StructuredObjective {
    net: StructuredNet,
    data: Vec<SparseFeatureVector>,
    labels: Vec<u8>,
}

impl BatchObjective for StructuredObjective {
    fn n_examples(&self) -> usize {
        self.data.len()
    }

    fn loss_and_grads(&self, params: &[Tensor2D], batch: &[usize]) -> Result<(f64, Vec<Tensor2D>)> {
        let inputs: Vec<&SparseFeatureVector> = batch.iter().map(|&i| &self.data[i]).collect();
        let labels: Vec<u8> = batch.iter().map(|&i| self.labels[i]).collect();
        self.net.loss_and_grads(params, &inputs, &labels)
    }
}

struct LogisticObjective {
    net: LogisticNet,
    data: Vec<SparseFeatureVector>,
    labels: Vec<u8>,
}

impl BatchObjective for LogisticObjective {
    fn n_examples(&self) -> usize {
        self.data.len()
    }

    fn loss_and_grads(&self, params: &[Tensor2D], batch: &[usize]) -> Result<(f64, Vec<Tensor2D>)> {
        let inputs: Vec<&SparseFeatureVector> = batch.iter().map(|&i| &self.data[i]).collect();
        let labels: Vec<u8> = batch.iter().map(|&i| self.labels[i]).collect();
        self.net.loss_and_grads(params, &inputs, &labels)
    }
}

struct TextObjective {
    net: TextNet,
    data: Vec<TextInput>,
    labels: Vec<u8>,
}

impl BatchObjective for TextObjective {
    fn n_examples(&self) -> usize {
        self.data.len()
    }

    fn loss_and_grads(&self, params: &[Tensor2D], batch: &[usize]) -> Result<(f64, Vec<Tensor2D>)> {
        let inputs: Vec<&TextInput> = batch.iter().map(|&i| &self.data[i]).collect();
        let labels: Vec<u8> = batch.iter().map(|&i| self.labels[i]).collect();
        self.net.loss_and_grads(params, &inputs, &labels)
    }
}

struct FusionObjective {
    net: FusionNet,
    sparse: Vec<SparseFeatureVector>,
    text: Vec<TextInput>,
    labels: Vec<u8>,
}

impl BatchObjective for FusionObjective {
    fn n_examples(&self) -> usize {
        self.sparse.len()
    }

    fn loss_and_grads(&self, params: &[Tensor2D], batch: &[usize]) -> Result<(f64, Vec<Tensor2D>)> {
        let inputs: Vec<(&SparseFeatureVector, &TextInput)> = batch
            .iter()
            .map(|&i| (&self.sparse[i], &self.text[i]))
            .collect();
        let labels: Vec<u8> = batch.iter().map(|&i| self.labels[i]).collect();
        self.net.loss_and_grads(params, &inputs, &labels)
    }
}

pub fn train_structured(
    records: &[&PatientRecord],
    labels: &[u8],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_inputs(records, labels)?;
    let net = StructuredNet::new(vocab.dimension());
    net.validate()?;
    let order = canonical_indices(records);
    let obj = StructuredObjective {
        net: net.clone(),
        data: order.iter().map(|&i| encode_structured(records[i], vocab)).collect(),
        labels: order.iter().map(|&i| labels[i]).collect(),
    };
    let init = net.init_params(derive_seed(cfg.seed, INIT_STREAM));
    let (params, losses) = run_sgd(&obj, init, cfg)?;
    TrainedModel::assemble(
        NetSpec::Structured(net),
        params,
        Some(vocab.clone()),
        None,
        None,
        *cfg,
        losses,
    )
}

pub fn train_logistic_baseline(
    records: &[&PatientRecord],
    labels: &[u8],
    vocab: &Vocabulary,
    l2: f64,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_inputs(records, labels)?;
    let net = LogisticNet::new(vocab.dimension(), l2);
    net.validate()?;
    let order = canonical_indices(records);
    let obj = LogisticObjective {
        net: net.clone(),
        data: order.iter().map(|&i| encode_structured(records[i], vocab)).collect(),
        labels: order.iter().map(|&i| labels[i]).collect(),
    };
    let init = net.init_params(derive_seed(cfg.seed, INIT_STREAM));
    let (params, losses) = run_sgd(&obj, init, cfg)?;
    TrainedModel::assemble(
        NetSpec::Logistic(net),
        params,
        Some(vocab.clone()),
        None,
        Some(l2),
        *cfg,
        losses,
    )
}

pub fn train_text(
    records: &[&PatientRecord],
    labels: &[u8],
    keywords: &[String],
    pp: &PreprocessConfig,
    encoder: &EncoderSource,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_inputs(records, labels)?;
    let order = canonical_indices(records);
    let (inputs, embed_dim, n_tokens, artifacts) =
        prepare_text_side(records, &order, keywords, pp, encoder)?;
    let net = TextNet::new(embed_dim, n_tokens);
    net.validate()?;
    let obj = TextObjective {
        net: net.clone(),
        data: inputs,
        labels: order.iter().map(|&i| labels[i]).collect(),
    };
    let init = net.init_params(derive_seed(cfg.seed, INIT_STREAM));
    let (params, losses) = run_sgd(&obj, init, cfg)?;
    TrainedModel::assemble(
        NetSpec::Text(net),
        params,
        None,
        Some(artifacts),
        None,
        *cfg,
        losses,
    )
}

pub fn train_fusion(
    records: &[&PatientRecord],
    labels: &[u8],
    vocab: &Vocabulary,
    keywords: &[String],
    pp: &PreprocessConfig,
    encoder: &EncoderSource,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_training_inputs(records, labels)?;
    let order = canonical_indices(records);
    let (text_inputs, embed_dim, n_tokens, artifacts) =
        prepare_text_side(records, &order, keywords, pp, encoder)?;
    let net = FusionNet::new(vocab.dimension(), embed_dim, n_tokens);
    net.validate()?;
    let obj = FusionObjective {
        net: net.clone(),
        sparse: order.iter().map(|&i| encode_structured(records[i], vocab)).collect(),
        text: text_inputs,
        labels: order.iter().map(|&i| labels[i]).collect(),
    };
    let init = net.init_params(derive_seed(cfg.seed, INIT_STREAM))?;
    let (params, losses) = run_sgd(&obj, init, cfg)?;
    TrainedModel::assemble(
        NetSpec::Fusion(net),
        params,
        Some(vocab.clone()),
        Some(artifacts),
        None,
        *cfg,
        losses,
    )
}
