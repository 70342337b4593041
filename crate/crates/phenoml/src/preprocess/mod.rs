//! Feature extraction: structured one-hot vocabularies, keyword-window
//! note extraction, fixed-size token chunking, and chunk embedding.

mod encoder;
mod notes;
mod vocab;

pub use encoder::{
    build_token_vocabulary, embed_chunks, load_embeddings, mean_embed, save_embeddings,
    BuiltInEncoder, PrecomputedEmbeddings, TextEncoder,
};
pub use notes::{extract_note, split_sentences, tokenize_and_chunk, ExtractedNote, TokenChunks};
pub use vocab::{build_vocabulary, encode_structured, record_feature_keys, SparseFeatureVector, Vocabulary};

use crate::{Error, Result};

/// Chunk embedding matrix: one row per chunk, d columns.
pub type ChunkEmbeddings = crate::nncore::Tensor2D;

/// Settings for the note-to-embedding pipeline.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Sentences kept on each side of a keyword match.
    pub window: usize,
    /// Leading sentences of the longest note used when nothing matches.
    pub fallback_sentences: usize,
    pub chunk_size: usize,
    pub max_chunks: usize,
    /// Features must appear in at least this many training records.
    pub min_count: usize,
    /// Embedding width of the built-in encoder.
    pub embed_dim: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window: 1,
            fallback_sentences: 10,
            chunk_size: 512,
            max_chunks: 90,
            min_count: 1,
            embed_dim: 768,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fallback_sentences", self.fallback_sentences),
            ("chunk_size", self.chunk_size),
            ("max_chunks", self.max_chunks),
            ("min_count", self.min_count),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}
