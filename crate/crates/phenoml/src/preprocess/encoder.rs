use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::notes::TokenChunks;
use super::ChunkEmbeddings;
use crate::nncore::Tensor2D;
use crate::{Error, Result};

/// Maps one token chunk to a d-dimensional vector. Implementations must be
/// pure so repeated encoding is bit-identical.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode_chunk(&self, patient_id: &str, chunk_index: usize, tokens: &[String]) -> Result<Vec<f64>>;
}

/// Stacks per-chunk encodings into the N x d chunk matrix. N >= 1 always:
/// an empty chunk list is impossible by construction and an empty chunk
/// encodes to a zero row.
pub fn embed_chunks(
    patient_id: &str,
    chunks: &TokenChunks,
    encoder: &dyn TextEncoder,
) -> Result<ChunkEmbeddings> {
    let d = encoder.dim();
    let mut out = Tensor2D::zeros(chunks.chunks.len(), d);
    for (i, chunk) in chunks.chunks.iter().enumerate() {
        let row = encoder.encode_chunk(patient_id, i, chunk)?;
        if row.len() != d {
            return Err(Error::DimMismatch(format!(
                "encoder returned {} values, expected {d}",
                row.len()
            )));
        }
        out.row_mut(i).copy_from_slice(&row);
    }
    if !out.is_finite() {
        return Err(Error::DimMismatch("non-finite chunk embedding".into()));
    }
    Ok(out)
}

/// Mean of a table's rows for the given ids, with multiplicity; zero
/// vector when `ids` is empty. Shared by the built-in encoder and the
/// trainable text models (which backpropagate through the same mean).
pub fn mean_embed(table: &Tensor2D, ids: &[usize]) -> Vec<f64> {
    let d = table.cols();
    let mut acc = vec![0.0; d];
    if ids.is_empty() {
        return acc;
    }
    for &id in ids {
        for (a, &v) in acc.iter_mut().zip(table.row(id)) {
            *a += v;
        }
    }
    let inv = 1.0 / ids.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    acc
}

/// Trainable bag-of-tokens encoder: a chunk embeds to the mean of its
/// in-vocabulary token embeddings. Out-of-vocabulary tokens are skipped;
/// a chunk with none embeds to the zero vector.
pub struct BuiltInEncoder {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    table: Tensor2D,
}

impl BuiltInEncoder {
    pub fn new(tokens: Vec<String>, table: Tensor2D) -> Result<Self> {
        if table.rows() != tokens.len() {
            return Err(Error::DimMismatch(format!(
                "{} tokens vs {} table rows",
                tokens.len(),
                table.rows()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {t}")));
            }
        }
        Ok(BuiltInEncoder { tokens, index, table })
    }

    /// Fresh table with entries uniform in (-0.1, 0.1) from the seed.
    pub fn init(tokens: Vec<String>, dim: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut table = Tensor2D::zeros(tokens.len(), dim);
        for v in table.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        BuiltInEncoder::new(tokens, table)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn table(&self) -> &Tensor2D {
        &self.table
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index.get(t).copied()).collect()
    }
}

impl TextEncoder for BuiltInEncoder {
    fn dim(&self) -> usize {
        self.table.cols()
    }

    fn encode_chunk(&self, _patient_id: &str, _chunk_index: usize, tokens: &[String]) -> Result<Vec<f64>> {
        Ok(mean_embed(&self.table, &self.token_ids(tokens)))
    }
}

/// Distinct tokens seen in at least `min_count` records' chunk lists,
/// sorted lexicographically.
pub fn build_token_vocabulary(chunk_lists: &[&TokenChunks], min_count: usize) -> Result<Vec<String>> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be >= 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for chunks in chunk_lists {
        let mut seen: std::collections::BTreeSet<&str> = Default::default();
        for chunk in &chunks.chunks {
            for token in chunk {
                seen.insert(token);
            }
        }
        for t in seen {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    Ok(counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(t, _)| t.to_string())
        .collect())
}

/// Chunk vectors precomputed by an external encoder, keyed by
/// `patient_id#chunk_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    rows: BTreeMap<String, Vec<f32>>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize, rows: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        for (k, v) in &rows {
            if v.len() != dim {
                return Err(Error::DimMismatch(format!(
                    "embedding {k} has {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::DimMismatch(format!("embedding {k} is non-finite")));
            }
        }
        Ok(PrecomputedEmbeddings { dim, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl TextEncoder for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_chunk(&self, patient_id: &str, chunk_index: usize, _tokens: &[String]) -> Result<Vec<f64>> {
        let key = format!("{patient_id}#{chunk_index}");
        let row = self
            .rows
            .get(&key)
            .ok_or(Error::MissingEmbeddingKey { key })?;
        Ok(row.iter().map(|&v| v as f64).collect())
    }
}

/// Embedding file layout, integers little-endian:
///
/// ```text
/// magic   4 bytes  "PHEB"
/// version u32      currently 1
/// dim     u32
/// count   u64      number of rows
/// then per row:
///   key_len u16
///   key     key_len bytes, UTF-8 "patient_id#chunk_index"
///   data    dim f32
/// ```
pub const EMBEDDING_MAGIC: &[u8; 4] = b"PHEB";
pub const EMBEDDING_VERSION: u32 = 1;

pub fn save_embeddings(path: &Path, emb: &PrecomputedEmbeddings) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(emb.dim as u32).to_le_bytes());
    out.extend_from_slice(&(emb.rows.len() as u64).to_le_bytes());
    for (key, row) in &emb.rows {
        let key_bytes = key.as_bytes();
        if key_bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("embedding key too long: {key}")));
        }
        out.extend_from_slice(&(key_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(key_bytes);
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<PrecomputedEmbeddings> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::BadFileFormat {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated file"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(4)? != EMBEDDING_MAGIC {
        return Err(bad("bad magic, expected PHEB"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut rows = BTreeMap::new();
    for i in 0..count {
        let key_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let key = std::str::from_utf8(take(key_len)?)
            .map_err(|_| bad(&format!("row {i}: key is not UTF-8")))?
            .to_string();
        let payload = take(dim * 4)?;
        let row: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if rows.insert(key, row).is_some() {
            return Err(bad(&format!("row {i}: duplicate key")));
        }
    }
    if !cur.is_empty() {
        return Err(bad("trailing bytes after last row"));
    }
    PrecomputedEmbeddings::new(dim, rows).map_err(|e| bad(&e.to_string()))
}
