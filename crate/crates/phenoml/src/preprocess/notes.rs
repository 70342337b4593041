use crate::cohort::{normalize_phrase, phrase_matches, PatientRecord};
use crate::{Error, Result};

/// Sentences pulled from a record's notes around keyword matches.
/// `provenance[i]` names the note and sentence index `sentences[i]` came
/// from; pairs are unique and sorted (notes are visited in note_id order,
/// sentences in document order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractedNote {
    pub patient_id: String,
    pub sentences: Vec<String>,
    pub provenance: Vec<(String, usize)>,
    /// Number of merged keyword windows (1 for the no-match fallback).
    pub span_count: usize,
}

/// Splits on `.`, `!`, `?`, and newline; trims each piece and drops empty
/// ones. Sentence indices refer to positions in the returned list.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Keeps a `window`-sentence neighborhood around every keyword match,
/// merging overlapping or adjacent neighborhoods. When nothing matches,
/// falls back to the first `fallback_sentences` sentences of the longest
/// note (by character count, earliest on ties).
pub fn extract_note(
    record: &PatientRecord,
    keywords: &[String],
    window: usize,
    fallback_sentences: usize,
) -> Result<ExtractedNote> {
    if keywords.is_empty() {
        return Err(Error::InvalidRule(
            "note extraction needs at least one keyword".into(),
        ));
    }
    let normalized: Vec<String> = keywords.iter().map(|k| normalize_phrase(k)).collect();
    if normalized.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidRule("empty keyword phrase".into()));
    }

    let mut notes: Vec<&crate::cohort::NoteDocument> = record.notes.iter().collect();
    notes.sort_by(|a, b| a.note_id.cmp(&b.note_id));

    let mut out = ExtractedNote {
        patient_id: record.patient_id.clone(),
        sentences: Vec::new(),
        provenance: Vec::new(),
        span_count: 0,
    };

    for note in &notes {
        let sentences = split_sentences(&note.text);
        if sentences.is_empty() {
            continue;
        }
        let last = sentences.len() - 1;
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for (i, sentence) in sentences.iter().enumerate() {
            if normalized.iter().any(|k| phrase_matches(sentence, k)) {
                let lo = i.saturating_sub(window);
                let hi = (i + window).min(last);
                match spans.last_mut() {
                    // adjacent or overlapping windows become one span
                    Some((_, prev_hi)) if lo <= *prev_hi + 1 => *prev_hi = (*prev_hi).max(hi),
                    _ => spans.push((lo, hi)),
                }
            }
        }
        for (lo, hi) in spans {
            out.span_count += 1;
            for i in lo..=hi {
                out.sentences.push(sentences[i].clone());
                out.provenance.push((note.note_id.clone(), i));
            }
        }
    }

    if out.sentences.is_empty() {
        // no keyword anywhere: head of the longest note
        let longest = notes
            .iter()
            .max_by_key(|n| {
                // max_by_key keeps the last max; negate the index to prefer
                // the earliest note on length ties
                (n.text.chars().count(), std::cmp::Reverse(n.note_id.clone()))
            })
            .filter(|n| !split_sentences(&n.text).is_empty());
        if let Some(note) = longest {
            let sentences = split_sentences(&note.text);
            for (i, s) in sentences.into_iter().take(fallback_sentences).enumerate() {
                out.sentences.push(s);
                out.provenance.push((note.note_id.clone(), i));
            }
            out.span_count = 1;
        }
    }

    debug_assert!(out.provenance.windows(2).all(|w| w[0] < w[1]));
    Ok(out)
}

/// Token chunks of fixed size; only the final chunk may be shorter. A
/// record with no tokens still yields one empty chunk so downstream
/// shapes stay rectangular.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenChunks {
    pub chunks: Vec<Vec<String>>,
    pub chunk_size: usize,
}

impl TokenChunks {
    pub fn total_tokens(&self) -> usize {
        self.chunks.iter().map(|c| c.len()).sum()
    }
}

/// Lowercases and whitespace-tokenizes the sentences, then cuts the token
/// stream into `chunk_size` pieces, keeping at most `max_chunks`.
pub fn tokenize_and_chunk(
    sentences: &[String],
    chunk_size: usize,
    max_chunks: usize,
) -> Result<TokenChunks> {
    if chunk_size == 0 || max_chunks == 0 {
        return Err(Error::InvalidConfig(
            "chunk_size and max_chunks must be >= 1".into(),
        ));
    }
    let tokens: Vec<String> = sentences
        .iter()
        .flat_map(|s| s.split_whitespace())
        .map(|t| t.to_lowercase())
        .collect();
    let mut chunks: Vec<Vec<String>> = tokens
        .chunks(chunk_size)
        .take(max_chunks)
        .map(|c| c.to_vec())
        .collect();
    if chunks.is_empty() {
        chunks.push(Vec::new());
    }
    Ok(TokenChunks { chunks, chunk_size })
}
