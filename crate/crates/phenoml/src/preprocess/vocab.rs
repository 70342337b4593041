use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::cohort::PatientRecord;
use crate::{Error, Result};

/// Structured feature space: namespaced codes as-is, `LAB:<test_code>` for
/// abnormal labs, `DEM:<attr>=<value>` for demographics. Keys are sorted
/// lexicographically, so index assignment is canonical.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_keys(mut keys: Vec<String>) -> Result<Self> {
        keys.sort_unstable();
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary key {k}")));
            }
        }
        Ok(Vocabulary { keys, index })
    }

    pub fn dimension(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// SHA-256 of the newline-joined key list; manifests store this to tie
    /// checkpoints to the exact feature space they were trained in.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for k in &self.keys {
            hasher.update(k.as_bytes());
            hasher.update(b"\n");
        }
        format!("{:x}", hasher.finalize())
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(keys: Vec<String>) -> Result<Self> {
        Vocabulary::from_keys(keys)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.keys
    }
}

/// Indices of the active features of one record, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseFeatureVector {
    pub dimension: usize,
    pub active: Vec<usize>,
}

/// The feature keys a record would activate, before any vocabulary filter.
pub fn record_feature_keys(record: &PatientRecord) -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = record.codes.iter().cloned().collect();
    for lab in &record.labs {
        if lab.abnormal {
            keys.insert(format!("LAB:{}", lab.test_code));
        }
    }
    for (attr, value) in &record.demographics {
        keys.insert(format!("DEM:{attr}={value}"));
    }
    keys
}

/// Builds the feature space from training records only. A key is kept when
/// it appears in at least `min_count` distinct records.
pub fn build_vocabulary<'a>(
    records: impl IntoIterator<Item = &'a PatientRecord>,
    min_count: usize,
) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be >= 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for record in records {
        for key in record_feature_keys(record) {
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let keys: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(k, _)| k)
        .collect();
    Vocabulary::from_keys(keys)
}

/// One-hot encoding against a fixed vocabulary; out-of-vocabulary keys are
/// dropped silently (they are unseen test-time features by construction).
pub fn encode_structured(record: &PatientRecord, vocab: &Vocabulary) -> SparseFeatureVector {
    let active: Vec<usize> = record_feature_keys(record)
        .iter()
        .filter_map(|k| vocab.index_of(k))
        .collect();
    debug_assert!(active.windows(2).all(|w| w[0] < w[1]));
    SparseFeatureVector {
        dimension: vocab.dimension(),
        active,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::LabResult;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn record(id: &str, codes: &[&str]) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            demographics: BTreeMap::new(),
            codes: codes.iter().map(|s| s.to_string()).collect(),
            labs: vec![],
            notes: vec![],
        }
    }

    #[test]
    fn keys_cover_codes_abnormal_labs_and_demographics() {
        let mut rec = record("p1", &["ICD:428.0", "MED:metformin"]);
        rec.labs.push(LabResult { test_code: "bnp".into(), abnormal: true });
        rec.labs.push(LabResult { test_code: "a1c".into(), abnormal: false });
        rec.demographics.insert("sex".into(), "F".into());
        let keys = record_feature_keys(&rec);
        let want: BTreeSet<String> = ["DEM:sex=F", "ICD:428.0", "LAB:bnp", "MED:metformin"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(keys, want);
    }

    #[test]
    fn shared_and_unique_codes_one_hot() {
        let a = record("a", &["ICD:x", "ICD:y"]);
        let b = record("b", &["ICD:y", "ICD:z"]);
        let vocab = build_vocabulary([&a, &b], 1).unwrap();
        assert_eq!(vocab.keys(), &["ICD:x", "ICD:y", "ICD:z"]);
        assert_eq!(encode_structured(&a, &vocab).active, vec![0, 1]);
        assert_eq!(encode_structured(&b, &vocab).active, vec![1, 2]);
    }

    #[test]
    fn min_count_filters_rare_keys() {
        let a = record("a", &["ICD:common", "ICD:rare"]);
        let b = record("b", &["ICD:common"]);
        let vocab = build_vocabulary([&a, &b], 2).unwrap();
        assert_eq!(vocab.keys(), &["ICD:common"]);
        assert!(build_vocabulary([&a, &b], 0).is_err());
    }

    #[test]
    fn oov_keys_are_dropped() {
        let train = record("a", &["ICD:x"]);
        let vocab = build_vocabulary([&train], 1).unwrap();
        let test = record("b", &["ICD:x", "ICD:unseen"]);
        let enc = encode_structured(&test, &vocab);
        assert_eq!(enc.dimension, 1);
        assert_eq!(enc.active, vec![0]);
    }

    #[test]
    fn serde_round_trip_keeps_indices() {
        let vocab = Vocabulary::from_keys(vec!["b".into(), "a".into()]).unwrap();
        let json = serde_json::to_string(&vocab).unwrap();
        assert_eq!(json, r#"["a","b"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.index_of("a"), Some(0));
        assert!(serde_json::from_str::<Vocabulary>(r#"["a","a"]"#).is_err());
    }

    proptest! {
        // encoding equals a brute-force membership test against the key list
        #[test]
        fn encode_matches_membership(codes in proptest::collection::btree_set("[a-d]", 0..6)) {
            let all: Vec<&str> = vec!["NS:a", "NS:b", "NS:c", "NS:d"];
            let train: Vec<PatientRecord> = all.iter().map(|c| record(c, &[c])).collect();
            let vocab = build_vocabulary(train.iter(), 1).unwrap();
            let code_strings: Vec<String> = codes.iter().map(|c| format!("NS:{c}")).collect();
            let code_refs: Vec<&str> = code_strings.iter().map(|s| s.as_str()).collect();
            let rec = record("t", &code_refs);
            let enc = encode_structured(&rec, &vocab);
            for (i, key) in vocab.keys().iter().enumerate() {
                let expect = record_feature_keys(&rec).contains(key);
                prop_assert_eq!(enc.active.contains(&i), expect);
            }
        }
    }
}
