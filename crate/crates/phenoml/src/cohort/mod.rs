//! Patient records, rule-based silver labeling, synthetic cohorts, and
//! stratified fold splitting.

mod folds;
mod synthetic;

pub use folds::{split_stratified_kfold, train_indices};
pub use synthetic::{generate_synthetic_cohort, matching_rule, SyntheticCohortSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LabResult {
    pub test_code: String,
    pub abnormal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NoteDocument {
    pub note_id: String,
    pub text: String,
}

/// One patient: structured codes/labs/demographics plus free-text notes.
/// Codes carry a namespace prefix, e.g. `ICD:428.0` or `MED:lisinopril`.
/// The `LAB:` and `DEM:` namespaces are reserved for derived feature keys.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub codes: BTreeSet<String>,
    #[serde(default)]
    pub labs: Vec<LabResult>,
    #[serde(default)]
    pub notes: Vec<NoteDocument>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::MalformedRecord {
                line: 0,
                message: "empty patient_id".into(),
            });
        }
        for code in &self.codes {
            validate_code(code)?;
        }
        let mut note_ids = BTreeSet::new();
        for note in &self.notes {
            if !note_ids.insert(&note.note_id) {
                return Err(Error::MalformedRecord {
                    line: 0,
                    message: format!(
                        "patient {} repeats note_id {}",
                        self.patient_id, note.note_id
                    ),
                });
            }
        }
        Ok(())
    }
}

fn validate_code(code: &str) -> Result<()> {
    let bad = |message: String| Error::MalformedRecord { line: 0, message };
    match code.split_once(':') {
        Some((ns, value)) if !ns.is_empty() && !value.is_empty() => {
            if ns == "LAB" || ns == "DEM" {
                Err(bad(format!("code {code} uses reserved namespace {ns}")))
            } else {
                Ok(())
            }
        }
        _ => Err(bad(format!("code {code} is not namespaced (want NS:value)"))),
    }
}

/// A cohort with optional labels aligned to `records`.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortDataset {
    pub disease_name: String,
    pub records: Vec<PatientRecord>,
    pub labels: Option<Vec<u8>>,
}

impl CohortDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Code-and-keyword phenotype definition. A record is labeled positive when
/// it hits at least `min_code_hits` include codes or any keyword phrase,
/// and carries no exclude code.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhenotypeRule {
    pub disease_name: String,
    #[serde(default)]
    pub include_codes: BTreeSet<String>,
    #[serde(default)]
    pub exclude_codes: BTreeSet<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default = "default_min_code_hits")]
    pub min_code_hits: usize,
}

fn default_min_code_hits() -> usize {
    1
}

impl PhenotypeRule {
    /// Canonicalizes keyword phrases (lowercase, collapsed whitespace) and
    /// checks structural invariants.
    pub fn validated(mut self) -> Result<Self> {
        if self.disease_name.trim().is_empty() {
            return Err(Error::InvalidRule("empty disease_name".into()));
        }
        if self.min_code_hits == 0 {
            return Err(Error::InvalidRule("min_code_hits must be >= 1".into()));
        }
        for code in self.include_codes.iter().chain(&self.exclude_codes) {
            validate_code(code).map_err(|e| Error::InvalidRule(e.to_string()))?;
        }
        self.keywords = self
            .keywords
            .iter()
            .map(|k| normalize_phrase(k))
            .collect();
        if self.keywords.iter().any(|k| k.is_empty()) {
            return Err(Error::InvalidRule("empty keyword phrase".into()));
        }
        Ok(self)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rule: PhenotypeRule = toml::from_str(&text).map_err(|e| Error::BadFileFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        rule.validated()
    }
}

/// Lowercases and collapses runs of whitespace to single spaces, the shared
/// canonical form for keyword matching.
pub fn normalize_phrase(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the normalized haystack contains the (already normalized)
/// keyword as a contiguous phrase.
pub fn phrase_matches(haystack: &str, normalized_keyword: &str) -> bool {
    !normalized_keyword.is_empty() && normalize_phrase(haystack).contains(normalized_keyword)
}

/// Pure silver labeler: 1 iff (code hits >= min_code_hits OR any keyword
/// matches any note) AND no exclude code is present.
pub fn apply_phenotype_rule(rule: &PhenotypeRule, record: &PatientRecord) -> u8 {
    if record.codes.iter().any(|c| rule.exclude_codes.contains(c)) {
        return 0;
    }
    let code_hits = record
        .codes
        .iter()
        .filter(|c| rule.include_codes.contains(*c))
        .count();
    if code_hits >= rule.min_code_hits {
        return 1;
    }
    let keyword_hit = rule.keywords.iter().any(|kw| {
        record.notes.iter().any(|note| phrase_matches(&note.text, kw))
    });
    keyword_hit as u8
}

pub fn label_cohort(rule: &PhenotypeRule, dataset: &CohortDataset) -> CohortDataset {
    let labels = dataset
        .records
        .iter()
        .map(|r| apply_phenotype_rule(rule, r))
        .collect();
    CohortDataset {
        disease_name: rule.disease_name.clone(),
        records: dataset.records.clone(),
        labels: Some(labels),
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RecordLine {
    #[serde(flatten)]
    record: PatientRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

/// Reads a line-delimited JSON cohort. Labels are all-or-nothing: a file
/// where only some lines carry `label` is rejected.
pub fn load_cohort(path: &Path, disease_name: &str) -> Result<CohortDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut labeled_lines = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        parsed.record.validate().map_err(|e| match e {
            Error::MalformedRecord { message, .. } => Error::MalformedRecord {
                line: line_no,
                message,
            },
            other => other,
        })?;
        if !seen.insert(parsed.record.patient_id.clone()) {
            return Err(Error::DuplicatePatientId {
                id: parsed.record.patient_id,
                line: line_no,
            });
        }
        if let Some(label) = parsed.label {
            if label > 1 {
                return Err(Error::MalformedRecord {
                    line: line_no,
                    message: format!("label {label} is not 0 or 1"),
                });
            }
            labeled_lines += 1;
            labels.push(label);
        }
        records.push(parsed.record);
    }
    if labeled_lines != 0 && labeled_lines != records.len() {
        return Err(Error::MalformedRecord {
            line: 0,
            message: format!(
                "{} of {} lines carry a label; labels must be on all lines or none",
                labeled_lines,
                records.len()
            ),
        });
    }
    Ok(CohortDataset {
        disease_name: disease_name.to_string(),
        records,
        labels: if labeled_lines == 0 { None } else { Some(labels) },
    })
}

pub fn save_cohort(path: &Path, dataset: &CohortDataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    for (i, record) in dataset.records.iter().enumerate() {
        let line = RecordLine {
            record: record.clone(),
            label: dataset.labels.as_ref().map(|l| l[i]),
        };
        let json = serde_json::to_string(&line).expect("record serialization");
        writeln!(out, "{json}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, codes: &[&str], note: &str) -> PatientRecord {
        PatientRecord {
            patient_id: id.to_string(),
            demographics: BTreeMap::new(),
            codes: codes.iter().map(|c| c.to_string()).collect(),
            labs: vec![],
            notes: if note.is_empty() {
                vec![]
            } else {
                vec![NoteDocument {
                    note_id: "n0".into(),
                    text: note.to_string(),
                }]
            },
        }
    }

    fn rule() -> PhenotypeRule {
        PhenotypeRule {
            disease_name: "heart_failure".into(),
            include_codes: ["ICD:428.0", "ICD:428.1"].iter().map(|s| s.to_string()).collect(),
            exclude_codes: ["ICD:V42.1"].iter().map(|s| s.to_string()).collect(),
            keywords: vec!["congestive heart failure".into()],
            min_code_hits: 1,
        }
        .validated()
        .unwrap()
    }

    #[test]
    fn code_hit_labels_positive() {
        let r = rule();
        assert_eq!(apply_phenotype_rule(&r, &record("p1", &["ICD:428.0"], "")), 1);
        assert_eq!(apply_phenotype_rule(&r, &record("p2", &["ICD:250.0"], "")), 0);
    }

    #[test]
    fn keyword_hit_is_case_and_whitespace_insensitive() {
        let r = rule();
        let rec = record("p1", &[], "Dx: Congestive   Heart\nFailure, stable.");
        assert_eq!(apply_phenotype_rule(&r, &rec), 1);
        let miss = record("p2", &[], "congestive failure of the heart");
        assert_eq!(apply_phenotype_rule(&r, &miss), 0);
    }

    #[test]
    fn exclusion_vetoes_both_evidence_kinds() {
        let r = rule();
        let rec = record(
            "p1",
            &["ICD:428.0", "ICD:V42.1"],
            "history of congestive heart failure",
        );
        assert_eq!(apply_phenotype_rule(&r, &rec), 0);
    }

    #[test]
    fn min_code_hits_threshold() {
        let mut r = rule();
        r.min_code_hits = 2;
        r.keywords.clear();
        assert_eq!(apply_phenotype_rule(&r, &record("p1", &["ICD:428.0"], "")), 0);
        assert_eq!(
            apply_phenotype_rule(&r, &record("p2", &["ICD:428.0", "ICD:428.1"], "")),
            1
        );
    }

    #[test]
    fn labeler_does_not_touch_the_record() {
        let r = rule();
        let rec = record("p1", &["ICD:428.0"], "stable");
        let before = rec.clone();
        let _ = apply_phenotype_rule(&r, &rec);
        assert_eq!(rec, before);
    }

    #[test]
    fn rule_validation_normalizes_keywords() {
        let r = PhenotypeRule {
            disease_name: "x".into(),
            include_codes: BTreeSet::new(),
            exclude_codes: BTreeSet::new(),
            keywords: vec!["  Chronic   Obstructive  DISEASE ".into()],
            min_code_hits: 1,
        }
        .validated()
        .unwrap();
        assert_eq!(r.keywords, vec!["chronic obstructive disease".to_string()]);
    }

    #[test]
    fn rule_validation_rejects_degenerate_fields() {
        let base = rule();
        let mut r = base.clone();
        r.min_code_hits = 0;
        assert!(r.validated().is_err());
        let mut r = base.clone();
        r.disease_name = "  ".into();
        assert!(r.validated().is_err());
        let mut r = base;
        r.include_codes.insert("not-namespaced".into());
        assert!(r.validated().is_err());
    }

    #[test]
    fn load_rejects_duplicate_patient_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let mut lines = Vec::new();
        for id in ["p1", "p2", "p1"] {
            lines.push(serde_json::to_string(&RecordLine {
                record: record(id, &["ICD:1"], ""),
                label: None,
            })
            .unwrap());
        }
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = load_cohort(&path, "d").unwrap_err();
        assert_eq!(err.to_string(), "duplicate patient_id p1 at line 3");
    }

    #[test]
    fn load_reports_malformed_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let good = serde_json::to_string(&RecordLine {
            record: record("p1", &[], ""),
            label: None,
        })
        .unwrap();
        std::fs::write(&path, format!("{good}\n{{not json")).unwrap();
        match load_cohort(&path, "d").unwrap_err() {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_rejects_partial_labels_and_reserved_namespaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let l1 = serde_json::to_string(&RecordLine {
            record: record("p1", &[], ""),
            label: Some(1),
        })
        .unwrap();
        let l2 = serde_json::to_string(&RecordLine {
            record: record("p2", &[], ""),
            label: None,
        })
        .unwrap();
        std::fs::write(&path, format!("{l1}\n{l2}")).unwrap();
        assert!(load_cohort(&path, "d").is_err());

        let bad = serde_json::to_string(&RecordLine {
            record: record("p3", &["LAB:x"], ""),
            label: None,
        })
        .unwrap();
        std::fs::write(&path, bad).unwrap();
        assert!(load_cohort(&path, "d").is_err());
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        let mut rec = record("p1", &["ICD:428.0", "MED:furosemide"], "doing well.");
        rec.demographics.insert("sex".into(), "F".into());
        rec.labs.push(LabResult {
            test_code: "bnp".into(),
            abnormal: true,
        });
        let ds = CohortDataset {
            disease_name: "heart_failure".into(),
            records: vec![rec, record("p2", &[], "")],
            labels: Some(vec![1, 0]),
        };
        save_cohort(&path, &ds).unwrap();
        let loaded = load_cohort(&path, "heart_failure").unwrap();
        assert_eq!(loaded, ds);
    }
}
