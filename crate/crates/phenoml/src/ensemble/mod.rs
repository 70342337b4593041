//! Classifier combination: hard/soft vote matrices, majority voting, and a
//! two-class conditional-independence label model fitted by EM.

mod label_model;

pub use label_model::{
    fit_label_model, label_model_predict, sample_planted_votes, LabelModelParams,
};

use crate::{Error, Result};

/// One column of hard and soft votes per trained model, rows in the order
/// the records were given. None of these models abstain; abstention enters
/// only through imported vote files.
pub fn build_vote_matrix(
    models: &[&crate::models::TrainedModel],
    records: &[&crate::cohort::PatientRecord],
) -> Result<VoteMatrix> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("vote matrix needs >= 1 classifier".into()));
    }
    let patient_ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
    let names: Vec<String> = models.iter().map(|m| m.kind_name().to_string()).collect();
    let mut probs = vec![Vec::with_capacity(models.len()); records.len()];
    for model in models {
        for (row, p) in probs.iter_mut().zip(model.predict_batch(records)?) {
            row.push(p);
        }
    }
    VoteMatrix::from_probs(patient_ids, names, probs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vote {
    Zero,
    One,
    Abstain,
}

impl Vote {
    fn as_str(self) -> &'static str {
        match self {
            Vote::Zero => "0",
            Vote::One => "1",
            Vote::Abstain => "abstain",
        }
    }
}

/// Hard votes plus the probabilities they were thresholded from, one row
/// per patient and one column per classifier. Probabilities are NaN
/// exactly where the vote is ABSTAIN.
#[derive(Clone, Debug)]
pub struct VoteMatrix {
    patient_ids: Vec<String>,
    classifier_names: Vec<String>,
    votes: Vec<Vec<Vote>>,
    probs: Vec<Vec<f64>>,
}

impl VoteMatrix {
    pub fn new(
        patient_ids: Vec<String>,
        classifier_names: Vec<String>,
        votes: Vec<Vec<Vote>>,
        probs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = patient_ids.len();
        let m = classifier_names.len();
        if m == 0 {
            return Err(Error::InvalidConfig("vote matrix needs >= 1 classifier".into()));
        }
        if votes.len() != n || probs.len() != n {
            return Err(Error::DimMismatch(format!(
                "{n} patients but {} vote rows and {} prob rows",
                votes.len(),
                probs.len()
            )));
        }
        for field in [&patient_ids, &classifier_names] {
            let mut seen = std::collections::BTreeSet::new();
            for v in field.iter() {
                if v.is_empty() || v.contains([',', '"', '\n', '\r']) {
                    return Err(Error::InvalidConfig(format!("unusable identifier {v:?}")));
                }
                if !seen.insert(v) {
                    return Err(Error::InvalidConfig(format!("duplicate identifier {v}")));
                }
            }
        }
        for (i, (vrow, prow)) in votes.iter().zip(&probs).enumerate() {
            if vrow.len() != m || prow.len() != m {
                return Err(Error::DimMismatch(format!("row {i} has wrong width")));
            }
            for (j, (&v, &p)) in vrow.iter().zip(prow).enumerate() {
                let ok = match v {
                    Vote::Abstain => p.is_nan(),
                    Vote::One => p.is_finite() && (0.5..=1.0).contains(&p),
                    Vote::Zero => p.is_finite() && (0.0..0.5).contains(&p),
                };
                if !ok {
                    return Err(Error::InvalidConfig(format!(
                        "row {i} col {j}: vote {} disagrees with probability {p}",
                        v.as_str()
                    )));
                }
            }
        }
        Ok(VoteMatrix {
            patient_ids,
            classifier_names,
            votes,
            probs,
        })
    }

    /// Builds the matrix from probabilities alone; votes follow the 0.5
    /// threshold and NaN marks an abstention.
    pub fn from_probs(
        patient_ids: Vec<String>,
        classifier_names: Vec<String>,
        probs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let votes = probs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&p| {
                        if p.is_nan() {
                            Vote::Abstain
                        } else if p >= 0.5 {
                            Vote::One
                        } else {
                            Vote::Zero
                        }
                    })
                    .collect()
            })
            .collect();
        VoteMatrix::new(patient_ids, classifier_names, votes, probs)
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_classifiers(&self) -> usize {
        self.classifier_names.len()
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn classifier_names(&self) -> &[String] {
        &self.classifier_names
    }

    pub fn vote(&self, patient: usize, classifier: usize) -> Vote {
        self.votes[patient][classifier]
    }

    pub fn prob(&self, patient: usize, classifier: usize) -> f64 {
        self.probs[patient][classifier]
    }

    pub fn vote_row(&self, patient: usize) -> &[Vote] {
        &self.votes[patient]
    }

    pub fn prob_row(&self, patient: usize) -> &[f64] {
        &self.probs[patient]
    }

    /// Mean probability over non-abstaining classifiers; used as the
    /// majority-vote ranking score. None when everything abstained.
    pub fn mean_prob(&self, patient: usize) -> Option<f64> {
        let present: Vec<f64> = self.probs[patient]
            .iter()
            .copied()
            .filter(|p| !p.is_nan())
            .collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }

    /// CSV with one vote and one probability column per classifier.
    /// Probabilities print in shortest-round-trip form so import followed
    /// by export is byte-identical.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("patient_id");
        for name in &self.classifier_names {
            out.push_str(&format!(",{name}_vote,{name}_prob"));
        }
        out.push('\n');
        for (i, id) in self.patient_ids.iter().enumerate() {
            out.push_str(id);
            for j in 0..self.classifier_names.len() {
                let v = self.votes[i][j];
                out.push(',');
                out.push_str(v.as_str());
                out.push(',');
                if v != Vote::Abstain {
                    out.push_str(&format!("{}", self.probs[i][j]));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_delimited(text: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::MalformedRecord { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "empty vote matrix".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"patient_id") || cols.len() < 3 || (cols.len() - 1) % 2 != 0 {
            return Err(bad(1, "header must be patient_id plus vote/prob column pairs".into()));
        }
        let mut names = Vec::new();
        for pair in cols[1..].chunks(2) {
            let name = pair[0]
                .strip_suffix("_vote")
                .filter(|n| pair[1] == format!("{n}_prob"))
                .ok_or_else(|| bad(1, format!("bad column pair {pair:?}")))?;
            names.push(name.to_string());
        }
        let mut ids = Vec::new();
        let mut votes = Vec::new();
        let mut probs = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(line_no, format!("expected {} fields, got {}", cols.len(), fields.len())));
            }
            ids.push(fields[0].to_string());
            let mut vrow = Vec::with_capacity(names.len());
            let mut prow = Vec::with_capacity(names.len());
            for pair in fields[1..].chunks(2) {
                let vote = match pair[0] {
                    "0" => Vote::Zero,
                    "1" => Vote::One,
                    "abstain" => Vote::Abstain,
                    other => return Err(bad(line_no, format!("bad vote {other:?}"))),
                };
                let prob = if vote == Vote::Abstain {
                    if !pair[1].is_empty() {
                        return Err(bad(line_no, "abstention must have empty probability".into()));
                    }
                    f64::NAN
                } else {
                    pair[1]
                        .parse::<f64>()
                        .map_err(|e| bad(line_no, format!("bad probability {:?}: {e}", pair[1])))?
                };
                vrow.push(vote);
                prow.push(prob);
            }
            votes.push(vrow);
            probs.push(prow);
        }
        VoteMatrix::new(ids, names, votes, probs)
    }
}

/// Majority vote per patient: most non-abstaining votes wins; a count tie
/// falls back to the mean class-1 probability against 0.5, and an exact
/// residual tie resolves to class 0.
pub fn majority_vote(votes: &VoteMatrix) -> Result<Vec<u8>> {
    let all_abstained: Vec<String> = (0..votes.n_patients())
        .filter(|&i| votes.vote_row(i).iter().all(|&v| v == Vote::Abstain))
        .map(|i| votes.patient_ids()[i].clone())
        .collect();
    if !all_abstained.is_empty() {
        return Err(Error::AllAbstained(all_abstained));
    }
    Ok((0..votes.n_patients())
        .map(|i| {
            let mut ones = 0usize;
            let mut zeros = 0usize;
            for &v in votes.vote_row(i) {
                match v {
                    Vote::One => ones += 1,
                    Vote::Zero => zeros += 1,
                    Vote::Abstain => {}
                }
            }
            use std::cmp::Ordering;
            match ones.cmp(&zeros) {
                Ordering::Greater => 1,
                Ordering::Less => 0,
                Ordering::Equal => {
                    let mean = votes.mean_prob(i).expect("non-abstaining vote exists");
                    (mean > 0.5) as u8
                }
            }
        })
        .collect())
}
