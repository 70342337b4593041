use super::{Vote, VoteMatrix};
use crate::{Error, Result};

/// Fitted two-class label model: y ~ Bernoulli(prior), and classifier i
/// reports y with probability `accuracies[i]`, independently given y.
/// Abstentions are treated as missing at random.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelModelParams {
    pub classifier_names: Vec<String>,
    /// Clamped into [0.51, 0.99] after fitting.
    pub accuracies: Vec<f64>,
    pub prior: f64,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub log_likelihood_trace: Vec<f64>,
    /// Set when the input carried no usable signal (every vote identical);
    /// the returned params then lean on the prior alone.
    pub degenerate: bool,
}

pub const ACCURACY_CLAMP: (f64, f64) = (0.51, 0.99);

impl LabelModelParams {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("label model params serialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("label model params: {e}")))
    }
}

/// Unnormalized per-class likelihoods of one vote row.
fn branch_likelihoods(accuracies: &[f64], prior: f64, row: &[Vote]) -> (f64, f64) {
    let mut l1 = prior;
    let mut l0 = 1.0 - prior;
    for (j, &v) in row.iter().enumerate() {
        match v {
            Vote::One => {
                l1 *= accuracies[j];
                l0 *= 1.0 - accuracies[j];
            }
            Vote::Zero => {
                l1 *= 1.0 - accuracies[j];
                l0 *= accuracies[j];
            }
            Vote::Abstain => {}
        }
    }
    (l1, l0)
}

/// EM fit from a fixed initialization (a_i = 0.7, prior = 0.5). The fit is
/// fully deterministic; `seed` is accepted for interface uniformity with
/// the other fitting routines but does not influence the result.
pub fn fit_label_model(
    votes: &VoteMatrix,
    max_iters: usize,
    tol: f64,
    _seed: u64,
) -> Result<LabelModelParams> {
    let m = votes.n_classifiers();
    let n = votes.n_patients();
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "label model needs >= 2 classifiers, got {m}"
        )));
    }
    if n < 10 {
        return Err(Error::InvalidConfig(format!(
            "label model needs >= 10 patients, got {n}"
        )));
    }
    if max_iters == 0 || !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidConfig("max_iters and tol must be positive".into()));
    }

    // a constant vote matrix carries no information; report that instead
    // of letting EM wander
    let mut cast: Option<Vote> = None;
    let mut constant = true;
    let mut any_vote = false;
    for i in 0..n {
        for &v in votes.vote_row(i) {
            if v == Vote::Abstain {
                continue;
            }
            any_vote = true;
            match cast {
                None => cast = Some(v),
                Some(c) if c == v => {}
                Some(_) => {
                    constant = false;
                }
            }
        }
    }
    if any_vote && constant {
        let prior = if cast == Some(Vote::One) { 0.99 } else { 0.01 };
        let accuracies = vec![ACCURACY_CLAMP.0; m];
        let ll: f64 = (0..n)
            .map(|i| {
                let (l1, l0) = branch_likelihoods(&accuracies, prior, votes.vote_row(i));
                (l1 + l0).ln()
            })
            .sum();
        return Ok(LabelModelParams {
            classifier_names: votes.classifier_names().to_vec(),
            accuracies,
            prior,
            iterations: 0,
            final_log_likelihood: ll,
            log_likelihood_trace: vec![],
            degenerate: true,
        });
    }

    let mut a = vec![0.7; m];
    let mut prior = 0.5;
    let mut trace: Vec<f64> = Vec::new();
    let mut posteriors = vec![0.0; n];
    let mut iterations = 0;
    for t in 1..=max_iters {
        let mut ll = 0.0;
        for i in 0..n {
            let (l1, l0) = branch_likelihoods(&a, prior, votes.vote_row(i));
            let denom = l1 + l0;
            posteriors[i] = l1 / denom;
            ll += denom.ln();
        }
        iterations = t;
        trace.push(ll);

        prior = posteriors.iter().sum::<f64>() / n as f64;
        for j in 0..m {
            let mut agree = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                match votes.vote(i, j) {
                    Vote::One => {
                        agree += posteriors[i];
                        count += 1;
                    }
                    Vote::Zero => {
                        agree += 1.0 - posteriors[i];
                        count += 1;
                    }
                    Vote::Abstain => {}
                }
            }
            if count > 0 {
                a[j] = agree / count as f64;
            }
        }

        if t >= 2 && (trace[t - 1] - trace[t - 2]).abs() < tol {
            break;
        }
    }

    // label-switching symmetry: keep the orientation where classifiers are
    // better than chance on average
    let mean_a = a.iter().sum::<f64>() / m as f64;
    if mean_a < 0.5 {
        for v in &mut a {
            *v = 1.0 - *v;
        }
        prior = 1.0 - prior;
    }
    // clamp only after EM has finished; clamping inside the loop would
    // break the monotone-likelihood guarantee
    for v in &mut a {
        *v = v.clamp(ACCURACY_CLAMP.0, ACCURACY_CLAMP.1);
    }

    Ok(LabelModelParams {
        classifier_names: votes.classifier_names().to_vec(),
        accuracies: a,
        prior,
        iterations,
        final_log_likelihood: *trace.last().unwrap(),
        log_likelihood_trace: trace,
        degenerate: false,
    })
}

/// Posterior P(y=1 | votes) per patient and the 0.5-thresholded label.
/// A fully abstained row falls back to the prior.
pub fn label_model_predict(
    params: &LabelModelParams,
    votes: &VoteMatrix,
) -> Result<(Vec<f64>, Vec<u8>)> {
    if votes.n_classifiers() != params.accuracies.len() {
        return Err(Error::DimMismatch(format!(
            "{} classifiers in matrix, {} in params",
            votes.n_classifiers(),
            params.accuracies.len()
        )));
    }
    if !params.classifier_names.is_empty()
        && params.classifier_names != votes.classifier_names()
    {
        return Err(Error::DimMismatch(
            "classifier names in params and vote matrix disagree".into(),
        ));
    }
    let mut probs = Vec::with_capacity(votes.n_patients());
    let mut labels = Vec::with_capacity(votes.n_patients());
    for i in 0..votes.n_patients() {
        let (l1, l0) = branch_likelihoods(&params.accuracies, params.prior, votes.vote_row(i));
        let p = l1 / (l1 + l0);
        probs.push(p);
        labels.push((p >= 0.5) as u8);
    }
    Ok((probs, labels))
}

/// Samples a vote matrix from the generative model itself; the planted
/// truth comes back alongside. Accuracies must sit in (0.5, 1) so hard
/// votes and their probabilities stay coherent.
pub fn sample_planted_votes(
    accuracies: &[f64],
    prior: f64,
    n_patients: usize,
    seed: u64,
) -> Result<(VoteMatrix, Vec<u8>)> {
    use rand::{Rng, SeedableRng};
    if accuracies.iter().any(|a| !(*a > 0.5 && *a < 1.0)) {
        return Err(Error::InvalidConfig(
            "planted accuracies must lie in (0.5, 1)".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(n_patients);
    let mut truth = Vec::with_capacity(n_patients);
    for _ in 0..n_patients {
        let y = rng.gen_bool(prior);
        truth.push(y as u8);
        let row: Vec<f64> = accuracies
            .iter()
            .map(|&acc| {
                let correct = rng.gen_bool(acc);
                let vote_one = if correct { y } else { !y };
                if vote_one {
                    acc
                } else {
                    1.0 - acc
                }
            })
            .collect();
        probs.push(row);
    }
    let ids = (0..n_patients).map(|i| format!("p{i}")).collect();
    let names = (0..accuracies.len()).map(|j| format!("clf{j}")).collect();
    Ok((VoteMatrix::from_probs(ids, names, probs)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::majority_vote;

    fn params(a: &[f64], prior: f64) -> LabelModelParams {
        LabelModelParams {
            classifier_names: vec![],
            accuracies: a.to_vec(),
            prior,
            iterations: 1,
            final_log_likelihood: 0.0,
            log_likelihood_trace: vec![],
            degenerate: false,
        }
    }

    fn matrix_from_votes(rows: Vec<Vec<u8>>) -> VoteMatrix {
        let probs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| if v == 1 { 0.9 } else { 0.1 }).collect())
            .collect();
        VoteMatrix::from_probs(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            (0..rows[0].len()).map(|j| format!("clf{j}")).collect(),
            probs,
        )
        .unwrap()
    }

    #[test]
    fn hand_bayes_posterior() {
        let p = params(&[0.9, 0.8, 0.6], 0.5);
        let m = matrix_from_votes(vec![vec![1, 1, 0]]);
        let (probs, labels) = label_model_predict(&p, &m).unwrap();
        // (0.9*0.8*0.4) / (0.9*0.8*0.4 + 0.1*0.2*0.6) = 0.288/0.300
        assert!((probs[0] - 0.96).abs() < 1e-9, "posterior {}", probs[0]);
        assert_eq!(labels[0], 1);
    }

    #[test]
    fn symmetric_split_sits_at_half_and_labels_one() {
        let p = params(&[0.7, 0.7], 0.5);
        let m = matrix_from_votes(vec![vec![1, 0]]);
        let (probs, labels) = label_model_predict(&p, &m).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert_eq!(labels[0], 1);
    }

    #[test]
    fn single_effective_vote_follows_that_accuracy() {
        let p = params(&[0.9, 0.8], 0.5);
        let m = VoteMatrix::from_probs(
            vec!["p0".into(), "p1".into()],
            vec!["a".into(), "b".into()],
            vec![vec![0.9, f64::NAN], vec![0.1, f64::NAN]],
        )
        .unwrap();
        let (probs, _) = label_model_predict(&p, &m).unwrap();
        assert!((probs[0] - 0.9).abs() < 1e-12);
        assert!((probs[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fully_abstained_row_predicts_the_prior() {
        let p = params(&[0.9, 0.8], 0.3);
        let m = VoteMatrix::from_probs(
            vec!["p0".into()],
            vec!["a".into(), "b".into()],
            vec![vec![f64::NAN, f64::NAN]],
        )
        .unwrap();
        let (probs, labels) = label_model_predict(&p, &m).unwrap();
        assert!((probs[0] - 0.3).abs() < 1e-12);
        assert_eq!(labels[0], 0);
    }

    #[test]
    fn em_recovers_planted_accuracies() {
        let planted = [0.9, 0.8, 0.6];
        let (votes, _) = sample_planted_votes(&planted, 0.5, 5000, 42).unwrap();
        let fit = fit_label_model(&votes, 500, 1e-6, 0).unwrap();
        for (got, want) in fit.accuracies.iter().zip(planted) {
            assert!((got - want).abs() <= 0.05, "accuracy {got} vs planted {want}");
        }
        assert!((fit.prior - 0.5).abs() <= 0.05, "prior {}", fit.prior);
        assert!(!fit.degenerate);
        assert!(fit.iterations < 500, "did not converge: {}", fit.iterations);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let (votes, _) = sample_planted_votes(&[0.85, 0.7, 0.55], 0.4, 400, 7).unwrap();
        let fit = fit_label_model(&votes, 200, 1e-12, 0).unwrap();
        for w in fit.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "LL dropped: {} -> {}", w[0], w[1]);
        }
        assert_eq!(
            fit.final_log_likelihood,
            *fit.log_likelihood_trace.last().unwrap()
        );
    }

    #[test]
    fn fit_is_deterministic_and_ignores_seed() {
        let (votes, _) = sample_planted_votes(&[0.8, 0.7], 0.5, 200, 3).unwrap();
        let a = fit_label_model(&votes, 100, 1e-8, 1).unwrap();
        let b = fit_label_model(&votes, 100, 1e-8, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unanimous_per_patient_hits_the_clamp_ceiling() {
        let mut rows = Vec::new();
        for i in 0..30 {
            let v = (i % 2) as u8;
            rows.push(vec![v, v, v]);
        }
        let votes = matrix_from_votes(rows);
        let fit = fit_label_model(&votes, 500, 1e-9, 0).unwrap();
        for a in &fit.accuracies {
            assert_eq!(*a, ACCURACY_CLAMP.1, "accuracy {a} not at ceiling");
        }
        let (probs, labels) = label_model_predict(&fit, &votes).unwrap();
        for (i, (&p, &l)) in probs.iter().zip(&labels).enumerate() {
            let want = (i % 2) as u8;
            assert_eq!(l, want, "patient {i}");
            assert!(if want == 1 { p > 0.9 } else { p < 0.1 });
        }
    }

    #[test]
    fn constant_matrix_is_degenerate() {
        let votes = matrix_from_votes(vec![vec![1, 1]; 12]);
        let fit = fit_label_model(&votes, 500, 1e-6, 0).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.accuracies, vec![ACCURACY_CLAMP.0; 2]);
        assert!((fit.prior - 0.99).abs() < 1e-12);
        let (probs, labels) = label_model_predict(&fit, &votes).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
        assert!(probs.windows(2).all(|w| w[0] == w[1]));

        let votes0 = matrix_from_votes(vec![vec![0, 0]; 12]);
        let fit0 = fit_label_model(&votes0, 500, 1e-6, 0).unwrap();
        assert!(fit0.degenerate);
        assert!((fit0.prior - 0.01).abs() < 1e-12);
    }

    #[test]
    fn duplicated_classifier_overweights_its_bloc() {
        // two exact copies of a weak classifier plus one strong independent:
        // the independence assumption double-counts the copied evidence
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (a_weak, a_strong) = (0.6, 0.9);
        let mut probs = Vec::new();
        for _ in 0..4000 {
            let y = rng.gen_bool(0.5);
            let weak_vote = if rng.gen_bool(a_weak) { y } else { !y };
            let strong_vote = if rng.gen_bool(a_strong) { y } else { !y };
            let wp = if weak_vote { 0.8 } else { 0.2 };
            let sp = if strong_vote { 0.9 } else { 0.1 };
            probs.push(vec![wp, wp, sp]);
        }
        let votes = VoteMatrix::from_probs(
            (0..4000).map(|i| format!("p{i}")).collect(),
            vec!["weak_a".into(), "weak_b".into(), "strong".into()],
            probs,
        )
        .unwrap();
        let fit = fit_label_model(&votes, 500, 1e-8, 0).unwrap();

        // the self-consistent duplicated pair looks more reliable to the
        // independence model than the genuinely stronger classifier
        assert!(
            fit.accuracies[0] > fit.accuracies[2],
            "duplicated column fit {} should exceed strong column fit {}",
            fit.accuracies[0],
            fit.accuracies[2]
        );

        // on (weak=1, weak=1, strong=0) the fitted model follows the bloc,
        // while counting the weak evidence once with its true accuracy
        // sides with the strong classifier: 0.5*0.6*0.1/(0.5*0.6*0.1 +
        // 0.5*0.4*0.9) = 0.143
        let m = VoteMatrix::from_probs(
            vec!["q".into()],
            vec!["weak_a".into(), "weak_b".into(), "strong".into()],
            vec![vec![0.8, 0.8, 0.1]],
        )
        .unwrap();
        let (dup_probs, dup_labels) = label_model_predict(&fit, &m).unwrap();
        assert_eq!(dup_labels[0], 1, "fitted model should follow the duplicated bloc");
        let collapsed = 0.5 * a_weak * (1.0 - a_strong)
            / (0.5 * a_weak * (1.0 - a_strong) + 0.5 * (1.0 - a_weak) * a_strong);
        assert!(collapsed < 0.5);
        assert!(
            dup_probs[0] > collapsed + 0.3,
            "no over-weighting: duplicated {} vs collapsed {collapsed}",
            dup_probs[0]
        );
    }

    #[test]
    fn equal_accuracy_label_model_matches_majority_on_all_patterns() {
        // probabilities 0.9/0.2 keep count-tied patterns off the exact
        // mean-0.5 boundary, where the two tie conventions differ by design
        // (majority residual tie -> 0, posterior 0.5 -> 1)
        for n in 1..=5usize {
            let p = params(&vec![0.8; n], 0.5);
            for pattern in 0..2usize.pow(n as u32) {
                let row: Vec<u8> = (0..n).map(|j| ((pattern >> j) & 1) as u8).collect();
                let probs: Vec<f64> =
                    row.iter().map(|&v| if v == 1 { 0.9 } else { 0.2 }).collect();
                let m = VoteMatrix::from_probs(
                    vec!["p0".into()],
                    (0..n).map(|j| format!("clf{j}")).collect(),
                    vec![probs],
                )
                .unwrap();
                let (_, lm) = label_model_predict(&p, &m).unwrap();
                let mv = majority_vote(&m).unwrap();
                assert_eq!(lm[0], mv[0], "pattern {row:?}");
            }
        }
    }

    #[test]
    fn heterogeneous_label_model_beats_or_ties_majority() {
        let planted = [0.9, 0.6, 0.55];
        let mut lm_total = 0.0;
        let mut mv_total = 0.0;
        for seed in 0..20u64 {
            let (votes, truth) = sample_planted_votes(&planted, 0.5, 5000, 1000 + seed).unwrap();
            let fit = fit_label_model(&votes, 500, 1e-6, 0).unwrap();
            let (_, lm_labels) = label_model_predict(&fit, &votes).unwrap();
            let mv_labels = majority_vote(&votes).unwrap();
            let acc = |labels: &[u8]| {
                labels
                    .iter()
                    .zip(&truth)
                    .filter(|(a, b)| a == b)
                    .count() as f64
                    / truth.len() as f64
            };
            lm_total += acc(&lm_labels);
            mv_total += acc(&mv_labels);
        }
        let (lm_mean, mv_mean) = (lm_total / 20.0, mv_total / 20.0);
        assert!(
            lm_mean >= mv_mean,
            "label model mean accuracy {lm_mean} below majority vote {mv_mean}"
        );
    }

    #[test]
    fn fit_validates_shape_preconditions() {
        let (votes, _) = sample_planted_votes(&[0.8, 0.7], 0.5, 9, 0).unwrap();
        assert!(fit_label_model(&votes, 500, 1e-6, 0).is_err());
        let one = VoteMatrix::from_probs(
            (0..12).map(|i| format!("p{i}")).collect(),
            vec!["only".into()],
            vec![vec![0.9]; 12],
        )
        .unwrap();
        assert!(fit_label_model(&one, 500, 1e-6, 0).is_err());
    }

    #[test]
    fn params_toml_round_trip() {
        let (votes, _) = sample_planted_votes(&[0.8, 0.7], 0.5, 50, 5).unwrap();
        let fit = fit_label_model(&votes, 50, 1e-8, 0).unwrap();
        let text = fit.to_toml_string();
        let back = LabelModelParams::from_toml_str(&text).unwrap();
        assert_eq!(back, fit);
    }
}
