use crate::{Error, Result};

/// ROC AUC by the rank statistic: average ranks (ties share the mean rank),
/// then AUC = (R_pos - P(P+1)/2) / (P*N). Equivalent to the win fraction
/// over all positive/negative pairs with ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the mean 1-based rank
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = n as f64 - p;
    let rank_sum: f64 = (0..n).filter(|&i| labels[i] == 1).map(|i| ranks[i]).sum();
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg))
}

/// O(P*N) pair-counting reference for `roc_auc`. Slow on purpose; kept as
/// an independent check, not for production use.
pub fn roc_auc_brute_force(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / pairs)
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "score".into() });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::DimMismatch(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClassScores);
    }
    Ok(())
}

/// Precision, recall, and F1 for hard labels, with the 0-denominator
/// convention: no predicted positives → precision 0, no true positives →
/// recall 0, both zero → F1 0.
pub fn precision_recall_f1(predicted: &[u8], labels: &[u8]) -> Result<(f64, f64, f64)> {
    if predicted.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}
