use crate::{Error, Result};

/// Probabilities are clamped into [CLAMP, 1-CLAMP] before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over the batch.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(probs, labels)?;
    let n = probs.len() as f64;
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = clamp(p);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / n)
}

/// dLoss/dp_i for the mean-reduced loss. Zero where the clamp is active,
/// matching `bce_loss` exactly so numeric and analytic gradients agree.
pub fn bce_grad(probs: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_pairs(probs, labels)?;
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
                0.0
            } else {
                let y = y as f64;
                (p - y) / (p * (1.0 - p)) / n
            }
        })
        .collect())
}

fn check_pairs(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::DimMismatch("empty batch".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::DimMismatch(format!("label {y} is not 0 or 1")));
    }
    Ok(())
}
