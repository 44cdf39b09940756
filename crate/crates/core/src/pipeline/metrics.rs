use super::PipelineError;

/// Predictions are clamped to `[BCE_EPS, 1 − BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

fn check_labels(labels: &[u8]) -> Result<(), PipelineError> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&l) => Err(PipelineError::BadLabel(l)),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(preds: &[f64], labels: &[u8]) -> Result<f64, PipelineError> {
    if preds.len() != labels.len() {
        return Err(PipelineError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if preds.is_empty() {
        return Err(PipelineError::Empty);
    }
    check_labels(labels)?;
    let sum: f64 = preds.iter().zip(labels).map(|(&p, &y)| example_bce(p, y)).sum();
    Ok(sum / preds.len() as f64)
}

pub(crate) fn example_bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `∂bce/∂logit` for one example; zero where the clamp is active.
pub(crate) fn example_bce_grad(p: f64, y: u8) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    p - f64::from(y)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, via the Mann–Whitney rank sum.
pub fn evaluate_auc(scores: &[f64], labels: &[u8]) -> Result<f64, PipelineError> {
    if scores.len() != labels.len() {
        return Err(PipelineError::LengthMismatch { preds: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(PipelineError::Empty);
    }
    check_labels(labels)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(PipelineError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::SingleClass { n: labels.len(), label: labels[0] });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}
