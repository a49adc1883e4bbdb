use crate::error::{Error, Result};

/// Area under the ROC curve as the pair-counting statistic
/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, computed exactly in integers by sorting.
pub fn auc_roc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Evaluation(format!("score {i} is NaN")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Evaluation(format!("label {l} is not binary")));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count() as u128;
    let negatives = labels.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Evaluation("AUC-ROC is undefined unless both classes are present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the Mann-Whitney U: 2 per ordered pair, 1 per tie.
    let (mut twice_u, mut negatives_below) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 { pos += 1 } else { neg += 1 }
            j += 1;
        }
        twice_u += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}
