use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney rank statistic. Tied scores
/// receive their mid-rank, which credits each tied positive/negative pair 0.5.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUROC undefined: labels contain a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the rank sum keeps mid-ranks integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, mid-rank (i+j+2)/2
        let mid2 = (i + j + 2) as u64;
        let pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum2 += mid2 * pos;
        i = j + 1;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    // 2·U = 2·R − P(P+1)
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}
