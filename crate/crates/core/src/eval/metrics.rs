//! Classification metrics: thresholded accuracy, rank-based ROC AUC,
//! Cohen's kappa and observed agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Parameter(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Parameter("empty input".into()));
    }
    Ok(())
}

/// Fraction of rows where `score > threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s > threshold) == y)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) hold ranks i+1..=j.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve from the Mann-Whitney U statistic:
/// P(score+ > score-) + P(tie) / 2.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Parameter("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs at least one positive and one negative".into(),
        ));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let n_pos = n_pos as f64;
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// ROC curve points from (0, 0) to (1, 1), one point per distinct score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Trapezoidal area; agrees with [`roc_auc`] including ties.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC curve needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve { points })
}

/// Raw fraction of items on which two label assignments agree.
pub fn observed_agreement(a: &[bool], b: &[bool]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

/// Cohen's kappa with chance agreement from the product of marginals.
/// Returns 1.0 when chance agreement is already perfect and so is observed.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    let p_o = observed_agreement(a, b)?;
    let n = a.len() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e >= 1.0 {
        // Both raters constant on the same class.
        return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Agreement summary over several raters: means over every unordered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub mean_observed_agreement: f64,
    pub mean_kappa: f64,
    pub majority: Vec<bool>,
}

/// Pairwise agreement and the majority label for each item. Ties in an even
/// number of raters resolve to `false`.
pub fn rater_agreement(raters: &[Vec<bool>]) -> Result<RaterAgreement> {
    if raters.len() < 2 {
        return Err(Error::Parameter("need at least two raters".into()));
    }
    let n = raters[0].len();
    let mut obs = 0.0;
    let mut kappa = 0.0;
    let mut pairs = 0.0;
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            obs += observed_agreement(&raters[i], &raters[j])?;
            kappa += cohens_kappa(&raters[i], &raters[j])?;
            pairs += 1.0;
        }
    }
    let majority = (0..n)
        .map(|k| 2 * raters.iter().filter(|r| r[k]).count() > raters.len())
        .collect();
    Ok(RaterAgreement {
        mean_observed_agreement: obs / pairs,
        mean_kappa: kappa / pairs,
        majority,
    })
}
