use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Every threshold the calibrator considers, ascending: a sentinel below the
/// lowest score, the midpoint between each pair of adjacent distinct scores,
/// and a sentinel above the highest score.
///
/// Sentinels stay inside `[0, 1]` when the scores do, so calibrated
/// probability thresholds remain probabilities.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.is_empty() {
        return Vec::new();
    }
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(if lo > 0.0 { 0.0 } else { lo - 1.0 });
    for w in distinct.windows(2) {
        let mid = w[0] + (w[1] - w[0]) / 2.0;
        // Adjacent floats can round the midpoint onto an endpoint; the lower
        // endpoint gives the same split under the strict `>` rule.
        out.push(if mid > w[0] && mid < w[1] { mid } else { w[0] });
    }
    out.push(if hi < 1.0 { 1.0 } else { hi + 1.0 });
    out
}

/// Accuracy-maximizing threshold on a validation split; ties go to the lowest
/// candidate. Uses one sorted sweep over the candidates.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool]) -> Result<Calibration> {
    if scores.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "length mismatch: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Parameter("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Calibration(
            "validation split must contain both classes".into(),
        ));
    }
    let n = scores.len() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let candidates = candidate_thresholds(scores);

    // Below every score, everything is predicted true.
    let mut correct = n_pos as i64;
    let mut best = Calibration {
        threshold: candidates[0],
        accuracy: correct as f64 / n,
    };
    let mut i = 0;
    for &t in &candidates[1..] {
        // Every score at the current distinct value flips to "false".
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            correct += if labels[order[i]] { -1 } else { 1 };
            i += 1;
        }
        let acc = correct as f64 / n;
        if acc > best.accuracy {
            best = Calibration { threshold: t, accuracy: acc };
        }
    }
    Ok(best)
}

/// Row positions of a stratified validation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSplit {
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded, label-stratified split. The validation part has `round(fraction * n)`
/// rows and its positive count is `round(size * positives / n)`.
pub fn split_validation(labels: &[bool], fraction: f64, seed: u64) -> Result<ValidationSplit> {
    let n = labels.len();
    if n < 10 {
        return Err(Error::Parameter(format!(
            "validation split needs at least 10 rows, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("fraction {fraction} not in (0, 1)")));
    }
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    let mut rng = seeded_rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let size = (fraction * n as f64).round() as usize;
    let mut n_pos = ((size * pos.len()) as f64 / n as f64).round() as usize;
    n_pos = n_pos.min(pos.len()).max(size.saturating_sub(neg.len()));
    let n_neg = size - n_pos;

    let mut validation: Vec<usize> = pos[..n_pos].iter().chain(&neg[..n_neg]).copied().collect();
    let mut test: Vec<usize> = pos[n_pos..].iter().chain(&neg[n_neg..]).copied().collect();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(ValidationSplit { validation, test })
}
