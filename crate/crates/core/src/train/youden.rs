use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Confusion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenChoice {
    pub threshold: f64,
    /// Sensitivity + specificity − 1 at `threshold`.
    pub j: f64,
}

/// J = TPR − FPR under the rule `p >= threshold`.
pub fn youden_j(probs: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let c = Confusion::at_threshold(probs, labels, threshold);
    c.tp as f64 / (c.tp + c.fn_) as f64 - c.fp as f64 / (c.fp + c.tn) as f64
}

/// Threshold maximizing Youden's J over {0, 1} and the midpoints between
/// consecutive distinct probabilities. Ties go to the lowest threshold.
pub fn select_threshold_youden(probs: &[f64], labels: &[u8]) -> Result<YoudenChoice> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            expected: probs.len(),
            got: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Invalid("threshold selection needs both classes".into()));
    }
    let mut distinct: Vec<f64> = probs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0];
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);

    let mut best = YoudenChoice {
        threshold: candidates[0],
        j: youden_j(probs, labels, candidates[0]),
    };
    for &t in &candidates[1..] {
        let j = youden_j(probs, labels, t);
        if j > best.j {
            best = YoudenChoice { threshold: t, j };
        }
    }
    Ok(best)
}
