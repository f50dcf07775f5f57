use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub mce: f64,
    pub brier: f64,
}

/// Equal-width binning on [0, 1]; p = 1 falls in the last bin.
pub fn calibration_metrics(probs: &[f64], labels: &[u8], n_bins: usize) -> Result<CalibrationReport> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Invalid("calibration needs aligned, nonempty inputs".into()));
    }
    if n_bins == 0 {
        return Err(Error::Invalid("n_bins must be at least 1".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0.0; n_bins];
    let mut brier = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let b = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        count[b] += 1;
        conf[b] += p;
        hits[b] += y as f64;
        brier += (p - y as f64).powi(2);
    }
    let n = probs.len() as f64;
    let (mut ece, mut mce) = (0.0f64, 0.0f64);
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let c = count[b] as f64;
        let gap = (hits[b] / c - conf[b] / c).abs();
        ece += c / n * gap;
        mce = mce.max(gap);
    }
    Ok(CalibrationReport {
        ece,
        mce,
        brier: brier / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub threshold: f64,
    pub net_benefit: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// Net benefit of the model and the treat-all/treat-none policies at each threshold.
pub fn decision_curve(probs: &[f64], labels: &[u8], thresholds: &[f64]) -> Result<Vec<DecisionPoint>> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Invalid("decision curve needs aligned, nonempty inputs".into()));
    }
    let n = probs.len() as f64;
    let prevalence = labels.iter().filter(|&&y| y == 1).count() as f64 / n;
    thresholds
        .iter()
        .map(|&t| {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Invalid(format!("threshold {t} must lie in (0, 1)")));
            }
            let odds = t / (1.0 - t);
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&p, &y) in probs.iter().zip(labels) {
                if p >= t {
                    if y == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            Ok(DecisionPoint {
                threshold: t,
                net_benefit: tp as f64 / n - fp as f64 / n * odds,
                treat_all: prevalence - (1.0 - prevalence) * odds,
                treat_none: 0.0,
            })
        })
        .collect()
}

/// Thresholds 0.01, 0.02, …, 0.99.
pub fn default_dca_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_confidence() {
        let r = calibration_metrics(&[1.0, 1.0, 1.0], &[1, 1, 1], 10).unwrap();
        assert_eq!((r.ece, r.mce, r.brier), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_bin_example() {
        let r = calibration_metrics(&[0.8, 0.8], &[1, 0], 1).unwrap();
        assert!((r.ece - 0.3).abs() < 1e-12);
        assert!((r.mce - 0.3).abs() < 1e-12);
        assert!((r.brier - 0.34).abs() < 1e-12);
    }

    #[test]
    fn dca_examples() {
        let pts = decision_curve(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 1, 0], &[0.5]).unwrap();
        assert!(pts[0].net_benefit.abs() < 1e-12);
        let perfect = decision_curve(&[0.95, 0.9, 0.05, 0.0, 0.1], &[1, 1, 0, 0, 0], &[0.2, 0.5, 0.8]).unwrap();
        for p in perfect {
            assert!((p.net_benefit - 0.4).abs() < 1e-12);
        }
        assert!(decision_curve(&[0.5], &[1], &[1.0]).is_err());
    }

    #[test]
    fn treat_all_crosses_zero_at_prevalence() {
        let labels = [1, 0, 0, 0];
        let pts = decision_curve(&[0.5; 4], &labels, &[0.25]).unwrap();
        assert!(pts[0].treat_all.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ece_bounded_by_mce(
            data in proptest::collection::vec((0.0f64..=1.0, 0u8..2), 1..100),
            bins in 1usize..20
        ) {
            let p: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<u8> = data.iter().map(|d| d.1).collect();
            let r = calibration_metrics(&p, &y, bins).unwrap();
            prop_assert!(r.ece <= r.mce + 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.brier));
        }

        #[test]
        fn small_threshold_nb_approaches_tp_rate(
            data in proptest::collection::vec((0.01f64..=1.0, 0u8..2), 1..100)
        ) {
            let p: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<u8> = data.iter().map(|d| d.1).collect();
            let tp = y.iter().filter(|&&v| v == 1).count() as f64 / y.len() as f64;
            let nb = decision_curve(&p, &y, &[1e-9]).unwrap()[0].net_benefit;
            prop_assert!((nb - tp).abs() < 1e-8);
        }
    }
}
