use serde::{Deserialize, Serialize};

use crate::data::AnthroTarget;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

/// Per-target errors in raw units; `None` when a target has no truth values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionReport {
    pub targets: [Option<TargetError>; 4],
}

impl RegressionReport {
    pub fn get(&self, target: AnthroTarget) -> Option<TargetError> {
        self.targets[target.index()]
    }
}

/// RMSE and MAE of one target over the pairs whose truth is present.
pub fn target_errors(preds: &[f64], truths: &[Option<f64>]) -> Result<TargetError> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension {
            expected: preds.len(),
            got: truths.len(),
        });
    }
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for (p, t) in preds.iter().zip(truths) {
        if let Some(t) = t {
            let e = p - t;
            sq += e * e;
            abs += e.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no unmasked pairs".into()));
    }
    Ok(TargetError {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        count: n,
    })
}

/// Errors for all four targets; targets with no truth values are left `None`.
pub fn regression_metrics(preds: &[[f64; 4]], truths: &[[Option<f64>; 4]]) -> Result<RegressionReport> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension {
            expected: preds.len(),
            got: truths.len(),
        });
    }
    let mut report = RegressionReport::default();
    for t in AnthroTarget::ALL {
        let i = t.index();
        let p: Vec<f64> = preds.iter().map(|r| r[i]).collect();
        let y: Vec<Option<f64>> = truths.iter().map(|r| r[i]).collect();
        report.targets[i] = target_errors(&p, &y).ok();
    }
    Ok(report)
}
