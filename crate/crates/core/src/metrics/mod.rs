//! Classification, regression, calibration and fold-level statistics.

mod calibration;
mod classification;
mod regression;
mod stats;

pub use calibration::{calibration_metrics, decision_curve, default_dca_grid, CalibrationReport, DecisionPoint, DEFAULT_BINS};
pub use classification::{average_precision, classification_metrics, roc_auc, ClassificationReport, Confusion};
pub use regression::{regression_metrics, target_errors, RegressionReport, TargetError};
pub use stats::{effect_size, fold_ci, mean, pearson_r, sample_std, t_critical, ConfidenceInterval, EffectSize};
