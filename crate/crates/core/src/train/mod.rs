//! Joint training, cross-validation, threshold selection and the ablation
//! and sweep harnesses.

mod ablation;
mod adam;
mod config;
mod folds;
mod trainer;
mod youden;

pub use ablation::{
    alpha_density, parse_arch, render_table, run_ablation, AblationAxis, AblationRow, AblationTable, AlphaDensity,
    TABLE_COLUMNS,
};
pub use adam::Adam;
pub use config::{PosWeightMode, TrainConfig};
pub use folds::{stratified_folds, train_indices};
pub use trainer::{
    evaluate_subjects, prepare_subjects, summarize, train, train_fold, train_prepared, with_retrieval, EpochLog,
    EvalReport, FoldReport, HeldOutPrediction, MetricSummary, PreparedSubject, TrainOutcome, TrainSummary,
};
pub use youden::{select_threshold_youden, youden_j, YoudenChoice};
