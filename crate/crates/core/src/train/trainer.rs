use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::folds::{stratified_folds, train_indices};
use super::youden::select_threshold_youden;
use crate::data::{target_stats_from_values, AnthroTarget, SubjectRecord, TargetStats};
use crate::error::{Error, Result};
use crate::gat::{batch_objective, Example, GatModel, LossConfig, ModelParams, RetrievalSignal, SubjectTargets};
use crate::graph::{build_subject_graph_scaled, drop_pose_family, PoseFamily, PoseGraph};
use crate::kb::KnowledgeBase;
use crate::metrics::{
    calibration_metrics, classification_metrics, fold_ci, mean, regression_metrics, sample_std,
    CalibrationReport, ClassificationReport, RegressionReport, DEFAULT_BINS,
};
use crate::predict::{predict_parts, retrieve, PredictionResult, RawRetrieval};
use crate::retrieval::RetrievalConfig;

/// A subject with its graph and retrieval outputs computed once.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub class_label: Option<u8>,
    pub anthro: [Option<f64>; 4],
    pub graph: PoseGraph,
    pub retrieval: Option<RawRetrieval>,
}

/// Builds graphs (optionally without one pose family) and, when a KB is
/// given, runs retrieval on the full record.
pub fn prepare_subjects(
    records: &[SubjectRecord],
    kb: Option<&KnowledgeBase>,
    retrieval: &RetrievalConfig,
    age_scale: f64,
    drop: Option<PoseFamily>,
) -> Result<Vec<PreparedSubject>> {
    records
        .iter()
        .map(|r| {
            let graph = match drop {
                Some(family) => build_subject_graph_scaled(&drop_pose_family(r, family)?, age_scale)?,
                None => build_subject_graph_scaled(r, age_scale)?,
            };
            let retrieval = kb.map(|kb| retrieve(r, kb, retrieval)).transpose()?;
            Ok(PreparedSubject {
                id: r.id.clone(),
                class_label: r.class_label,
                anthro: r.anthro.map(|a| a.to_array()).unwrap_or([None; 4]),
                graph,
                retrieval,
            })
        })
        .collect()
}

/// Re-runs only the retrieval step with another configuration.
pub fn with_retrieval(
    subjects: &[PreparedSubject],
    records: &[SubjectRecord],
    kb: &KnowledgeBase,
    retrieval: &RetrievalConfig,
) -> Result<Vec<PreparedSubject>> {
    subjects
        .iter()
        .zip(records)
        .map(|(s, r)| {
            Ok(PreparedSubject {
                retrieval: Some(retrieve(r, kb, retrieval)?),
                ..s.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Held-out prediction kept for pooled analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub subject_id: String,
    pub class_label: Option<u8>,
    pub probability: f64,
    pub alpha_cls: Option<f64>,
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: Option<ClassificationReport>,
    pub calibration: Option<CalibrationReport>,
    pub regression: RegressionReport,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub pos_weight: f64,
    /// Eval-mode training loss of the freshly initialized model.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLog>,
    /// 0 when no epoch improved on the initial model.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Eval-mode training loss of the restored model.
    pub best_train_loss: f64,
    pub threshold: f64,
    pub youden_j: f64,
    pub alpha_reg: Vec<f64>,
    pub target_stats: TargetStats,
    pub evaluation: EvalReport,
    pub predictions: Vec<HeldOutPrediction>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// 95% t-interval half width.
    pub ci_half_width: f64,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        if values.len() == 1 {
            return Some(MetricSummary {
                mean: values[0],
                std: 0.0,
                ci_half_width: 0.0,
            });
        }
        let ci = fold_ci(values, 0.95).ok()?;
        Some(MetricSummary {
            mean: mean(values),
            std: sample_std(values),
            ci_half_width: ci.half_width,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub folds: usize,
    pub retrieval_enabled: bool,
    pub metrics: BTreeMap<String, MetricSummary>,
}

pub struct TrainOutcome {
    pub reports: Vec<FoldReport>,
    pub models: Vec<GatModel>,
    pub summary: TrainSummary,
}

fn standardized_targets(s: &PreparedSubject, stats: &TargetStats) -> SubjectTargets {
    let mut reg = [None; 4];
    for t in AnthroTarget::ALL {
        reg[t.index()] = s.anthro[t.index()].map(|v| stats.standardize(v, t));
    }
    SubjectTargets {
        class_label: s.class_label,
        reg,
    }
}

struct FoldData<'a> {
    subjects: &'a [PreparedSubject],
    targets: Vec<SubjectTargets>,
    signals: Vec<Option<RetrievalSignal>>,
}

impl FoldData<'_> {
    fn examples(&self, idx: &[usize]) -> Vec<Example<'_>> {
        idx.iter()
            .map(|&i| Example {
                graph: &self.subjects[i].graph,
                targets: &self.targets[i],
                retrieval: self.signals[i].as_ref(),
            })
            .collect()
    }

    /// Eval-mode loss over `idx`, weighting each chunk by its label counts.
    fn loss(&self, model: &GatModel, idx: &[usize], cfg: &LossConfig) -> Result<f64> {
        let examples: Vec<Example<'_>> = self
            .examples(idx)
            .into_iter()
            .filter(|e| !e.targets.is_empty())
            .collect();
        let l = batch_objective::<ChaCha8Rng>(model, &examples, cfg, None, None)?;
        Ok(l.total)
    }
}

/// Predictions of `model` on `subjects` plus classification, calibration and
/// raw-unit regression metrics.
pub fn evaluate_subjects(
    model: &GatModel,
    subjects: &[PreparedSubject],
) -> Result<(EvalReport, Vec<PredictionResult>)> {
    let preds: Vec<PredictionResult> = subjects
        .iter()
        .map(|s| predict_parts(model, &s.graph, s.retrieval.as_ref()))
        .collect::<Result<_>>()?;
    let labeled: Vec<(f64, u8)> = preds
        .iter()
        .zip(subjects)
        .filter_map(|(p, s)| s.class_label.map(|y| (p.fused_probability, y)))
        .collect();
    let probs: Vec<f64> = labeled.iter().map(|x| x.0).collect();
    let labels: Vec<u8> = labeled.iter().map(|x| x.1).collect();
    let (classification, calibration) = if labeled.is_empty() {
        (None, None)
    } else {
        (
            Some(classification_metrics(&probs, &labels, model.threshold)?),
            Some(calibration_metrics(&probs, &labels, DEFAULT_BINS)?),
        )
    };
    let reg_preds: Vec<[f64; 4]> = preds.iter().map(|p| p.fused_reg).collect();
    let truths: Vec<[Option<f64>; 4]> = subjects.iter().map(|s| s.anthro).collect();
    let regression = regression_metrics(&reg_preds, &truths)?;
    Ok((
        EvalReport {
            classification,
            calibration,
            regression,
            count: subjects.len(),
        },
        preds,
    ))
}

fn check_dataset(subjects: &[PreparedSubject], cfg: &TrainConfig) -> Result<()> {
    let pos = subjects.iter().filter(|s| s.class_label == Some(1)).count();
    let neg = subjects.iter().filter(|s| s.class_label == Some(0)).count();
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("training data must contain both classes".into()));
    }
    if cfg.retrieval_enabled && subjects.iter().any(|s| s.retrieval.is_none()) {
        return Err(Error::Invalid("retrieval is enabled but no knowledge base was supplied".into()));
    }
    if let Some(s) = subjects.iter().find(|s| s.graph.feature_dim() != cfg.model.in_dim) {
        return Err(Error::Dimension {
            expected: cfg.model.in_dim,
            got: s.graph.feature_dim(),
        });
    }
    Ok(())
}

/// Trains one fold and returns the restored best model with its report.
pub fn train_fold(
    subjects: &[PreparedSubject],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<(GatModel, FoldReport)> {
    let stats = target_stats_from_values(train_idx.iter().map(|&i| subjects[i].anthro))?;
    let positives = train_idx.iter().filter(|&&i| subjects[i].class_label == Some(1)).count();
    let negatives = train_idx.iter().filter(|&&i| subjects[i].class_label == Some(0)).count();
    let pos_weight = cfg.pos_weight.weight(negatives, positives)?;
    let loss_cfg = LossConfig {
        pos_weight,
        aux_weight: cfg.aux_weight,
        retrieval_enabled: cfg.retrieval_enabled,
        scale: 1.0,
    };
    let data = FoldData {
        subjects,
        targets: subjects.iter().map(|s| standardized_targets(s, &stats)).collect(),
        signals: subjects
            .iter()
            .map(|s| if cfg.retrieval_enabled { s.retrieval.as_ref().map(|r| r.signal(&stats)) } else { None })
            .collect(),
    };
    let fold_seed = cfg.seed.wrapping_add(fold as u64);
    let mut model = GatModel::init(
        cfg.model.clone(),
        cfg.retrieval,
        cfg.retrieval_enabled,
        stats,
        fold_seed,
    )?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(fold_seed ^ 0x5348_5546);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(fold_seed ^ 0x4452_4f50);
    let mut adam = Adam::new(&model.params, cfg.learning_rate);

    let trainable: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| !data.targets[i].is_empty())
        .collect();
    let initial_train_loss = data.loss(&model, &trainable, &loss_cfg)?;
    let initial_val_loss = data.loss(&model, val_idx, &loss_cfg)?;
    let mut best: (usize, f64, ModelParams) = (0, initial_val_loss, model.params.clone());
    let mut epochs = Vec::new();
    let mut order = trainable.clone();
    let mut grad = model.params.zeros_like();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.examples(chunk);
            grad.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
            let l = batch_objective(&model, &batch, &loss_cfg, Some(&mut dropout_rng), Some(&mut grad))?;
            adam.update(&mut model.params, &grad);
            sum += l.total;
            batches += 1;
        }
        let train_loss = sum / batches as f64;
        let val_loss = data.loss(&model, val_idx, &loss_cfg)?;
        debug!("fold {fold} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, model.params.clone());
        } else if epoch - best.0 >= cfg.patience {
            break;
        }
    }
    model.params = best.2;
    let best_train_loss = data.loss(&model, &trainable, &loss_cfg)?;

    let val_subjects: Vec<PreparedSubject> = val_idx.iter().map(|&i| subjects[i].clone()).collect();
    let (_, preds) = evaluate_subjects(&model, &val_subjects)?;
    let labeled: Vec<(f64, u8)> = preds
        .iter()
        .zip(&val_subjects)
        .filter_map(|(p, s)| s.class_label.map(|y| (p.fused_probability, y)))
        .collect();
    let probs: Vec<f64> = labeled.iter().map(|x| x.0).collect();
    let labels: Vec<u8> = labeled.iter().map(|x| x.1).collect();
    let youden = select_threshold_youden(&probs, &labels)?;
    model.threshold = youden.threshold;
    let (evaluation, preds) = evaluate_subjects(&model, &val_subjects)?;
    info!(
        "fold {fold}: best epoch {} of {}, val loss {:.5}, threshold {:.4}",
        best.0,
        epochs.len(),
        best.1,
        youden.threshold
    );

    let report = FoldReport {
        fold,
        train_size: train_idx.len(),
        val_size: val_idx.len(),
        pos_weight,
        initial_train_loss,
        initial_val_loss,
        epochs,
        best_epoch: best.0,
        best_val_loss: best.1,
        best_train_loss,
        threshold: youden.threshold,
        youden_j: youden.j,
        alpha_reg: model.alpha_reg(),
        target_stats: stats,
        evaluation,
        predictions: preds
            .iter()
            .zip(&val_subjects)
            .map(|(p, s)| HeldOutPrediction {
                subject_id: s.id.clone(),
                class_label: s.class_label,
                probability: p.fused_probability,
                alpha_cls: p.alpha_cls,
                mean_distance: p.mean_distance,
            })
            .collect(),
        checkpoint: None,
    };
    Ok((model, report))
}

/// Summary statistics across folds for each headline metric.
pub fn summarize(reports: &[FoldReport], retrieval_enabled: bool) -> TrainSummary {
    let mut metrics = BTreeMap::new();
    let mut add = |name: String, values: Vec<f64>| {
        if let Some(s) = MetricSummary::from_values(&values) {
            metrics.insert(name, s);
        }
    };
    let cls: Vec<&ClassificationReport> = reports
        .iter()
        .filter_map(|r| r.evaluation.classification.as_ref())
        .collect();
    add("accuracy".into(), cls.iter().map(|c| c.accuracy).collect());
    add("precision".into(), cls.iter().map(|c| c.precision).collect());
    add("recall".into(), cls.iter().map(|c| c.recall).collect());
    add("f1".into(), cls.iter().map(|c| c.f1).collect());
    add("roc_auc".into(), cls.iter().filter_map(|c| c.roc_auc).collect());
    add("map".into(), cls.iter().filter_map(|c| c.map).collect());
    add(
        "ece".into(),
        reports.iter().filter_map(|r| r.evaluation.calibration.map(|c| c.ece)).collect(),
    );
    add(
        "brier".into(),
        reports.iter().filter_map(|r| r.evaluation.calibration.map(|c| c.brier)).collect(),
    );
    add("threshold".into(), reports.iter().map(|r| r.threshold).collect());
    for t in AnthroTarget::ALL {
        let errs: Vec<_> = reports.iter().filter_map(|r| r.evaluation.regression.get(t)).collect();
        add(format!("rmse_{}", t.name()), errs.iter().map(|e| e.rmse).collect());
        add(format!("mae_{}", t.name()), errs.iter().map(|e| e.mae).collect());
    }
    TrainSummary {
        folds: reports.len(),
        retrieval_enabled,
        metrics,
    }
}

/// Stratified k-fold cross-validation over prepared subjects.
pub fn train_prepared(subjects: &[PreparedSubject], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(subjects, cfg)?;
    let labels: Vec<Option<u8>> = subjects.iter().map(|s| s.class_label).collect();
    let folds = stratified_folds(&labels, cfg.folds, cfg.seed)?;
    let mut reports = Vec::with_capacity(cfg.folds);
    let mut models = Vec::with_capacity(cfg.folds);
    for (fold, val_idx) in folds.iter().enumerate() {
        let train_idx = train_indices(&folds, fold);
        let (model, report) = train_fold(subjects, &train_idx, val_idx, cfg, fold)?;
        reports.push(report);
        models.push(model);
    }
    let summary = summarize(&reports, cfg.retrieval_enabled);
    Ok(TrainOutcome {
        reports,
        models,
        summary,
    })
}

/// Cross-validated training on raw records with an optional external KB.
pub fn train(records: &[SubjectRecord], kb: Option<&KnowledgeBase>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.retrieval_enabled && kb.is_none_or(|k| k.is_empty()) {
        return Err(Error::Invalid("retrieval is enabled but the knowledge base is empty".into()));
    }
    let kb = if cfg.retrieval_enabled { kb } else { None };
    let subjects = prepare_subjects(records, kb, &cfg.retrieval, cfg.model.age_scale, None)?;
    train_prepared(&subjects, cfg)
}
