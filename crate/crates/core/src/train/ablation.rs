use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::folds::stratified_folds;
use super::trainer::{evaluate_subjects, prepare_subjects, train_prepared, with_retrieval, EvalReport, FoldReport};
use crate::data::{AnthroTarget, SubjectRecord};
use crate::error::{Error, Result};
use crate::graph::PoseFamily;
use crate::kb::{DistanceMetric, KnowledgeBase};
use crate::metrics::{mean, pearson_r};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Pose,
    Architecture,
    Metric,
    K,
    TauClass,
    Gamma,
    TauReg,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 7] = [
        AblationAxis::Pose,
        AblationAxis::Architecture,
        AblationAxis::Metric,
        AblationAxis::K,
        AblationAxis::TauClass,
        AblationAxis::Gamma,
        AblationAxis::TauReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Pose => "pose",
            AblationAxis::Architecture => "architecture",
            AblationAxis::Metric => "metric",
            AblationAxis::K => "k",
            AblationAxis::TauClass => "tau_class",
            AblationAxis::Gamma => "gamma",
            AblationAxis::TauReg => "tau_reg",
        }
    }

    /// Retrieval hyperparameter axes are swept at evaluation time.
    pub fn is_sweep(self) -> bool {
        matches!(
            self,
            AblationAxis::K | AblationAxis::TauClass | AblationAxis::Gamma | AblationAxis::TauReg
        )
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::Pose => &["none", "frontal", "lateral", "selfie", "back"],
            AblationAxis::Architecture => &[
                "2L-8H-0.1D",
                "2L-2H-0.1D",
                "2L-4H-0.1D",
                "2L-4H-0.3D",
                "3L-4H-0.1D",
                "4L-4H-0.1D",
            ],
            AblationAxis::Metric => &["cosine", "euclidean", "mahalanobis_diag"],
            AblationAxis::K => &["3", "5", "7", "10"],
            AblationAxis::TauClass => &["0.3", "0.5", "0.7"],
            AblationAxis::Gamma => &["1.0", "1.5", "2.0"],
            AblationAxis::TauReg => &["0.05", "0.1", "0.2", "0.5"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    fn shows_classification(self) -> bool {
        self != AblationAxis::TauReg
    }

    fn shows_regression(self) -> bool {
        !matches!(self, AblationAxis::TauClass | AblationAxis::Gamma)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(AblationAxis::Pose),
            "architecture" | "arch" => Ok(AblationAxis::Architecture),
            "metric" => Ok(AblationAxis::Metric),
            "k" => Ok(AblationAxis::K),
            "tau_class" => Ok(AblationAxis::TauClass),
            "gamma" => Ok(AblationAxis::Gamma),
            "tau_reg" => Ok(AblationAxis::TauReg),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

/// Parses an `XL-YH-ZD` architecture label.
pub fn parse_arch(label: &str) -> Result<(usize, usize, f64)> {
    let bad = || Error::Config(format!("architecture {label:?} is not of the form 2L-8H-0.1D"));
    let parts: Vec<&str> = label.split('-').collect();
    let [l, h, d] = parts.as_slice() else {
        return Err(bad());
    };
    let layers = l.strip_suffix('L').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let heads = h.strip_suffix('H').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let dropout = d.strip_suffix('D').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    Ok((layers, heads, dropout))
}

/// One table row; `None` cells print as `---`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub map: Option<f64>,
    /// RMSE in raw units for height, weight, MUAC, HC.
    pub rmse: [Option<f64>; 4],
}

pub const TABLE_COLUMNS: [&str; 11] = ["Variant", "Acc", "Prec", "Rec", "F1", "AUC", "mAP", "H", "W", "MUAC", "HC"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "---".to_string())
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.variant.clone(),
                    fmt_cell(r.accuracy),
                    fmt_cell(r.precision),
                    fmt_cell(r.recall),
                    fmt_cell(r.f1),
                    fmt_cell(r.roc_auc),
                    fmt_cell(r.map),
                ];
                row.extend(r.rmse.iter().map(|v| fmt_cell(*v)));
                row
            })
            .collect();
        render_table(&self.columns, &cells)
    }
}

/// Left-aligned first column, right-aligned numbers.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn row_from_evals(variant: String, evals: &[&EvalReport], axis: AblationAxis) -> AblationRow {
    let cls = |f: fn(&crate::metrics::ClassificationReport) -> Option<f64>| -> Option<f64> {
        if !axis.shows_classification() {
            return None;
        }
        mean_of(evals.iter().map(|e| e.classification.as_ref().and_then(f)))
    };
    let mut rmse = [None; 4];
    if axis.shows_regression() {
        for t in AnthroTarget::ALL {
            rmse[t.index()] = mean_of(evals.iter().map(|e| e.regression.get(t).map(|x| x.rmse)));
        }
    }
    AblationRow {
        variant,
        accuracy: cls(|c| Some(c.accuracy)),
        precision: cls(|c| Some(c.precision)),
        recall: cls(|c| Some(c.recall)),
        f1: cls(|c| Some(c.f1)),
        roc_auc: cls(|c| c.roc_auc),
        map: cls(|c| c.map),
        rmse,
    }
}

fn row_from_reports(variant: String, reports: &[FoldReport], axis: AblationAxis) -> AblationRow {
    let evals: Vec<&EvalReport> = reports.iter().map(|r| &r.evaluation).collect();
    row_from_evals(variant, &evals, axis)
}

fn pose_label(value: &str) -> Result<(String, Option<PoseFamily>)> {
    if value.eq_ignore_ascii_case("none") {
        return Ok(("None".to_string(), None));
    }
    let family: PoseFamily = value.parse()?;
    Ok((family.label().to_string(), Some(family)))
}

/// Runs one ablation axis. Pose, architecture and metric variants retrain
/// the full cross-validation; retrieval sweeps train once and re-evaluate
/// each fold with the varied retrieval setting.
pub fn run_ablation(
    records: &[SubjectRecord],
    kb: &KnowledgeBase,
    cfg: &TrainConfig,
    axis: AblationAxis,
    values: Option<&[String]>,
) -> Result<AblationTable> {
    cfg.validate()?;
    let values: Vec<String> = values.map(<[String]>::to_vec).unwrap_or_else(|| axis.default_values());
    if values.is_empty() {
        return Err(Error::Config("no ablation values given".into()));
    }
    let retrieval_kb = cfg.retrieval_enabled.then_some(kb);
    let mut rows = Vec::with_capacity(values.len());
    match axis {
        AblationAxis::Pose => {
            for v in &values {
                let (label, family) = pose_label(v)?;
                info!("ablation pose: {label}");
                let subjects = prepare_subjects(records, retrieval_kb, &cfg.retrieval, cfg.model.age_scale, family)?;
                let out = train_prepared(&subjects, cfg)?;
                rows.push(row_from_reports(label, &out.reports, axis));
            }
        }
        AblationAxis::Architecture => {
            let subjects = prepare_subjects(records, retrieval_kb, &cfg.retrieval, cfg.model.age_scale, None)?;
            for v in &values {
                let (layers, heads, dropout) = parse_arch(v)?;
                let mut variant = cfg.clone();
                variant.model.layers = layers;
                variant.model.heads = heads;
                variant.model.dropout = dropout;
                info!("ablation architecture: {}", variant.model.arch_label());
                let out = train_prepared(&subjects, &variant)?;
                rows.push(row_from_reports(variant.model.arch_label(), &out.reports, axis));
            }
        }
        AblationAxis::Metric => {
            for v in &values {
                let metric: DistanceMetric = v.parse()?;
                info!("ablation metric: {metric}");
                let rebuilt = KnowledgeBase::from_entries(kb.entries().to_vec(), metric)?;
                let subjects = prepare_subjects(
                    records,
                    cfg.retrieval_enabled.then_some(&rebuilt),
                    &cfg.retrieval,
                    cfg.model.age_scale,
                    None,
                )?;
                let out = train_prepared(&subjects, cfg)?;
                rows.push(row_from_reports(metric.label().to_string(), &out.reports, axis));
            }
        }
        _ => {
            if !cfg.retrieval_enabled {
                return Err(Error::Config("retrieval sweeps need retrieval enabled".into()));
            }
            let subjects = prepare_subjects(records, Some(kb), &cfg.retrieval, cfg.model.age_scale, None)?;
            let out = train_prepared(&subjects, cfg)?;
            let labels: Vec<Option<u8>> = subjects.iter().map(|s| s.class_label).collect();
            let folds = stratified_folds(&labels, cfg.folds, cfg.seed)?;
            for v in &values {
                let mut rc = cfg.retrieval;
                let bad = || Error::Config(format!("invalid {axis} value {v:?}"));
                match axis {
                    AblationAxis::K => rc.k = v.parse().map_err(|_| bad())?,
                    AblationAxis::TauClass => rc.tau_class = v.parse().map_err(|_| bad())?,
                    AblationAxis::Gamma => rc.gamma = v.parse().map_err(|_| bad())?,
                    _ => rc.tau_reg = v.parse().map_err(|_| bad())?,
                }
                rc.validate()?;
                info!("sweep {axis} = {v}");
                let mut evals = Vec::with_capacity(folds.len());
                for (model, val_idx) in out.models.iter().zip(&folds) {
                    let val_records: Vec<SubjectRecord> = val_idx.iter().map(|&i| records[i].clone()).collect();
                    let val_subjects: Vec<_> = val_idx.iter().map(|&i| subjects[i].clone()).collect();
                    let swept = with_retrieval(&val_subjects, &val_records, kb, &rc)?;
                    let mut m = model.clone();
                    m.retrieval = rc;
                    evals.push(evaluate_subjects(&m, &swept)?.0);
                }
                let refs: Vec<&EvalReport> = evals.iter().collect();
                rows.push(row_from_evals(format!("{axis}={v}"), &refs, axis));
            }
        }
    }
    Ok(AblationTable {
        axis,
        columns: TABLE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaDensity {
    pub pairs: usize,
    pub mean_alpha: f64,
    pub mean_distance: f64,
    /// `None` when α or d̄ has no spread.
    pub pearson_r: Option<f64>,
}

/// Correlation between the per-subject fusion gate α and the mean neighbor
/// distance over all held-out predictions.
pub fn alpha_density(reports: &[FoldReport]) -> Result<AlphaDensity> {
    let pairs: Vec<(f64, f64)> = reports
        .iter()
        .flat_map(|r| &r.predictions)
        .filter_map(|p| Some((p.alpha_cls?, p.mean_distance?)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Invalid("α-density diagnostic needs retrieval-enabled predictions".into()));
    }
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(AlphaDensity {
        pairs: pairs.len(),
        mean_alpha: mean(&a),
        mean_distance: mean(&d),
        pearson_r: pearson_r(&a, &d).ok(),
    })
}
