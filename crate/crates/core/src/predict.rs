//! End-to-end inference for one subject: graph attention, retrieval, fusion.

use serde::{Deserialize, Serialize};

use crate::data::{AnthroTarget, SubjectRecord, TargetStats};
use crate::error::{Error, Result};
use crate::gat::{fuse_heads, GatModel, RetrievalSignal};
use crate::graph::{build_subject_graph_scaled, PoseGraph};
use crate::kb::{global_query_embedding, KnowledgeBase, NeighborSet};
use crate::retrieval::{retrieval_classify, retrieval_regress, sigmoid, RetrievalConfig};

/// Retrieval outputs in raw label units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRetrieval {
    pub neighbors: NeighborSet,
    pub y_cls: f64,
    /// `(position in neighbors, weight)` for each class-labeled neighbor.
    pub class_weights: Vec<(usize, f64)>,
    pub mean_distance: f64,
    pub reg: [Option<f64>; 4],
}

impl RawRetrieval {
    pub fn signal(&self, stats: &TargetStats) -> RetrievalSignal {
        let mut reg = [None; 4];
        for t in AnthroTarget::ALL {
            reg[t.index()] = self.reg[t.index()].map(|v| stats.standardize(v, t));
        }
        RetrievalSignal {
            y_cls: self.y_cls,
            mean_distance: self.mean_distance,
            reg,
        }
    }
}

/// Searches `kb` with the subject's global query and applies both
/// retrieval predictors.
pub fn retrieve(record: &SubjectRecord, kb: &KnowledgeBase, cfg: &RetrievalConfig) -> Result<RawRetrieval> {
    cfg.validate()?;
    let query = global_query_embedding(record)?;
    if query.len() != kb.dim() {
        return Err(Error::Dimension {
            expected: kb.dim(),
            got: query.len(),
        });
    }
    let neighbors = kb.search(&query, cfg.k)?;
    let cls = retrieval_classify(&neighbors, cfg)?;
    let reg = retrieval_regress(&neighbors, cfg)?;
    let mean_distance = neighbors.distances().iter().sum::<f64>() / neighbors.len() as f64;
    Ok(RawRetrieval {
        y_cls: cls.score,
        class_weights: cls.weights,
        mean_distance,
        reg,
        neighbors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborAudit {
    pub rank: usize,
    pub subject_id: String,
    pub distance: f64,
    pub class_label: Option<u8>,
    /// Normalized class-vote weight; absent for unlabeled neighbors.
    pub class_weight: Option<f64>,
    pub has_anthro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub subject_id: String,
    pub gat_logit: f64,
    pub gat_probability: f64,
    /// GAT regression in raw units.
    pub gat_reg: [f64; 4],
    pub retrieval_used: bool,
    pub retrieved_score: Option<f64>,
    pub mean_distance: Option<f64>,
    pub retrieved_reg: [Option<f64>; 4],
    pub alpha_cls: Option<f64>,
    pub alpha_reg: Vec<f64>,
    pub fused_probability: f64,
    pub fused_logit: f64,
    /// Fused regression in raw units.
    pub fused_reg: [f64; 4],
    pub threshold: f64,
    /// 1 when `fused_probability >= threshold`.
    pub decision: u8,
    pub neighbors: Vec<NeighborAudit>,
    pub kb_clamped: bool,
}

/// Combines a forward pass on `graph` with precomputed retrieval outputs.
pub fn predict_parts(model: &GatModel, graph: &PoseGraph, retrieval: Option<&RawRetrieval>) -> Result<PredictionResult> {
    let out = model.forward(graph)?;
    let stats = &model.target_stats;
    let gat_reg = model.reg_raw(out.reg);
    let gat_probability = sigmoid(out.cls_logit);
    let mut result = PredictionResult {
        subject_id: graph.subject_id.clone(),
        gat_logit: out.cls_logit,
        gat_probability,
        gat_reg,
        retrieval_used: false,
        retrieved_score: None,
        mean_distance: None,
        retrieved_reg: [None; 4],
        alpha_cls: None,
        alpha_reg: model.alpha_reg(),
        fused_probability: gat_probability,
        fused_logit: out.cls_logit,
        fused_reg: gat_reg,
        threshold: model.threshold,
        decision: 0,
        neighbors: Vec::new(),
        kb_clamped: false,
    };
    if let (true, Some(r)) = (model.retrieval_enabled, retrieval) {
        let head = fuse_heads(model, out.cls_logit, out.reg, &r.signal(stats));
        result.retrieval_used = true;
        result.retrieved_score = Some(r.y_cls);
        result.mean_distance = Some(r.mean_distance);
        result.retrieved_reg = r.reg;
        result.alpha_cls = Some(head.alpha);
        result.fused_probability = head.probability;
        result.fused_logit = head.logit;
        result.fused_reg = model.reg_raw(head.reg);
        result.kb_clamped = r.neighbors.clamped;
        result.neighbors = r
            .neighbors
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, n)| NeighborAudit {
                rank: i + 1,
                subject_id: n.subject_id.clone(),
                distance: n.distance,
                class_label: n.class_label,
                class_weight: r.class_weights.iter().find(|w| w.0 == i).map(|w| w.1),
                has_anthro: n.anthro.is_some(),
            })
            .collect();
    }
    if !result.fused_probability.is_finite() || result.fused_reg.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("prediction for {}", graph.subject_id)));
    }
    result.decision = (result.fused_probability >= model.threshold) as u8;
    Ok(result)
}

/// Full inference for one subject. Retrieval runs when the model was
/// trained with it and a KB is supplied.
pub fn predict(model: &GatModel, kb: Option<&KnowledgeBase>, record: &SubjectRecord) -> Result<PredictionResult> {
    record
        .validate_with_dim(model.config.in_dim - 1)
        .map_err(|source| Error::InvalidRecord { line: 1, source })?;
    let graph = build_subject_graph_scaled(record, model.config.age_scale)?;
    let retrieval = match kb {
        Some(kb) if model.retrieval_enabled => Some(retrieve(record, kb, &model.retrieval)?),
        _ => None,
    };
    predict_parts(model, &graph, retrieval.as_ref())
}
