//! Joint loss over a mini-batch and its exact reverse-mode gradient.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{GatModel, ModelParams};
use crate::error::{Error, Result};
use crate::graph::PoseGraph;
use crate::retrieval::{sigmoid, FusionMlp, FusionSpace, ContextVector, LOG_ODDS_CLAMP};

/// Lower/upper clamp applied to fused probabilities inside the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Labels of one subject, regression targets already standardized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectTargets {
    pub class_label: Option<u8>,
    pub reg: [Option<f64>; 4],
}

impl SubjectTargets {
    pub fn is_empty(&self) -> bool {
        self.class_label.is_none() && self.reg.iter().all(Option::is_none)
    }
}

/// Retrieval outputs for one subject. They depend only on the fixed KB, so
/// they are computed once before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSignal {
    pub y_cls: f64,
    pub mean_distance: f64,
    /// Retrieved regression values in standardized units.
    pub reg: [Option<f64>; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub pos_weight: f64,
    /// Weight of the auxiliary losses on the raw GAT heads.
    pub aux_weight: f64,
    pub retrieval_enabled: bool,
    /// Global multiplier on the total loss.
    pub scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            pos_weight: 1.0,
            aux_weight: 0.5,
            retrieval_enabled: true,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub graph: &'a PoseGraph,
    pub targets: &'a SubjectTargets,
    pub retrieval: Option<&'a RetrievalSignal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class: f64,
    pub reg: f64,
    pub aux_class: f64,
    pub aux_reg: f64,
    pub total: f64,
    pub class_count: usize,
    pub reg_count: usize,
}

/// Weighted binary cross-entropy on a logit: `w·y·softplus(-z) + (1-y)·softplus(z)`.
pub fn weighted_bce_with_logits(logit: f64, label: u8, pos_weight: f64) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    if label == 1 {
        pos_weight * softplus(-logit)
    } else {
        softplus(logit)
    }
}

fn bce_logit_grad(logit: f64, label: u8, pos_weight: f64) -> f64 {
    let y = label as f64;
    let w = pos_weight;
    sigmoid(logit) * (w * y + 1.0 - y) - w * y
}

fn weighted_bce_prob(p: f64, label: u8, pos_weight: f64) -> (f64, f64) {
    let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let inside = clamped == p;
    if label == 1 {
        let grad = if inside { -pos_weight / clamped } else { 0.0 };
        (-pos_weight * clamped.ln(), grad)
    } else {
        let grad = if inside { 1.0 / (1.0 - clamped) } else { 0.0 };
        (-(1.0 - clamped).ln(), grad)
    }
}

/// Per-subject fused outputs and the intermediates needed for backprop.
#[derive(Debug, Clone)]
pub struct FusedHead {
    pub alpha: f64,
    pub probability: f64,
    pub logit: f64,
    pub gate_input: [f64; 4],
    pub gate_hidden: Array1<f64>,
    /// Fused regression in standardized units.
    pub reg: [f64; 4],
}

/// Applies the gate and both blends to raw head outputs.
pub fn fuse_heads(model: &GatModel, cls_logit: f64, reg: [f64; 4], signal: &RetrievalSignal) -> FusedHead {
    let ctx = ContextVector {
        gat_log_odds: cls_logit.clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP),
        mean_distance: signal.mean_distance,
    };
    let input = FusionMlp::inputs(cls_logit, signal.y_cls, &ctx);
    let cache = model.params.fusion.forward(input);
    let fused = crate::retrieval::blend_classification(cls_logit, signal.y_cls, cache.alpha, model.config.fusion_space);
    let alpha_reg = model.alpha_reg();
    let mut fused_reg = reg;
    for t in 0..4 {
        if let Some(q) = signal.reg[t] {
            let a = alpha_reg[if alpha_reg.len() == 4 { t } else { 0 }];
            fused_reg[t] = a * reg[t] + (1.0 - a) * q;
        }
    }
    FusedHead {
        alpha: cache.alpha,
        probability: fused.probability,
        logit: fused.logit,
        gate_input: input,
        gate_hidden: cache.hidden,
        reg: fused_reg,
    }
}

fn count_labels(batch: &[Example<'_>]) -> (usize, usize) {
    let class = batch.iter().filter(|e| e.targets.class_label.is_some()).count();
    let reg = batch
        .iter()
        .map(|e| e.targets.reg.iter().filter(|v| v.is_some()).count())
        .sum();
    (class, reg)
}

/// Mean joint loss over `batch` and, when `grad` is given, its gradient
/// accumulated into `grad`. `rng` enables dropout (train mode); gradient
/// accumulation runs in batch order.
pub fn batch_objective<R: Rng>(
    model: &GatModel,
    batch: &[Example<'_>],
    cfg: &LossConfig,
    mut rng: Option<&mut R>,
    mut grad: Option<&mut ModelParams>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let (n_cls, n_reg) = count_labels(batch);
    if n_cls == 0 && n_reg == 0 {
        return Err(Error::Invalid("all labels absent in batch".into()));
    }
    let inv_cls = if n_cls > 0 { 1.0 / n_cls as f64 } else { 0.0 };
    let inv_reg = if n_reg > 0 { 1.0 / n_reg as f64 } else { 0.0 };
    let aux = if cfg.retrieval_enabled { cfg.aux_weight } else { 0.0 };
    let space = model.config.fusion_space;
    let alpha_reg = model.alpha_reg();
    let per_target = alpha_reg.len() == 4;
    let mut out = LossBreakdown {
        class_count: n_cls,
        reg_count: n_reg,
        ..Default::default()
    };

    for ex in batch {
        let (fwd, cache) = model.forward_with_cache(ex.graph, rng.as_deref_mut())?;
        let g = fwd.cls_logit;
        let r = fwd.reg;
        let mut d_g = 0.0;
        let mut d_r = [0.0; 4];

        let signal = if cfg.retrieval_enabled {
            Some(ex.retrieval.ok_or_else(|| {
                Error::Invalid(format!("missing retrieval signal for {}", ex.graph.subject_id))
            })?)
        } else {
            None
        };

        match signal {
            None => {
                if let Some(y) = ex.targets.class_label {
                    out.class += weighted_bce_with_logits(g, y, cfg.pos_weight) * inv_cls;
                    d_g += bce_logit_grad(g, y, cfg.pos_weight) * inv_cls;
                }
                for t in 0..4 {
                    if let Some(y) = ex.targets.reg[t] {
                        let e = r[t] - y;
                        out.reg += e * e * inv_reg;
                        d_r[t] += 2.0 * e * inv_reg;
                    }
                }
            }
            Some(sig) => {
                let head = fuse_heads(model, g, r, sig);
                let mut d_alpha = 0.0;
                if let Some(y) = ex.targets.class_label {
                    let (d_fg, d_a) = match space {
                        FusionSpace::Probability => {
                            let (l, dp) = weighted_bce_prob(head.probability, y, cfg.pos_weight);
                            out.class += l * inv_cls;
                            let s = sigmoid(g);
                            let dp = dp * inv_cls;
                            (dp * head.alpha * s * (1.0 - s), dp * (s - sig.y_cls))
                        }
                        FusionSpace::Logit => {
                            out.class += weighted_bce_with_logits(head.logit, y, cfg.pos_weight) * inv_cls;
                            let dz = bce_logit_grad(head.logit, y, cfg.pos_weight) * inv_cls;
                            (dz * head.alpha, dz * (g - sig.y_cls))
                        }
                    };
                    d_g += d_fg;
                    d_alpha += d_a;
                    out.aux_class += weighted_bce_with_logits(g, y, cfg.pos_weight) * inv_cls;
                    d_g += aux * bce_logit_grad(g, y, cfg.pos_weight) * inv_cls;
                }
                let mut d_alpha_reg = [0.0; 4];
                for t in 0..4 {
                    let Some(y) = ex.targets.reg[t] else { continue };
                    let e = head.reg[t] - y;
                    out.reg += e * e * inv_reg;
                    let d_f = 2.0 * e * inv_reg;
                    match sig.reg[t] {
                        Some(q) => {
                            let a = alpha_reg[if per_target { t } else { 0 }];
                            d_r[t] += d_f * a;
                            d_alpha_reg[t] += d_f * (r[t] - q);
                        }
                        None => d_r[t] += d_f,
                    }
                    let ea = r[t] - y;
                    out.aux_reg += ea * ea * inv_reg;
                    d_r[t] += aux * 2.0 * ea * inv_reg;
                }
                if let Some(grad) = grad.as_deref_mut() {
                    let s = cfg.scale;
                    if d_alpha != 0.0 {
                        let mlp = &model.params.fusion;
                        let gate_cache = crate::retrieval::FusionMlpCache {
                            input: head.gate_input,
                            hidden: head.gate_hidden.clone(),
                            alpha: head.alpha,
                        };
                        let gg = mlp.backward(&gate_cache, d_alpha);
                        grad.fusion.w1.scaled_add(s, &gg.w1);
                        grad.fusion.b1.scaled_add(s, &gg.b1);
                        grad.fusion.w2.scaled_add(s, &gg.w2);
                        grad.fusion.b2.scaled_add(s, &gg.b2);
                        d_g += gg.input[0];
                        if g.abs() < LOG_ODDS_CLAMP {
                            d_g += gg.input[2];
                        }
                    }
                    for t in 0..4 {
                        let i = if per_target { t } else { 0 };
                        let a = alpha_reg[i];
                        grad.alpha_reg_raw[i] += s * d_alpha_reg[t] * a * (1.0 - a);
                    }
                }
            }
        }

        if let Some(grad) = grad.as_deref_mut() {
            let s = cfg.scale;
            d_g *= s;
            d_r.iter_mut().for_each(|v| *v *= s);
            let d_r_arr = Array1::from(d_r.to_vec());
            grad.cls_w.scaled_add(d_g, &fwd.pooled);
            grad.cls_b[0] += d_g;
            grad.reg_w += &d_r_arr
                .view()
                .insert_axis(Axis(1))
                .dot(&fwd.pooled.view().insert_axis(Axis(0)));
            grad.reg_b += &d_r_arr;
            let d_pooled = &model.params.cls_w * d_g + model.params.reg_w.t().dot(&d_r_arr);
            let n = cache.num_nodes;
            let mut d_h = Array2::zeros((n, d_pooled.len()));
            for mut row in d_h.rows_mut() {
                row.scaled_add(1.0 / n as f64, &d_pooled);
            }
            for (i, layer) in model.params.layers.iter().enumerate().rev() {
                let next = layer.backward(&cache.layers[i], &d_h, ex.graph, &mut grad.layers[i], i > 0);
                if let Some(next) = next {
                    d_h = next;
                }
            }
        }
    }

    out.total = cfg.scale * (out.class + out.reg + aux * (out.aux_class + out.aux_reg));
    if !out.total.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    if let Some(grad) = grad {
        if let Some(name) = grad.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(out)
}
