//! Retrieval-augmented prediction: distance softmax weighting with a
//! minority-class boost, per-target retrieval regression, the context
//! vector, the fusion gate and the two convex fusion rules.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::AnthroTarget;
use crate::error::{Error, Result};
use crate::kb::NeighborSet;

/// Bound applied to log-odds fed to the fusion gate.
pub const LOG_ODDS_CLAMP: f64 = 30.0;

/// Number of fusion-gate inputs: GAT logit, retrieved score, log-odds, mean distance.
pub const FUSION_INPUTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub tau_class: f64,
    pub gamma: f64,
    pub tau_reg: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 5,
            tau_class: 0.5,
            gamma: 1.5,
            tau_reg: 0.1,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.tau_class > 0.0 && self.tau_class.is_finite()) {
            return Err(Error::Config("tau_class must be positive".into()));
        }
        if !(self.tau_reg > 0.0 && self.tau_reg.is_finite()) {
            return Err(Error::Config("tau_reg must be positive".into()));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config("gamma must be >= 1".into()));
        }
        Ok(())
    }
}

/// exp(-d/τ) normalized over `distances`, shifted by the minimum distance
/// so tiny temperatures do not underflow.
pub fn temperature_softmax(distances: &[f64], tau: f64) -> Vec<f64> {
    let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = distances.iter().map(|d| (-(d - d_min) / tau).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRetrieval {
    /// Boosted weighted vote in [0, 1].
    pub score: f64,
    /// `(position in neighbor set, weight)` for every labeled neighbor.
    pub weights: Vec<(usize, f64)>,
}

/// Class-boosted temperature-softmax vote over the labeled neighbors.
pub fn retrieval_classify(neighbors: &NeighborSet, cfg: &RetrievalConfig) -> Result<ClassRetrieval> {
    if !(cfg.tau_class > 0.0) {
        return Err(Error::Config("tau_class must be positive".into()));
    }
    let labeled: Vec<(usize, f64, u8)> = neighbors
        .neighbors
        .iter()
        .enumerate()
        .filter_map(|(i, n)| n.class_label.map(|y| (i, n.distance, y)))
        .collect();
    if labeled.is_empty() {
        return Err(Error::Invalid("no neighbor carries a class label".into()));
    }
    let distances: Vec<f64> = labeled.iter().map(|&(_, d, _)| d).collect();
    let soft = temperature_softmax(&distances, cfg.tau_class);
    let boosted: Vec<f64> = soft
        .iter()
        .zip(&labeled)
        .map(|(w, &(_, _, y))| if y == 1 { w * cfg.gamma } else { *w })
        .collect();
    let total: f64 = boosted.iter().sum();
    let weights: Vec<(usize, f64)> = labeled
        .iter()
        .zip(&boosted)
        .map(|(&(i, _, _), w)| (i, w / total))
        .collect();
    let positive: f64 = boosted
        .iter()
        .zip(&labeled)
        .filter(|(_, &(_, _, y))| y == 1)
        .fold(0.0, |acc, (w, _)| acc + w);
    let score = (positive / total).clamp(0.0, 1.0);
    Ok(ClassRetrieval { score, weights })
}

/// Weighted mean of each target over the neighbors that carry it, in raw
/// units. `None` marks a target no neighbor carries.
pub fn retrieval_regress(neighbors: &NeighborSet, cfg: &RetrievalConfig) -> Result<[Option<f64>; 4]> {
    if !(cfg.tau_reg > 0.0) {
        return Err(Error::Config("tau_reg must be positive".into()));
    }
    let mut out = [None; 4];
    for target in AnthroTarget::ALL {
        let present: Vec<(f64, f64)> = neighbors
            .neighbors
            .iter()
            .filter_map(|n| n.anthro.and_then(|a| a.get(target)).map(|v| (n.distance, v)))
            .collect();
        if present.is_empty() {
            continue;
        }
        let distances: Vec<f64> = present.iter().map(|p| p.0).collect();
        let weights = temperature_softmax(&distances, cfg.tau_reg);
        out[target.index()] = Some(weights.iter().zip(&present).map(|(w, p)| w * p.1).sum());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub gat_log_odds: f64,
    pub mean_distance: f64,
}

/// Log-odds of σ(logit) is the logit itself; only the clamp remains.
pub fn make_context(gat_logit: f64, neighbors: &NeighborSet) -> Result<ContextVector> {
    if neighbors.is_empty() {
        return Err(Error::Invalid("context needs at least one neighbor".into()));
    }
    let mean_distance = neighbors.neighbors.iter().map(|n| n.distance).sum::<f64>() / neighbors.len() as f64;
    Ok(ContextVector {
        gat_log_odds: gat_logit.clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP),
        mean_distance,
    })
}

/// Where the classification blend happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSpace {
    /// α·σ(logit) + (1-α)·retrieved, a probability.
    #[default]
    Probability,
    /// α·logit + (1-α)·retrieved, read as a logit.
    Logit,
}

impl fmt::Display for FusionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionSpace::Probability => "probability",
            FusionSpace::Logit => "logit",
        })
    }
}

impl FromStr for FusionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(FusionSpace::Probability),
            "logit" => Ok(FusionSpace::Logit),
            other => Err(Error::Config(format!("unknown fusion space {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gate network: inputs → tanh hidden layer → one sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMlp {
    /// hidden × inputs
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    /// Length-1 output bias.
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionMlpCache {
    pub input: [f64; FUSION_INPUTS],
    pub hidden: Array1<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct FusionMlpGrad {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: Array1<f64>,
    pub input: [f64; FUSION_INPUTS],
}

impl FusionMlp {
    pub fn zeros(hidden: usize) -> Self {
        FusionMlp {
            w1: Array2::zeros((hidden, FUSION_INPUTS)),
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: Array1::zeros(1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn inputs(gat_logit: f64, y_retrieved: f64, ctx: &ContextVector) -> [f64; FUSION_INPUTS] {
        [gat_logit, y_retrieved, ctx.gat_log_odds, ctx.mean_distance]
    }

    pub fn forward(&self, input: [f64; FUSION_INPUTS]) -> FusionMlpCache {
        let x = Array1::from(input.to_vec());
        let hidden = (self.w1.dot(&x) + &self.b1).mapv(f64::tanh);
        let out = self.w2.dot(&hidden) + self.b2[0];
        FusionMlpCache {
            input,
            hidden,
            alpha: sigmoid(out),
        }
    }

    /// Gradients given dL/dα.
    pub fn backward(&self, cache: &FusionMlpCache, d_alpha: f64) -> FusionMlpGrad {
        let d_out = d_alpha * cache.alpha * (1.0 - cache.alpha);
        let w2 = &cache.hidden * d_out;
        let d_pre = (&self.w2 * d_out) * cache.hidden.mapv(|h| 1.0 - h * h);
        let x = Array1::from(cache.input.to_vec());
        let w1 = d_pre
            .view()
            .insert_axis(ndarray::Axis(1))
            .dot(&x.view().insert_axis(ndarray::Axis(0)));
        let d_x = self.w1.t().dot(&d_pre);
        let mut input = [0.0; FUSION_INPUTS];
        input.iter_mut().zip(d_x.iter()).for_each(|(a, b)| *a = *b);
        FusionMlpGrad {
            w1,
            b1: d_pre,
            w2,
            b2: Array1::from(vec![d_out]),
            input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedClassification {
    pub alpha: f64,
    /// Fused score as a probability.
    pub probability: f64,
    /// Pre-sigmoid value of the fused score.
    pub logit: f64,
}

/// Blends the GAT prediction with the retrieved score using gate output α.
pub fn blend_classification(
    gat_logit: f64,
    y_retrieved: f64,
    alpha: f64,
    space: FusionSpace,
) -> FusedClassification {
    match space {
        FusionSpace::Probability => {
            let p = alpha * sigmoid(gat_logit) + (1.0 - alpha) * y_retrieved;
            let pc = p.clamp(1e-15, 1.0 - 1e-15);
            FusedClassification {
                alpha,
                probability: p,
                logit: (pc / (1.0 - pc)).ln(),
            }
        }
        FusionSpace::Logit => {
            let z = alpha * gat_logit + (1.0 - alpha) * y_retrieved;
            FusedClassification {
                alpha,
                probability: sigmoid(z),
                logit: z,
            }
        }
    }
}

/// Runs the gate on `[gat_logit, y_retrieved, ctx]` and blends.
pub fn fuse_classification(
    gat_logit: f64,
    y_retrieved: f64,
    ctx: &ContextVector,
    mlp: &FusionMlp,
    space: FusionSpace,
) -> Result<FusedClassification> {
    let input = FusionMlp::inputs(gat_logit, y_retrieved, ctx);
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fusion input".into()));
    }
    let cache = mlp.forward(input);
    if !cache.alpha.is_finite() {
        return Err(Error::NonFinite("fusion gate activation".into()));
    }
    Ok(blend_classification(gat_logit, y_retrieved, cache.alpha, space))
}

/// Componentwise convex blend; targets without a retrieved value keep the
/// GAT value. `alpha_reg` holds one shared value or one per target.
pub fn fuse_regression(gat_raw: [f64; 4], retrieved: [Option<f64>; 4], alpha_reg: &[f64]) -> [f64; 4] {
    let mut out = gat_raw;
    for t in 0..4 {
        if let Some(r) = retrieved[t] {
            let a = alpha_reg[if alpha_reg.len() == 4 { t } else { 0 }];
            out[t] = a * gat_raw[t] + (1.0 - a) * r;
        }
    }
    out
}
