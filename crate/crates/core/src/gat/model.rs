use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{GatLayer, LayerCache};
use crate::data::{TargetStats, NODE_DIM};
use crate::error::{Error, Result};
use crate::graph::PoseGraph;
use crate::retrieval::{sigmoid, FusionMlp, FusionSpace, RetrievalConfig};

/// Architecture hyperparameters stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub dropout: f64,
    pub fusion_hidden: usize,
    pub fusion_space: FusionSpace,
    pub per_target_alpha_reg: bool,
    /// Multiplier on the age appended to node features.
    pub age_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_dim: NODE_DIM,
            layers: 2,
            heads: 8,
            head_dim: 64,
            dropout: 0.1,
            fusion_hidden: 8,
            fusion_space: FusionSpace::Probability,
            per_target_alpha_reg: false,
            age_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.heads == 0 || self.head_dim == 0 || self.fusion_hidden == 0 {
            return Err(Error::Config("dimensions and head count must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one attention layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.age_scale.is_finite() && self.age_scale > 0.0) {
            return Err(Error::Config("age_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn pooled_dim(&self) -> usize {
        self.head_dim
    }

    pub fn alpha_reg_len(&self) -> usize {
        if self.per_target_alpha_reg {
            4
        } else {
            1
        }
    }

    /// Short `XL-YH-ZD` label.
    pub fn arch_label(&self) -> String {
        format!("{}L-{}H-{}D", self.layers, self.heads, self.dropout)
    }
}

/// Every learnable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GatLayer>,
    pub cls_w: Array1<f64>,
    pub cls_b: Array1<f64>,
    /// 4 × pooled
    pub reg_w: Array2<f64>,
    pub reg_b: Array1<f64>,
    pub fusion: FusionMlp,
    pub alpha_reg_raw: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut layers = Vec::with_capacity(config.layers);
        let mut in_dim = config.in_dim;
        for i in 0..config.layers {
            let last = i + 1 == config.layers;
            let layer = GatLayer::zeros(in_dim, config.heads, config.head_dim, !last, config.dropout);
            in_dim = layer.out_dim();
            layers.push(layer);
        }
        let pooled = config.pooled_dim();
        ModelParams {
            layers,
            cls_w: Array1::zeros(pooled),
            cls_b: Array1::zeros(1),
            reg_w: Array2::zeros((4, pooled)),
            reg_b: Array1::zeros(4),
            fusion: FusionMlp::zeros(config.fusion_hidden),
            alpha_reg_raw: Array1::zeros(config.alpha_reg_len()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
        z
    }

    /// Named views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.weight"), l.weight.as_slice().unwrap()));
            out.push((format!("layers.{i}.attn"), l.attn.as_slice().unwrap()));
            out.push((format!("layers.{i}.bias"), l.bias.as_slice().unwrap()));
        }
        out.push(("cls_head.weight".into(), self.cls_w.as_slice().unwrap()));
        out.push(("cls_head.bias".into(), self.cls_b.as_slice().unwrap()));
        out.push(("reg_head.weight".into(), self.reg_w.as_slice().unwrap()));
        out.push(("reg_head.bias".into(), self.reg_b.as_slice().unwrap()));
        out.push(("fusion.w1".into(), self.fusion.w1.as_slice().unwrap()));
        out.push(("fusion.b1".into(), self.fusion.b1.as_slice().unwrap()));
        out.push(("fusion.w2".into(), self.fusion.w2.as_slice().unwrap()));
        out.push(("fusion.b2".into(), self.fusion.b2.as_slice().unwrap()));
        out.push(("alpha_reg_raw".into(), self.alpha_reg_raw.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.weight"), l.weight.as_slice_mut().unwrap()));
            out.push((format!("layers.{i}.attn"), l.attn.as_slice_mut().unwrap()));
            out.push((format!("layers.{i}.bias"), l.bias.as_slice_mut().unwrap()));
        }
        out.push(("cls_head.weight".into(), self.cls_w.as_slice_mut().unwrap()));
        out.push(("cls_head.bias".into(), self.cls_b.as_slice_mut().unwrap()));
        out.push(("reg_head.weight".into(), self.reg_w.as_slice_mut().unwrap()));
        out.push(("reg_head.bias".into(), self.reg_b.as_slice_mut().unwrap()));
        out.push(("fusion.w1".into(), self.fusion.w1.as_slice_mut().unwrap()));
        out.push(("fusion.b1".into(), self.fusion.b1.as_slice_mut().unwrap()));
        out.push(("fusion.w2".into(), self.fusion.w2.as_slice_mut().unwrap()));
        out.push(("fusion.b2".into(), self.fusion.b2.as_slice_mut().unwrap()));
        out.push(("alpha_reg_raw".into(), self.alpha_reg_raw.as_slice_mut().unwrap()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// First tensor containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

fn glorot<R: Rng>(rng: &mut R, values: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    values.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
}

/// Learned parameters plus everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub threshold: f64,
    pub target_stats: TargetStats,
    pub retrieval: RetrievalConfig,
    pub retrieval_enabled: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GatForwardOutput {
    pub pooled: Array1<f64>,
    pub cls_logit: f64,
    /// Regression head output in standardized units.
    pub reg: [f64; 4],
    /// `attention[layer][head]` is an N×N row-stochastic matrix.
    pub attention: Vec<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub num_nodes: usize,
}

impl GatModel {
    /// Seeded initialization: uniform ±√(6/(fan_in+fan_out)) per matrix,
    /// zero biases, α_reg = 0.5.
    pub fn init(
        config: ModelConfig,
        retrieval: RetrievalConfig,
        retrieval_enabled: bool,
        target_stats: TargetStats,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        retrieval.validate()?;
        target_stats.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::zeros(&config);
        for layer in &mut params.layers {
            let (in_dim, d) = (layer.in_dim, layer.head_dim);
            for h in 0..layer.heads {
                let mut col = vec![0.0; in_dim * d];
                glorot(&mut rng, &mut col, in_dim, d);
                for i in 0..in_dim {
                    for c in 0..d {
                        layer.weight[[i, h * d + c]] = col[i * d + c];
                    }
                }
            }
            let attn = layer.attn.as_slice_mut().unwrap();
            glorot(&mut rng, attn, 2 * d, 1);
        }
        let pooled = config.pooled_dim();
        glorot(&mut rng, params.cls_w.as_slice_mut().unwrap(), pooled, 1);
        glorot(&mut rng, params.reg_w.as_slice_mut().unwrap(), pooled, 4);
        let hidden = config.fusion_hidden;
        glorot(&mut rng, params.fusion.w1.as_slice_mut().unwrap(), 4, hidden);
        glorot(&mut rng, params.fusion.w2.as_slice_mut().unwrap(), hidden, 1);
        Ok(GatModel {
            config,
            params,
            threshold: 0.5,
            target_stats,
            retrieval,
            retrieval_enabled,
            seed,
        })
    }

    pub fn alpha_reg(&self) -> Vec<f64> {
        self.params.alpha_reg_raw.iter().map(|&a| sigmoid(a)).collect()
    }

    /// Forward pass. Passing an RNG enables attention dropout (train mode).
    pub fn forward_with_cache<R: Rng>(
        &self,
        graph: &PoseGraph,
        mut rng: Option<&mut R>,
    ) -> Result<(GatForwardOutput, ForwardCache)> {
        if graph.feature_dim() != self.config.in_dim {
            return Err(Error::Dimension {
                expected: self.config.in_dim,
                got: graph.feature_dim(),
            });
        }
        let mut caches = Vec::with_capacity(self.params.layers.len());
        let mut attention = Vec::with_capacity(self.params.layers.len());
        let mut h = graph.node_features.clone();
        for layer in &self.params.layers {
            let (out, cache) = layer.forward(h.view(), graph, rng.as_deref_mut());
            attention.push(cache.attention.clone());
            caches.push(cache);
            h = out;
        }
        let pooled = h.mean_axis(Axis(0)).expect("graph has nodes");
        let cls_logit = self.params.cls_w.dot(&pooled) + self.params.cls_b[0];
        let reg_vec = self.params.reg_w.dot(&pooled) + &self.params.reg_b;
        let reg = [reg_vec[0], reg_vec[1], reg_vec[2], reg_vec[3]];
        if !cls_logit.is_finite() || reg.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forward pass of {}", graph.subject_id)));
        }
        Ok((
            GatForwardOutput {
                pooled,
                cls_logit,
                reg,
                attention,
            },
            ForwardCache {
                layers: caches,
                num_nodes: graph.num_nodes(),
            },
        ))
    }

    /// Eval-mode forward pass; a pure function of model and graph.
    pub fn forward(&self, graph: &PoseGraph) -> Result<GatForwardOutput> {
        Ok(self.forward_with_cache::<ChaCha8Rng>(graph, None)?.0)
    }

    /// Destandardized regression output.
    pub fn reg_raw(&self, reg_std: [f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (t, target) in crate::data::AnthroTarget::ALL.into_iter().enumerate() {
            out[t] = self.target_stats.destandardize(reg_std[t], target);
        }
        out
    }
}
