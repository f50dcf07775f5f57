use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::graph::PoseGraph;

pub const LEAKY_SLOPE: f64 = 0.2;

fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// One multi-head graph attention layer.
///
/// Head `h` owns columns `h*head_dim..(h+1)*head_dim` of `weight` and row
/// `h` of `attn`, whose first half scores the receiving node and second half
/// the sending node. Hidden layers concatenate heads and apply ELU; the
/// output layer averages heads with no nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub concat: bool,
    pub dropout: f64,
    pub weight: Array2<f64>,
    pub attn: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Array2<f64>,
    z: Array2<f64>,
    /// Per head, N×N scores before LeakyReLU (neighbor entries only).
    scores: Vec<Array2<f64>>,
    /// Per head, N×N softmax attention; zero outside neighborhoods.
    pub attention: Vec<Array2<f64>>,
    /// Per head dropout multipliers (train mode only).
    mask: Option<Vec<Array2<f64>>>,
    pre: Array2<f64>,
    concat: bool,
}

impl LayerCache {
    /// Smallest |score| over all neighbor pairs and heads (distance to the
    /// LeakyReLU kink).
    pub fn min_abs_score(&self) -> f64 {
        self.scores
            .iter()
            .zip(&self.attention)
            .flat_map(|(s, a)| s.iter().zip(a.iter()).filter(|(_, &w)| w > 0.0).map(|(v, _)| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Appends the side of every piecewise boundary: each attention score
    /// versus the LeakyReLU kink and, for ELU layers, each pre-activation.
    pub fn activation_pattern(&self, out: &mut Vec<bool>) {
        for (s, a) in self.scores.iter().zip(&self.attention) {
            out.extend(s.iter().zip(a.iter()).filter(|(_, &w)| w > 0.0).map(|(v, _)| *v > 0.0));
        }
        if self.concat {
            out.extend(self.pre.iter().map(|&v| v > 0.0));
        }
    }
}

impl GatLayer {
    pub fn zeros(in_dim: usize, heads: usize, head_dim: usize, concat: bool, dropout: f64) -> Self {
        let out_dim = if concat { heads * head_dim } else { head_dim };
        GatLayer {
            in_dim,
            heads,
            head_dim,
            concat,
            dropout,
            weight: Array2::zeros((in_dim, heads * head_dim)),
            attn: Array2::zeros((heads, 2 * head_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }

    pub fn forward<R: Rng>(
        &self,
        x: ArrayView2<'_, f64>,
        graph: &PoseGraph,
        mut dropout_rng: Option<&mut R>,
    ) -> (Array2<f64>, LayerCache) {
        let n = x.nrows();
        let d = self.head_dim;
        let z = x.dot(&self.weight);
        let mut scores = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        let mut masks = dropout_rng.as_ref().map(|_| Vec::with_capacity(self.heads));
        let mut pre = Array2::zeros((n, self.out_dim()));

        for h in 0..self.heads {
            let zh = z.slice(s![.., h * d..(h + 1) * d]);
            let a = self.attn.row(h);
            let src = zh.dot(&a.slice(s![..d]));
            let dst = zh.dot(&a.slice(s![d..]));
            let mut score = Array2::zeros((n, n));
            let mut att = Array2::zeros((n, n));
            for j in 0..n {
                let nbrs = graph.neighbors(j);
                let mut max = f64::NEG_INFINITY;
                for &k in nbrs {
                    let sc = src[j] + dst[k];
                    score[[j, k]] = sc;
                    max = max.max(leaky_relu(sc));
                }
                let mut total = 0.0;
                for &k in nbrs {
                    let e = (leaky_relu(score[[j, k]]) - max).exp();
                    att[[j, k]] = e;
                    total += e;
                }
                for &k in nbrs {
                    att[[j, k]] /= total;
                }
            }
            let effective = match (dropout_rng.as_deref_mut(), masks.as_mut()) {
                (Some(rng), Some(masks)) if self.dropout > 0.0 => {
                    let keep_scale = 1.0 / (1.0 - self.dropout);
                    let mut mask = Array2::zeros((n, n));
                    for j in 0..n {
                        for &k in graph.neighbors(j) {
                            if rng.random::<f64>() >= self.dropout {
                                mask[[j, k]] = keep_scale;
                            }
                        }
                    }
                    let eff = &att * &mask;
                    masks.push(mask);
                    eff
                }
                (_, Some(masks)) => {
                    let mut mask = Array2::zeros((n, n));
                    for j in 0..n {
                        for &k in graph.neighbors(j) {
                            mask[[j, k]] = 1.0;
                        }
                    }
                    masks.push(mask);
                    att.clone()
                }
                _ => att.clone(),
            };
            let out_h = effective.dot(&zh);
            if self.concat {
                pre.slice_mut(s![.., h * d..(h + 1) * d]).assign(&out_h);
            } else {
                pre.scaled_add(1.0 / self.heads as f64, &out_h);
            }
            scores.push(score);
            attention.push(att);
        }
        pre += &self.bias;
        let out = if self.concat { pre.mapv(elu) } else { pre.clone() };
        let cache = LayerCache {
            input: x.to_owned(),
            z,
            scores,
            attention,
            mask: masks,
            pre,
            concat: self.concat,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dinput
    /// when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &LayerCache,
        d_out: &Array2<f64>,
        graph: &PoseGraph,
        grad: &mut GatLayer,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let n = cache.z.nrows();
        let d = self.head_dim;
        let d_pre = if self.concat {
            d_out * &cache.pre.mapv(elu_grad)
        } else {
            d_out.clone()
        };
        grad.bias += &d_pre.sum_axis(Axis(0));

        let mut d_z = Array2::<f64>::zeros(cache.z.raw_dim());
        for h in 0..self.heads {
            let zh = cache.z.slice(s![.., h * d..(h + 1) * d]);
            let d_out_h = if self.concat {
                d_pre.slice(s![.., h * d..(h + 1) * d]).to_owned()
            } else {
                &d_pre / self.heads as f64
            };
            let att = &cache.attention[h];
            let effective = match &cache.mask {
                Some(masks) => att * &masks[h],
                None => att.clone(),
            };
            // out_h = effective · zh
            let mut d_zh = effective.t().dot(&d_out_h);
            let d_eff = d_out_h.dot(&zh.t());
            let d_att = match &cache.mask {
                Some(masks) => &d_eff * &masks[h],
                None => d_eff,
            };
            let a = self.attn.row(h);
            let a_src = a.slice(s![..d]);
            let a_dst = a.slice(s![d..]);
            let mut d_src = Array1::<f64>::zeros(n);
            let mut d_dst = Array1::<f64>::zeros(n);
            for j in 0..n {
                let nbrs = graph.neighbors(j);
                let dot: f64 = nbrs.iter().map(|&k| att[[j, k]] * d_att[[j, k]]).sum();
                for &k in nbrs {
                    let d_e = att[[j, k]] * (d_att[[j, k]] - dot);
                    let slope = if cache.scores[h][[j, k]] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                    let d_s = d_e * slope;
                    d_src[j] += d_s;
                    d_dst[k] += d_s;
                }
            }
            {
                let mut g_attn = grad.attn.row_mut(h);
                g_attn.slice_mut(s![..d]).scaled_add(1.0, &zh.t().dot(&d_src));
                g_attn.slice_mut(s![d..]).scaled_add(1.0, &zh.t().dot(&d_dst));
            }
            for j in 0..n {
                d_zh.row_mut(j).scaled_add(d_src[j], &a_src);
                d_zh.row_mut(j).scaled_add(d_dst[j], &a_dst);
            }
            d_z.slice_mut(s![.., h * d..(h + 1) * d]).assign(&d_zh);
        }
        general_mat_mul(1.0, &cache.input.t(), &d_z, 1.0, &mut grad.weight);
        want_input_grad.then(|| d_z.dot(&self.weight.t()))
    }
}
