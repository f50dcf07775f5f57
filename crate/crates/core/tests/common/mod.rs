#![allow(dead_code)]

pub mod oracles;

use ndarray::Array2;
use nutrigraph::data::{PoseKind, TargetStats};
use nutrigraph::gat::{batch_objective, Example, GatModel, LossConfig, ModelConfig, RetrievalSignal, SubjectTargets};
use nutrigraph::graph::PoseGraph;
use nutrigraph::retrieval::{sigmoid, FusionSpace, RetrievalConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;
/// Trials whose LeakyReLU inputs come closer than this to 0 are resampled.
pub const KINK_MARGIN: f64 = 1e-3;

pub struct Trial {
    pub model: GatModel,
    pub graphs: Vec<PoseGraph>,
    pub targets: Vec<SubjectTargets>,
    pub signals: Vec<RetrievalSignal>,
    pub loss: LossConfig,
    /// Dropout stream seed; `None` runs in eval mode.
    pub dropout_seed: Option<u64>,
}

pub fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, dim: usize) -> PoseGraph {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = Array2::from_shape_fn((nodes, dim), |_| normal.sample(rng));
    let mut poses = PoseKind::ALL.to_vec();
    poses.truncate(nodes);
    PoseGraph::from_features("trial", x, poses).unwrap()
}

fn maybe<T>(rng: &mut ChaCha8Rng, p: f64, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> Option<T> {
    if rng.random::<f64>() < p {
        Some(f(rng))
    } else {
        None
    }
}

/// A random small model with every parameter perturbed away from its
/// initialization, plus a 3-subject batch whose first graph has `nodes` nodes.
pub fn random_trial(rng: &mut ChaCha8Rng, nodes: usize) -> Trial {
    let normal = Normal::new(0.0, 0.5).unwrap();
    let in_dim = rng.random_range(3..=6);
    let config = ModelConfig {
        in_dim,
        layers: if rng.random::<f64>() < 0.8 { 2 } else { 3 },
        heads: rng.random_range(1..=3),
        head_dim: rng.random_range(2..=4),
        dropout: if rng.random::<bool>() { 0.0 } else { 0.3 },
        fusion_hidden: rng.random_range(2..=8),
        fusion_space: if rng.random::<f64>() < 0.7 {
            FusionSpace::Probability
        } else {
            FusionSpace::Logit
        },
        per_target_alpha_reg: rng.random::<bool>(),
        age_scale: 1.0,
    };
    let mut model = GatModel::init(
        config,
        RetrievalConfig::default(),
        true,
        TargetStats::identity(),
        rng.random(),
    )
    .unwrap();
    for (_, t) in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    let sizes = [nodes, [1, 2, 4, 8][rng.random_range(0..4)], [1, 2, 4, 8][rng.random_range(0..4)]];
    let graphs: Vec<PoseGraph> = sizes.iter().map(|&n| random_graph(rng, n, in_dim)).collect();
    let mut targets: Vec<SubjectTargets> = (0..3)
        .map(|_| SubjectTargets {
            class_label: maybe(rng, 0.8, |r| r.random_range(0..=1u8)),
            reg: std::array::from_fn(|_| maybe(rng, 0.7, |r| Normal::new(0.0, 1.0).unwrap().sample(r))),
        })
        .collect();
    targets[0].class_label.get_or_insert(1);
    let signals = (0..3)
        .map(|_| RetrievalSignal {
            y_cls: match rng.random_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random(),
            },
            mean_distance: rng.random_range(0.0..1.5),
            reg: std::array::from_fn(|_| maybe(rng, 0.7, |r| Normal::new(0.0, 1.0).unwrap().sample(r))),
        })
        .collect();
    let loss = LossConfig {
        pos_weight: rng.random_range(1.0..3.0),
        aux_weight: 0.5,
        retrieval_enabled: rng.random::<f64>() < 0.8,
        scale: 1.0,
    };
    let dropout_seed = if rng.random::<bool>() { Some(rng.random()) } else { None };
    Trial {
        model,
        graphs,
        targets,
        signals,
        loss,
        dropout_seed,
    }
}

impl Trial {
    fn batch(&self) -> Vec<Example<'_>> {
        self.graphs
            .iter()
            .zip(&self.targets)
            .zip(&self.signals)
            .map(|((graph, targets), signal)| Example {
                graph,
                targets,
                retrieval: Some(signal),
            })
            .collect()
    }

    pub fn loss_at(&self, model: &GatModel, grad: Option<&mut nutrigraph::gat::ModelParams>) -> f64 {
        let batch = self.batch();
        let mut rng = self.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        batch_objective(model, &batch, &self.loss, rng.as_mut(), grad).unwrap().total
    }

    /// True when no evaluation point sits near a non-differentiable point.
    pub fn is_smooth(&self) -> bool {
        let mut rng = self.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        for (graph, signal) in self.graphs.iter().zip(&self.signals) {
            let (out, cache) = self.model.forward_with_cache(graph, rng.as_mut()).unwrap();
            if cache.layers.iter().any(|l| l.min_abs_score() < KINK_MARGIN) {
                return false;
            }
            if self.model.config.fusion_space == FusionSpace::Probability {
                let head = nutrigraph::gat::fuse_heads(&self.model, out.cls_logit, out.reg, signal);
                if head.probability < 1e-5 || head.probability > 1.0 - 1e-5 {
                    return false;
                }
            }
            if (out.cls_logit.abs() - 30.0).abs() < 1e-2 || sigmoid(out.cls_logit).is_nan() {
                return false;
            }
        }
        true
    }
}

impl Trial {
    /// Piecewise-region signature of every forward pass in the batch.
    pub fn pattern(&self, model: &GatModel) -> Vec<bool> {
        let mut rng = self.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut out = Vec::new();
        for graph in &self.graphs {
            let (_, cache) = model.forward_with_cache(graph, rng.as_mut()).unwrap();
            cache.layers.iter().for_each(|l| l.activation_pattern(&mut out));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose ±step stencil crossed an activation boundary.
    pub straddled: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central differences on the coordinates chosen by `pick` (all when `None`).
pub fn check_gradients(trial: &Trial, pick: Option<&mut dyn FnMut(&str, usize) -> bool>) -> GradCheck {
    let mut grad = trial.model.params.zeros_like();
    trial.loss_at(&trial.model, Some(&mut grad));
    let analytic: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut pick = pick;
    let mut probe = trial.model.clone();
    let base = trial.pattern(&trial.model);
    let mut result = GradCheck {
        straddled: 0,
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (ti, (name, values)) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            if let Some(p) = pick.as_mut() {
                if !p(name, i) {
                    continue;
                }
            }
            let original = trial.model.params.tensors()[ti].1[i];
            probe.params.tensors_mut()[ti].1[i] = original + FD_STEP;
            let up = trial.loss_at(&probe, None);
            let crossed_up = trial.pattern(&probe) != base;
            probe.params.tensors_mut()[ti].1[i] = original - FD_STEP;
            let down = trial.loss_at(&probe, None);
            let crossed = crossed_up || trial.pattern(&probe) != base;
            probe.params.tensors_mut()[ti].1[i] = original;
            if crossed {
                result.straddled += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(a, numeric);
            result.checked += 1;
            if e > result.max_rel_err {
                result.max_rel_err = e;
                result.worst = format!("{name}[{i}] analytic {a:.6e} numeric {numeric:.6e}");
            }
        }
    }
    result
}

/// Checks `count` random trials, cycling node counts through 1, 2, 4, 8.
/// A trial where any stencil crosses an activation boundary is replaced by a
/// fresh draw, so every parameter of every kept trial is checked.
pub fn checked_trials(seed: u64, count: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let nodes = [1, 2, 4, 8][out.len() % 4];
        let t = random_trial(&mut rng, nodes);
        if !t.is_smooth() {
            continue;
        }
        let r = check_gradients(&t, None);
        if r.straddled == 0 {
            out.push(r);
        }
    }
    out
}
