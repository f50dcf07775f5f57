//! Independent reference implementations shared by the property tests and
//! the acceptance report. Each check returns a short summary on success and
//! the first counterexample on failure.

use ndarray::{Array1, Array2};
use nutrigraph::data::AnthroLabels;
use nutrigraph::kb::{DistanceMetric, KbEntry, KnowledgeBase, NeighborSet};
use nutrigraph::retrieval::{
    fuse_classification, fuse_regression, make_context, retrieval_classify, retrieval_regress, sigmoid, FusionMlp,
    FusionSpace, RetrievalConfig,
};
use nutrigraph::train::{select_threshold_youden, youden_j};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const KNN_KS: [usize; 4] = [1, 3, 5, 10];

fn random_entries(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<KbEntry> {
    let mut entries: Vec<KbEntry> = Vec::with_capacity(n);
    for i in 0..n {
        // Roughly one entry in eight repeats an earlier embedding exactly.
        let embedding = if i > 0 && rng.random_range(0..8) == 0 {
            entries[rng.random_range(0..i)].embedding.clone()
        } else {
            (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let class_label = (rng.random_range(0..5) > 0).then(|| rng.random_range(0..2u8));
        let anthro = (class_label.is_none() || rng.random_bool(0.5)).then(|| AnthroLabels {
            height_cm: Some(rng.random_range(60.0..120.0)),
            weight_kg: None,
            muac_cm: None,
            hc_cm: None,
        });
        entries.push(KbEntry {
            subject_id: format!("e{i}"),
            embedding,
            class_label,
            anthro,
        });
    }
    entries
}

fn reference_distance(metric: DistanceMetric, kb: &KnowledgeBase, q: &[f64], x: &[f64]) -> f64 {
    match metric {
        DistanceMetric::Cosine => {
            let dot: f64 = q.iter().zip(x).map(|(a, b)| a * b).sum();
            let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            1.0 - dot / (nq * nx)
        }
        DistanceMetric::Euclidean => q.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        DistanceMetric::MahalanobisDiag => {
            let var = kb.variance().expect("variances");
            q.iter()
                .zip(x)
                .zip(var)
                .map(|((a, b), v)| (a - b).powi(2) / v)
                .sum::<f64>()
                .sqrt()
        }
    }
}

/// Index search against a full stable sort of every distance, on `kbs`
/// random knowledge bases of at most 500 entries.
pub fn knn_exactness(seed: u64, kbs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut searches = 0usize;
    let mut ties = 0usize;
    for t in 0..kbs {
        let n = if t == 0 { 500 } else { rng.random_range(2..=500) };
        let dim = rng.random_range(2..=12);
        let entries = random_entries(&mut rng, n, dim);
        for metric in DistanceMetric::ALL {
            let kb = KnowledgeBase::from_entries(entries.clone(), metric).map_err(|e| format!("kb {t}: {e}"))?;
            for qi in 0..4 {
                let query: Vec<f64> = if qi == 0 {
                    entries[rng.random_range(0..n)].embedding.clone()
                } else {
                    (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
                };
                let mut all: Vec<(usize, f64)> = (0..n)
                    .map(|i| (i, kb.distance_to(&query, i).unwrap()))
                    .collect();
                for &(i, d) in &all {
                    let r = reference_distance(metric, &kb, &query, &entries[i].embedding);
                    if (d - r).abs() > 1e-9 * (1.0 + r.abs()) {
                        return Err(format!("kb {t} {metric}: distance to {i} is {d}, reference {r}"));
                    }
                }
                all.sort_by(|a, b| a.1.total_cmp(&b.1));
                ties += all.windows(2).filter(|w| w[0].1 == w[1].1).count();
                for k in KNN_KS {
                    let got = kb.search(&query, k).map_err(|e| e.to_string())?;
                    let want = &all[..k.min(n)];
                    let got_pairs: Vec<(usize, f64)> = got.neighbors.iter().map(|m| (m.index, m.distance)).collect();
                    if got_pairs != want {
                        return Err(format!("kb {t} {metric} k={k}: search {got_pairs:?} != brute force {want:?}"));
                    }
                    if got.clamped != (k > n) {
                        return Err(format!("kb {t} k={k}: clamped flag wrong"));
                    }
                    searches += 1;
                }
            }
        }
    }
    Ok(format!("{searches} searches on {kbs} KBs, {ties} tied pairs"))
}

fn random_neighbors(rng: &mut ChaCha8Rng, mixed: bool) -> NeighborSet {
    let k = rng.random_range(if mixed { 2 } else { 1 }..=10);
    let mut d = rng.random_range(0.0..0.2);
    let mut items = Vec::with_capacity(k);
    for _ in 0..k {
        let label = if rng.random_range(0..6) == 0 { None } else { Some(rng.random_range(0..2u8)) };
        let anthro = rng.random_bool(0.8).then(|| AnthroLabels {
            height_cm: Some(rng.random_range(60.0..120.0)),
            weight_kg: rng.random_bool(0.7).then(|| rng.random_range(5.0..25.0)),
            muac_cm: None,
            hc_cm: Some(rng.random_range(40.0..52.0)),
        });
        items.push((d, label, anthro));
        d += rng.random_range(0.01..0.15);
    }
    if mixed {
        items[0].1 = Some(1);
        items[1].1 = Some(0);
    } else if items.iter().all(|i| i.1.is_none()) {
        items[0].1 = Some(rng.random_range(0..2u8));
    }
    NeighborSet::from_parts(items)
}

/// Direct transcription of the boosted-softmax vote without any shifting.
pub fn reference_classify(ns: &NeighborSet, tau: f64, gamma: f64) -> (f64, Vec<f64>) {
    let labeled: Vec<(f64, u8)> = ns
        .neighbors
        .iter()
        .filter_map(|n| n.class_label.map(|y| (n.distance, y)))
        .collect();
    let z: f64 = labeled.iter().map(|(d, _)| (-d / tau).exp()).sum();
    let boosted: Vec<f64> = labeled
        .iter()
        .map(|(d, y)| (-d / tau).exp() / z * if *y == 1 { gamma } else { 1.0 })
        .collect();
    let total: f64 = boosted.iter().sum();
    let w: Vec<f64> = boosted.iter().map(|b| b / total).collect();
    let score = w.iter().zip(&labeled).map(|(w, (_, y))| w * *y as f64).sum();
    (score, w)
}

/// The retrieval formula properties over `cases` random neighbor sets.
pub fn retrieval_formulas(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for c in 0..cases {
        let ns = random_neighbors(&mut rng, c % 2 == 0);
        let cfg = RetrievalConfig {
            k: ns.len(),
            tau_class: rng.random_range(0.1..2.0),
            gamma: rng.random_range(1.0..3.0),
            tau_reg: rng.random_range(0.05..1.0),
        };
        let fail = |what: &str| Err(format!("case {c}: {what} ({cfg:?})"));
        let out = retrieval_classify(&ns, &cfg).map_err(|e| e.to_string())?;
        let sum: f64 = out.weights.iter().map(|w| w.1).sum();
        if out.weights.iter().any(|w| w.1 < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return fail("weights not a distribution");
        }
        let (ref_score, _) = reference_classify(&ns, cfg.tau_class, cfg.gamma);
        max_dev = max_dev.max((out.score - ref_score).abs());
        if (out.score - ref_score).abs() > 1e-12 {
            return fail("score differs from reference");
        }

        let plain = retrieval_classify(&ns, &RetrievalConfig { gamma: 1.0, ..cfg }).unwrap();
        let (_, softmax) = reference_classify(&ns, cfg.tau_class, 1.0);
        if plain.weights.iter().zip(&softmax).any(|(a, b)| (a.1 - b).abs() > 1e-12) {
            return fail("gamma = 1 differs from plain softmax");
        }

        let labels: Vec<u8> = ns.neighbors.iter().filter_map(|n| n.class_label).collect();
        let mixed = labels.contains(&0) && labels.contains(&1);
        let mut prev = None;
        for g in [1.0, 1.25, 1.5, 2.0, 3.0, 5.0] {
            let s = retrieval_classify(&ns, &RetrievalConfig { gamma: g, ..cfg }).unwrap().score;
            if let Some(p) = prev {
                if mixed && s <= p {
                    return fail("score not strictly increasing in gamma");
                }
                if !mixed && s != p {
                    return fail("score depends on gamma with one class");
                }
            }
            prev = Some(s);
        }

        let nearest = ns.neighbors.iter().find_map(|n| n.class_label).unwrap() as f64;
        let cold = retrieval_classify(&ns, &RetrievalConfig { tau_class: 1e-6, ..cfg }).unwrap().score;
        if (cold - nearest).abs() > 1e-6 {
            return fail("tau -> 0 does not recover the nearest label");
        }
        let hot = retrieval_classify(&ns, &RetrievalConfig { tau_class: 1e6, gamma: 1.0, ..cfg })
            .unwrap()
            .score;
        let mean = labels.iter().map(|&y| y as f64).sum::<f64>() / labels.len() as f64;
        if (hot - mean).abs() > 1e-6 {
            return fail("tau -> inf does not recover the unweighted mean");
        }

        let reg = retrieval_regress(&ns, &cfg).unwrap();
        let hot_reg = retrieval_regress(&ns, &RetrievalConfig { tau_reg: 1e6, ..cfg }).unwrap();
        let cold_reg = retrieval_regress(&ns, &RetrievalConfig { tau_reg: 1e-6, ..cfg }).unwrap();
        for t in 0..4 {
            let present: Vec<(f64, f64)> = ns
                .neighbors
                .iter()
                .filter_map(|n| n.anthro.and_then(|a| a.to_array()[t]).map(|v| (n.distance, v)))
                .collect();
            if present.is_empty() {
                if reg[t].is_some() {
                    return fail("regression value for a target no neighbor carries");
                }
                continue;
            }
            let z: f64 = present.iter().map(|(d, _)| (-d / cfg.tau_reg).exp()).sum();
            let want: f64 = present.iter().map(|(d, v)| (-d / cfg.tau_reg).exp() / z * v).sum();
            let got = reg[t].unwrap();
            if (got - want).abs() > 1e-9 * want.abs() {
                return fail("regression differs from reference");
            }
            let plain_mean = present.iter().map(|p| p.1).sum::<f64>() / present.len() as f64;
            if (hot_reg[t].unwrap() - plain_mean).abs() > 1e-6 * plain_mean.abs() {
                return fail("tau_reg -> inf does not recover the mean");
            }
            if (cold_reg[t].unwrap() - present[0].1).abs() > 1e-6 {
                return fail("tau_reg -> 0 does not recover the nearest value");
            }
        }
    }
    Ok(format!("{cases} neighbor sets, max |score - reference| {max_dev:.1e}"))
}

fn random_mlp(rng: &mut ChaCha8Rng, hidden: usize, scale: f64) -> FusionMlp {
    FusionMlp {
        w1: Array2::from_shape_fn((hidden, 4), |_| rng.random_range(-scale..scale)),
        b1: Array1::from_shape_fn(hidden, |_| rng.random_range(-scale..scale)),
        w2: Array1::from_shape_fn(hidden, |_| rng.random_range(-scale..scale)),
        b2: Array1::from(vec![rng.random_range(-scale..scale)]),
    }
}

fn within(v: f64, a: f64, b: f64) -> bool {
    v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12
}

/// Fused classification and regression stay between their two sources.
pub fn fusion_convexity(seed: u64, cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut saturated = 0usize;
    for c in 0..cases {
        let ns = random_neighbors(&mut rng, false);
        let scale = [0.5, 5.0, 50.0][c % 3];
        let hidden = rng.random_range(1..=8);
        let mlp = random_mlp(&mut rng, hidden, scale);
        let gat_logit = rng.random_range(-40.0..40.0);
        let y = rng.random_range(0.0..=1.0);
        let ctx = make_context(gat_logit, &ns).map_err(|e| e.to_string())?;
        let p = fuse_classification(gat_logit, y, &ctx, &mlp, FusionSpace::Probability).map_err(|e| e.to_string())?;
        if !within(p.probability, sigmoid(gat_logit), y) || !(0.0..=1.0).contains(&p.alpha) {
            return Err(format!("case {c}: fused probability {} outside [{}, {y}]", p.probability, sigmoid(gat_logit)));
        }
        if p.alpha == 0.0 || p.alpha == 1.0 {
            saturated += 1;
        }
        let z = fuse_classification(gat_logit, y, &ctx, &mlp, FusionSpace::Logit).map_err(|e| e.to_string())?;
        if !within(z.logit, gat_logit, y) {
            return Err(format!("case {c}: logit-space blend {} outside [{gat_logit}, {y}]", z.logit));
        }
        let gat: [f64; 4] = std::array::from_fn(|_| rng.random_range(-50.0..150.0));
        let retrieved: [Option<f64>; 4] =
            std::array::from_fn(|_| rng.random_bool(0.75).then(|| rng.random_range(-50.0..150.0)));
        let alpha: Vec<f64> = if c % 2 == 0 {
            vec![rng.random_range(0.0..=1.0)]
        } else {
            (0..4).map(|_| rng.random_range(0.0..=1.0)).collect()
        };
        let fused = fuse_regression(gat, retrieved, &alpha);
        for t in 0..4 {
            let ok = match retrieved[t] {
                Some(r) => within(fused[t], gat[t], r),
                None => fused[t] == gat[t],
            };
            if !ok {
                return Err(format!("case {c}: regression target {t} fused {} outside its sources", fused[t]));
            }
        }
    }
    Ok(format!("{cases} cases, {saturated} with a saturated gate"))
}

/// Threshold selection against exhaustive search over every cut point.
pub fn youden_exhaustive(seed: u64, sets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..sets {
        let n = rng.random_range(2..=60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // Coarse grids force tied probabilities in a third of the sets.
        let probs: Vec<f64> = if s % 3 == 0 {
            (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect()
        } else {
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        };
        let choice = select_threshold_youden(&probs, &labels).map_err(|e| e.to_string())?;
        let mut cuts: Vec<f64> = probs.clone();
        cuts.extend([0.0, 1.0, f64::INFINITY]);
        let best = cuts
            .iter()
            .map(|&t| youden_j(&probs, &labels, t))
            .fold(f64::NEG_INFINITY, f64::max);
        if (choice.j - best).abs() > 1e-12 || (youden_j(&probs, &labels, choice.threshold) - choice.j).abs() > 1e-12 {
            return Err(format!("set {s}: selected J {} but exhaustive maximum {best}", choice.j));
        }
    }
    Ok(format!("{sets} validation sets"))
}

fn t975_df3() -> f64 {
    // Closed-form CDF of Student's t with three degrees of freedom, inverted by bisection.
    let cdf = |t: f64| {
        let x = t / 3f64.sqrt();
        0.5 + (x / (1.0 + x * x) + x.atan()) / std::f64::consts::PI
    };
    let (mut lo, mut hi) = (0.0f64, 50.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < 0.975 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Worked examples, each recomputed from first principles, as
/// `(name, library value, oracle value, tolerance)`.
pub fn hand_value_table() -> Vec<(&'static str, f64, f64, f64)> {
    use nutrigraph::data::{target_stats_from_values, AnthroTarget};
    use nutrigraph::gat::weighted_bce_with_logits;
    use nutrigraph::metrics::{
        calibration_metrics, classification_metrics, decision_curve, effect_size, fold_ci, pearson_r, roc_auc,
        target_errors,
    };
    use std::f64::consts::{LN_2, PI};

    let mut rows = Vec::new();
    let two = |d0: f64, l0: u8, d1: f64, l1: u8| {
        NeighborSet::from_parts(vec![
            (
                d0,
                Some(l0),
                Some(AnthroLabels {
                    height_cm: Some(100.0),
                    ..Default::default()
                }),
            ),
            (
                d1,
                Some(l1),
                Some(AnthroLabels {
                    height_cm: Some(110.0),
                    ..Default::default()
                }),
            ),
        ])
    };
    let ns = two(0.1, 1, 0.3, 0);
    let cfg = RetrievalConfig {
        k: 2,
        tau_class: 0.5,
        gamma: 2.0,
        tau_reg: 0.1,
    };
    let y = retrieval_classify(&ns, &cfg).unwrap().score;
    let y_ref = 2.0 * (-0.2f64).exp() / (2.0 * (-0.2f64).exp() + (-0.6f64).exp());
    rows.push(("retrieval_classify vs 0.7490", y, 0.7490, 5e-4));
    rows.push(("retrieval_classify vs oracle", y, y_ref, 1e-9));
    let h = retrieval_regress(&ns, &cfg).unwrap()[AnthroTarget::Height.index()].unwrap();
    let h_ref = (100.0 * (-1.0f64).exp() + 110.0 * (-3.0f64).exp()) / ((-1.0f64).exp() + (-3.0f64).exp());
    rows.push(("retrieval_regress vs 101.19", h, 101.19, 0.01));
    rows.push(("retrieval_regress vs oracle", h, h_ref, 1e-9));
    rows.push(("mean distance", make_context(0.0, &ns).unwrap().mean_distance, 0.2, 1e-12));
    rows.push((
        "fuse_regression alpha 0.5",
        fuse_regression([100.0, 0.0, 0.0, 0.0], [Some(110.0), None, None, None], &[0.5])[0],
        105.0,
        1e-12,
    ));

    let c = classification_metrics(&[0.9, 0.4, 0.6], &[1, 0, 1], 0.5).unwrap();
    rows.push(("confusion tp", c.confusion.tp as f64, 2.0, 0.0));
    rows.push(("confusion tn", c.confusion.tn as f64, 1.0, 0.0));
    rows.push(("accuracy", c.accuracy, 1.0, 1e-9));
    rows.push(("f1", c.f1, 1.0, 1e-9));
    // Fraction of positive-negative pairs ranked correctly: (0.9 > 0.4), (0.6 > 0.4).
    rows.push(("auc", roc_auc(&[0.9, 0.4, 0.6], &[1, 0, 1]).unwrap(), 1.0, 1e-9));

    let cal = calibration_metrics(&[0.8, 0.8], &[1, 0], 1).unwrap();
    rows.push(("ece", cal.ece, (0.5f64 - 0.8).abs(), 1e-9));
    rows.push(("mce", cal.mce, (0.5f64 - 0.8).abs(), 1e-9));
    rows.push(("brier", cal.brier, (0.2f64.powi(2) + 0.8f64.powi(2)) / 2.0, 1e-9));

    let dca = decision_curve(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 1, 0], &[0.5]).unwrap();
    // TP = 1, FP = 1, n = 4, odds(0.5) = 1.
    rows.push(("net benefit", dca[0].net_benefit, 0.0, 1e-9));

    let d = 0.05 * (3.0f64 / 4.0).sqrt();
    let ci = fold_ci(&[0.74 - d, 0.74 - d, 0.74 + d, 0.74 + d], 0.95).unwrap();
    let hw = t975_df3() * 0.05 / 2.0;
    rows.push(("fold_ci half width n=4", ci.half_width, hw, 1e-9));
    rows.push(("fold_ci half width vs 0.0796", ci.half_width, 0.0796, 5e-5));
    rows.push(("fold_ci lower", ci.lower, 0.74 - hw, 1e-9));
    rows.push(("fold_ci upper", ci.upper, 0.74 + hw, 1e-9));
    let ci2 = fold_ci(&[0.0, 1.0], 0.95).unwrap();
    rows.push(("fold_ci half width n=2", ci2.half_width, (0.475 * PI).tan() * 0.5f64.sqrt() / 2f64.sqrt(), 1e-9));
    rows.push(("fold_ci half width vs 6.353", ci2.half_width, 6.353, 5e-4));

    let e = effect_size(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
    rows.push(("effect size delta", e.mean_delta, 2.0, 1e-9));
    rows.push(("cohens d", e.cohens_d.unwrap(), 2.0 / 2f64.sqrt(), 1e-9));
    rows.push(("pearson r", pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5, 1e-9));

    let sym = target_errors(&[3.0, -3.0], &[Some(0.0), Some(0.0)]).unwrap();
    rows.push(("mae {+3,-3}", sym.mae, 3.0, 1e-9));
    rows.push(("rmse {+3,-3}", sym.rmse, 3.0, 1e-9));
    let skew = target_errors(&[0.0, 4.0], &[Some(0.0), Some(0.0)]).unwrap();
    rows.push(("mae {0,4}", skew.mae, 2.0, 1e-9));
    rows.push(("rmse {0,4}", skew.rmse, 8f64.sqrt(), 1e-9));

    let stats = target_stats_from_values([
        [Some(100.0), Some(10.0), Some(14.0), Some(45.0)],
        [Some(110.0), Some(12.0), Some(15.0), Some(47.0)],
    ])
    .unwrap();
    rows.push(("height mean", stats.mean[0], 105.0, 1e-12));
    rows.push(("height std", stats.std[0], 50f64.sqrt(), 1e-9));
    rows.push(("weighted bce", weighted_bce_with_logits(0.0, 1, 2.0), 2.0 * LN_2, 1e-12));
    rows.push((
        "youden midpoint",
        select_threshold_youden(&[0.1, 0.2, 0.7, 0.9], &[0, 0, 1, 1]).unwrap().threshold,
        0.45,
        1e-12,
    ));

    let axes = vec![
        KbEntry {
            subject_id: "e1".into(),
            embedding: vec![1.0, 0.0],
            class_label: Some(0),
            anthro: None,
        },
        KbEntry {
            subject_id: "e2".into(),
            embedding: vec![0.0, 1.0],
            class_label: Some(0),
            anthro: None,
        },
        KbEntry {
            subject_id: "e3".into(),
            embedding: vec![0.5f64.sqrt(), 0.5f64.sqrt()],
            class_label: Some(1),
            anthro: None,
        },
    ];
    let kb = KnowledgeBase::from_entries(axes, DistanceMetric::Cosine).unwrap();
    let hits = kb.search(&[1.0, 0.0], 3).unwrap();
    let order = hits.neighbors.iter().fold(0.0, |acc, n| acc * 10.0 + n.index as f64);
    rows.push(("cosine order [e1, e3, e2]", order, 21.0, 0.0));
    rows.push(("cosine distance e3", hits.neighbors[1].distance, 1.0 - 0.5f64.sqrt(), 1e-12));
    rows.push(("cosine distance e2", hits.neighbors[2].distance, 1.0, 1e-12));
    rows
}

pub fn hand_values() -> Check {
    let rows = hand_value_table();
    let bad: Vec<String> = rows
        .iter()
        .filter(|(_, got, want, tol)| !((got - want).abs() <= *tol))
        .map(|(name, got, want, tol)| format!("{name}: {got} vs {want} (tol {tol:e})"))
        .collect();
    if bad.is_empty() {
        Ok(format!("{} worked examples", rows.len()))
    } else {
        Err(bad.join("; "))
    }
}
