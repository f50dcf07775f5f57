mod common;

use std::time::Instant;

use common::{check_gradients, checked_trials, random_graph, Trial, REL_TOL};
use nutrigraph::data::TargetStats;
use nutrigraph::gat::{GatModel, LossConfig, ModelConfig, RetrievalSignal, SubjectTargets};
use nutrigraph::retrieval::RetrievalConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_parameter_matches_finite_differences() {
    let start = Instant::now();
    for (i, r) in checked_trials(2024, 50).iter().enumerate() {
        assert!(r.checked > 0);
        assert!(
            r.max_rel_err <= REL_TOL,
            "trial {i}: relative error {:.3e} at {}",
            r.max_rel_err,
            r.worst
        );
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn default_architecture_sampled_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let model = GatModel::init(
        ModelConfig::default(),
        RetrievalConfig::default(),
        true,
        TargetStats::identity(),
        42,
    )
    .unwrap();
    let graphs = vec![
        random_graph(&mut rng, 8, 1025),
        random_graph(&mut rng, 3, 1025),
        random_graph(&mut rng, 1, 1025),
    ];
    let targets = vec![
        SubjectTargets {
            class_label: Some(1),
            reg: [Some(0.4), Some(-0.2), None, Some(1.1)],
        },
        SubjectTargets {
            class_label: Some(0),
            reg: [None, Some(0.3), Some(-0.5), None],
        },
        SubjectTargets {
            class_label: None,
            reg: [Some(-1.0), None, None, None],
        },
    ];
    let signals = vec![
        RetrievalSignal {
            y_cls: 0.8,
            mean_distance: 0.12,
            reg: [Some(0.2), Some(0.1), Some(0.0), None],
        };
        3
    ];
    let trial = Trial {
        model,
        graphs,
        targets,
        signals,
        loss: LossConfig {
            pos_weight: 2.3,
            ..LossConfig::default()
        },
        dropout_seed: Some(5),
    };
    assert!(trial.is_smooth());
    let mut pick_rng = ChaCha8Rng::seed_from_u64(7);
    let mut pick = |name: &str, _i: usize| {
        let p = if name.starts_with("layers.0.weight") || name.starts_with("layers.1.weight") {
            2e-4
        } else {
            0.2
        };
        pick_rng.random::<f64>() < p
    };
    let r = check_gradients(&trial, Some(&mut pick));
    assert!(r.checked > 500, "only {} clean coordinates ({} straddled)", r.checked, r.straddled);
    assert!(r.max_rel_err <= REL_TOL, "relative error {:.3e} at {}", r.max_rel_err, r.worst);
}
