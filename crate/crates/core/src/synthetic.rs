//! Deterministic synthetic cohorts standing in for private clinical data.
//!
//! Every cohort lives in one fixed embedding "world": a base vector, a class
//! direction, a handful of subject-level factor directions, per-pose offsets
//! and a domain-shift direction, all drawn from a constant seed. The
//! config seed only controls subject sampling, so cohorts generated with
//! different seeds (training set, knowledge base, test set) are mutually
//! consistent.
//!
//! Positive (malnourished) subjects are displaced along the class direction
//! by `cluster_separation` within-class standard deviations. Anthropometric
//! labels are affine in age, class and two latent factors, plus noise.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{AnthroLabels, PoseKind, SubjectRecord, EMBED_DIM};
use crate::error::{Error, Result};

const WORLD_SEED: u64 = 0x5EED_1025;
const FACTORS: usize = 8;
/// Within-class standard deviation along the class direction.
const CLASS_AXIS_STD: f64 = 15.0;
const FACTOR_STD: f64 = 6.0;
const BASE_STD: f64 = 3.0;
const POSE_OFFSET_STD: f64 = 0.3;
const POSE_NOISE_STD: f64 = 0.5;
const AGE_RANGE: (f64, f64) = (6.0, 60.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub positive_fraction: f64,
    pub cluster_separation: f64,
    pub poses_per_subject: usize,
    pub seed: u64,
    /// Domain shift in within-class standard deviations: the whole cohort
    /// moves against the class direction by this amount and by the same
    /// amount along a fixed orthogonal direction.
    #[serde(default)]
    pub domain_shift: f64,
    /// Prefix for generated subject ids.
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_prefix() -> String {
    "subj".to_string()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_subjects: 400,
            positive_fraction: 0.2994,
            cluster_separation: 3.0,
            poses_per_subject: 8,
            seed: 42,
            domain_shift: 0.0,
            id_prefix: default_prefix(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::Config("n_subjects must be at least 2".into()));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config("positive_fraction must lie in (0, 1)".into()));
        }
        // Expected count of each class must reach one subject.
        let n = self.n_subjects as f64;
        if n * self.positive_fraction < 1.0 || n * (1.0 - self.positive_fraction) < 1.0 {
            return Err(Error::Config(
                "expected at least one subject per class".into(),
            ));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::Config("cluster_separation must be >= 0".into()));
        }
        if !(1..=8).contains(&self.poses_per_subject) {
            return Err(Error::Config("poses_per_subject must be in 1..=8".into()));
        }
        if !self.domain_shift.is_finite() {
            return Err(Error::Config("domain_shift must be finite".into()));
        }
        Ok(())
    }
}

struct World {
    base: Vec<f64>,
    class_axis: Vec<f64>,
    shift_axis: Vec<f64>,
    factors: Vec<Vec<f64>>,
    pose_offsets: Vec<Vec<f64>>,
}

fn unit_vector(rng: &mut ChaCha8Rng, against: &[&[f64]]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..EMBED_DIM).map(|_| rng.sample(StandardNormal)).collect();
    for a in against {
        let dot: f64 = v.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(a.iter()).for_each(|(x, y)| *x -= dot * y);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl World {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(WORLD_SEED);
        let base_dist = Normal::new(0.0, BASE_STD).unwrap();
        let base = (0..EMBED_DIM).map(|_| base_dist.sample(&mut rng)).collect();
        let class_axis = unit_vector(&mut rng, &[]);
        let shift_axis = unit_vector(&mut rng, &[&class_axis]);
        let mut factors: Vec<Vec<f64>> = Vec::with_capacity(FACTORS);
        for _ in 0..FACTORS {
            let mut against: Vec<&[f64]> = vec![&class_axis, &shift_axis];
            against.extend(factors.iter().map(Vec::as_slice));
            let f = unit_vector(&mut rng, &against);
            factors.push(f);
        }
        let offset_dist = Normal::new(0.0, POSE_OFFSET_STD).unwrap();
        let pose_offsets = PoseKind::ALL
            .iter()
            .map(|_| (0..EMBED_DIM).map(|_| offset_dist.sample(&mut rng)).collect())
            .collect();
        World {
            base,
            class_axis,
            shift_axis,
            factors,
            pose_offsets,
        }
    }
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

/// Generates a labeled cohort. Identical configs give identical records.
pub fn generate_synthetic_cohort(config: &SyntheticConfig) -> Result<Vec<SubjectRecord>> {
    config.validate()?;
    let world = World::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, POSE_NOISE_STD).unwrap();
    let width = config.n_subjects.to_string().len().max(4);

    let mut records = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let positive = rng.random::<f64>() < config.positive_fraction;
        let y = if positive { 1.0 } else { 0.0 };
        let age = round_to(rng.random_range(AGE_RANGE.0..AGE_RANGE.1), 10.0);
        let factors: Vec<f64> = (0..FACTORS).map(|_| rng.sample(StandardNormal)).collect();
        let class_noise: f64 = rng.sample(StandardNormal);

        let class_coord = CLASS_AXIS_STD * (config.cluster_separation * y + class_noise - config.domain_shift);
        let shift_coord = CLASS_AXIS_STD * config.domain_shift;
        let mut latent: Vec<f64> = world
            .base
            .iter()
            .zip(&world.class_axis)
            .zip(&world.shift_axis)
            .map(|((b, u), v)| b + class_coord * u + shift_coord * v)
            .collect();
        for (f, dir) in factors.iter().zip(&world.factors) {
            latent.iter_mut().zip(dir).for_each(|(l, d)| *l += FACTOR_STD * f * d);
        }

        let chosen = if config.poses_per_subject == PoseKind::ALL.len() {
            (0..PoseKind::ALL.len()).collect::<Vec<_>>()
        } else {
            let mut idx = sample(&mut rng, PoseKind::ALL.len(), config.poses_per_subject).into_vec();
            idx.sort_unstable();
            idx
        };
        let poses = chosen
            .into_iter()
            .map(|p| {
                let embedding = latent
                    .iter()
                    .zip(&world.pose_offsets[p])
                    .map(|(l, o)| round_to(l + o + noise.sample(&mut rng), 1e4))
                    .collect();
                (PoseKind::ALL[p], embedding)
            })
            .collect();

        let mut eps = || -> f64 { rng.sample(StandardNormal) };
        let height = 68.0 + 0.55 * age - 6.0 * y + 3.0 * factors[0] + 2.0 * eps();
        let weight = 7.5 + 0.17 * age - 2.5 * y + 1.0 * factors[1] + 0.8 * eps();
        let muac = 15.5 + 0.02 * age - 2.0 * y + 0.5 * factors[0] + 0.5 * eps();
        let hc = 43.0 + 0.1 * age - 1.5 * y + 0.6 * factors[1] + 0.7 * eps();
        let anthro = AnthroLabels {
            height_cm: Some(round_to(height.max(0.0), 10.0)),
            weight_kg: Some(round_to(weight.max(0.0), 100.0)),
            muac_cm: Some(round_to(muac.max(0.0), 10.0)),
            hc_cm: Some(round_to(hc.max(0.0), 10.0)),
        };

        records.push(SubjectRecord {
            id: format!("{}-{:0width$}", config.id_prefix, i, width = width),
            age_months: age,
            poses,
            class_label: Some(positive as u8),
            anthro: Some(anthro),
        });
    }
    Ok(records)
}
