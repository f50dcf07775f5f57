//! Exact flat index over global subject embeddings.
//!
//! Each entry is a subject's pose-averaged, age-appended embedding together
//! with whatever labels it carries. Search computes every distance and keeps
//! the `k` smallest, with ties resolved by insertion order.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AnthroLabels, SubjectRecord};
use crate::error::{Error, Result};

pub const KB_FORMAT_VERSION: u32 = 1;

/// Relative shrinkage added to every per-dimension variance.
const MAHALANOBIS_SHRINKAGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Cosine,
    Euclidean,
    MahalanobisDiag,
}

impl DistanceMetric {
    pub const ALL: [DistanceMetric; 3] = [
        DistanceMetric::Cosine,
        DistanceMetric::Euclidean,
        DistanceMetric::MahalanobisDiag,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DistanceMetric::Cosine => "Cosine",
            DistanceMetric::Euclidean => "Euclidean",
            DistanceMetric::MahalanobisDiag => "Mahalanobis",
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::MahalanobisDiag => "mahalanobis",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(DistanceMetric::Cosine),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "mahalanobis" | "mahalanobis_diag" => Ok(DistanceMetric::MahalanobisDiag),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub subject_id: String,
    pub embedding: Vec<f64>,
    pub class_label: Option<u8>,
    pub anthro: Option<AnthroLabels>,
}

/// Mean of the pose embeddings with the age appended.
pub fn global_query_embedding(subject: &SubjectRecord) -> Result<Vec<f64>> {
    if subject.poses.is_empty() {
        return Err(Error::EmptyGraph(subject.id.clone()));
    }
    let dim = subject.embed_dim();
    let mut q = vec![0.0; dim + 1];
    for embedding in subject.poses.values() {
        if embedding.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: embedding.len(),
            });
        }
        q.iter_mut().zip(embedding).for_each(|(a, b)| *a += b);
    }
    let n = subject.poses.len() as f64;
    q.iter_mut().take(dim).for_each(|a| *a /= n);
    q[dim] = subject.age_months;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the entry in the knowledge base.
    pub index: usize,
    pub subject_id: String,
    pub distance: f64,
    pub class_label: Option<u8>,
    pub anthro: Option<AnthroLabels>,
}

/// Neighbors in ascending distance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
    /// True when fewer than the requested `k` entries existed.
    pub clamped: bool,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.neighbors.iter().map(|n| n.distance).collect()
    }

    /// Builds a set directly from distances and labels (tests, diagnostics).
    pub fn from_parts(items: Vec<(f64, Option<u8>, Option<AnthroLabels>)>) -> Self {
        let neighbors = items
            .into_iter()
            .enumerate()
            .map(|(index, (distance, class_label, anthro))| Neighbor {
                index,
                subject_id: format!("n{index}"),
                distance,
                class_label,
                anthro,
            })
            .collect();
        NeighborSet {
            neighbors,
            clamped: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    metric: DistanceMetric,
    dim: usize,
    entries: Vec<KbEntry>,
    /// Shrunk per-dimension variances (Mahalanobis only).
    variance: Option<Vec<f64>>,
    /// Unit-normalized embeddings (cosine) or inverse variances (Mahalanobis).
    normalized: Vec<Vec<f64>>,
    inv_variance: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    version: u32,
    dim: usize,
    metric: DistanceMetric,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variance: Option<Vec<f64>>,
    entries: Vec<KbEntry>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl KnowledgeBase {
    /// One entry per record via [`global_query_embedding`].
    pub fn build(records: &[SubjectRecord], metric: DistanceMetric) -> Result<Self> {
        let mut entries = Vec::with_capacity(records.len());
        for r in records {
            if !r.has_any_label() {
                return Err(Error::Invalid(format!(
                    "knowledge-base record {:?} carries no labels",
                    r.id
                )));
            }
            entries.push(KbEntry {
                subject_id: r.id.clone(),
                embedding: global_query_embedding(r)?,
                class_label: r.class_label,
                anthro: r.anthro.filter(|a| !a.is_empty()),
            });
        }
        Self::from_entries(entries, metric)
    }

    pub fn from_entries(entries: Vec<KbEntry>, metric: DistanceMetric) -> Result<Self> {
        let variance = if metric == DistanceMetric::MahalanobisDiag {
            if entries.len() < 2 {
                return Err(Error::Invalid(
                    "mahalanobis metric needs at least 2 entries".into(),
                ));
            }
            let dim = entries[0].embedding.len();
            let n = entries.len() as f64;
            let mut mean = vec![0.0; dim];
            for e in &entries {
                mean.iter_mut().zip(&e.embedding).for_each(|(m, x)| *m += x / n);
            }
            let mut var = vec![0.0; dim];
            for e in &entries {
                var.iter_mut()
                    .zip(e.embedding.iter().zip(&mean))
                    .for_each(|(v, (x, m))| *v += (x - m).powi(2) / (n - 1.0));
            }
            let mean_var = var.iter().sum::<f64>() / dim as f64;
            let eps = MAHALANOBIS_SHRINKAGE * mean_var;
            if eps <= 0.0 {
                return Err(Error::Invalid("all knowledge-base entries are identical".into()));
            }
            var.iter_mut().for_each(|v| *v += eps);
            Some(var)
        } else {
            None
        };
        Self::assemble(entries, metric, variance)
    }

    fn assemble(
        entries: Vec<KbEntry>,
        metric: DistanceMetric,
        variance: Option<Vec<f64>>,
    ) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Invalid("knowledge base needs at least one entry".into()))?;
        let dim = first.embedding.len();
        for e in &entries {
            if e.embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: e.embedding.len(),
                });
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of {}", e.subject_id)));
            }
            if e.class_label.is_none() && e.anthro.is_none_or(|a| a.is_empty()) {
                return Err(Error::Invalid(format!("entry {:?} carries no labels", e.subject_id)));
            }
        }
        let normalized = if metric == DistanceMetric::Cosine {
            entries
                .iter()
                .map(|e| {
                    let n = norm(&e.embedding);
                    if n == 0.0 {
                        Err(Error::ZeroNorm)
                    } else {
                        Ok(e.embedding.iter().map(|x| x / n).collect())
                    }
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let inv_variance = match (&variance, metric) {
            (Some(v), DistanceMetric::MahalanobisDiag) => {
                if v.len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                    return Err(Error::Corrupt("variance entries must be positive".into()));
                }
                Some(v.iter().map(|x| 1.0 / x).collect())
            }
            (None, DistanceMetric::MahalanobisDiag) => {
                return Err(Error::Corrupt("mahalanobis index without variances".into()))
            }
            _ => None,
        };
        Ok(KnowledgeBase {
            metric,
            dim,
            entries,
            variance: if metric == DistanceMetric::MahalanobisDiag {
                variance
            } else {
                None
            },
            normalized,
            inv_variance,
        })
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn variance(&self) -> Option<&[f64]> {
        self.variance.as_deref()
    }

    /// Distance from `query` to entry `index` under the index metric.
    pub fn distance_to(&self, query: &[f64], index: usize) -> Result<f64> {
        let prepared = self.prepare_query(query)?;
        Ok(self.distance_prepared(&prepared, index))
    }

    fn prepare_query(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query".into()));
        }
        match self.metric {
            DistanceMetric::Cosine => {
                let n = norm(query);
                if n == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                Ok(query.iter().map(|x| x / n).collect())
            }
            _ => Ok(query.to_vec()),
        }
    }

    fn distance_prepared(&self, q: &[f64], index: usize) -> f64 {
        match self.metric {
            // Half the squared distance between unit vectors equals 1 - cos,
            // and is exactly zero for identical inputs.
            DistanceMetric::Cosine => {
                let d = 0.5
                    * q.iter()
                        .zip(&self.normalized[index])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>();
                d.clamp(0.0, 2.0)
            }
            DistanceMetric::Euclidean => q
                .iter()
                .zip(&self.entries[index].embedding)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::MahalanobisDiag => {
                let inv = self.inv_variance.as_ref().expect("mahalanobis variances");
                q.iter()
                    .zip(&self.entries[index].embedding)
                    .zip(inv)
                    .map(|((a, b), w)| (a - b).powi(2) * w)
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Exact top-`k` search. `k` larger than the index is clamped and flagged.
    pub fn search(&self, query: &[f64], k: usize) -> Result<NeighborSet> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let q = self.prepare_query(query)?;
        let mut scored: Vec<(f64, usize)> = (0..self.entries.len())
            .map(|i| (self.distance_prepared(&q, i), i))
            .collect();
        let take = k.min(scored.len());
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, by_distance);
            scored.truncate(take);
        }
        scored.sort_by(by_distance);
        let neighbors = scored
            .into_iter()
            .map(|(distance, index)| {
                let e = &self.entries[index];
                Neighbor {
                    index,
                    subject_id: e.subject_id.clone(),
                    distance,
                    class_label: e.class_label,
                    anthro: e.anthro,
                }
            })
            .collect();
        Ok(NeighborSet {
            neighbors,
            clamped: k > self.entries.len(),
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = KbFile {
            version: KB_FORMAT_VERSION,
            dim: self.dim,
            metric: self.metric,
            count: self.entries.len(),
            variance: self.variance.clone(),
            entries: self.entries.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
        if probe.version != KB_FORMAT_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: KB_FORMAT_VERSION,
            });
        }
        let file: KbFile = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
        if file.count != file.entries.len() {
            return Err(Error::Corrupt(format!(
                "header count {} but {} entries",
                file.count,
                file.entries.len()
            )));
        }
        let kb = Self::assemble(file.entries, file.metric, file.variance)?;
        if kb.dim != file.dim {
            return Err(Error::Dimension {
                expected: file.dim,
                got: kb.dim,
            });
        }
        Ok(kb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PoseKind;

    fn entry(id: &str, embedding: Vec<f64>, label: u8) -> KbEntry {
        KbEntry {
            subject_id: id.into(),
            embedding,
            class_label: Some(label),
            anthro: None,
        }
    }

    fn subject(id: &str, poses: Vec<Vec<f64>>, age: f64) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            age_months: age,
            poses: PoseKind::ALL.iter().copied().zip(poses).collect(),
            class_label: Some(0),
            anthro: None,
        }
    }

    #[test]
    fn query_embedding_means() {
        let s = subject("a", vec![vec![1.0, 5.0]], 12.0);
        assert_eq!(global_query_embedding(&s).unwrap(), vec![1.0, 5.0, 12.0]);
        let s = subject("a", vec![vec![1.0, 0.0], vec![3.0, 1.0]], 24.0);
        let q = global_query_embedding(&s).unwrap();
        assert_eq!(q[0], 2.0);
        assert_eq!(q[2], 24.0);
    }

    #[test]
    fn query_equals_mean_of_node_features() {
        let s = subject("a", vec![vec![1.0, -2.0], vec![0.5, 4.0], vec![-3.0, 0.25]], 30.0);
        let graph = crate::graph::build_subject_graph_scaled(&s, 1.0).unwrap();
        let mean = graph.node_features.mean_axis(ndarray::Axis(0)).unwrap();
        let q = global_query_embedding(&s).unwrap();
        for (a, b) in q.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_cosine_example() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let kb = KnowledgeBase::from_entries(
            vec![
                entry("e1", vec![1.0, 0.0], 0),
                entry("e2", vec![0.0, 1.0], 1),
                entry("e3", vec![s, s], 1),
            ],
            DistanceMetric::Cosine,
        )
        .unwrap();
        let res = kb.search(&[1.0, 0.0], 3).unwrap();
        let order: Vec<_> = res.neighbors.iter().map(|n| n.index).collect();
        assert_eq!(order, vec![0, 2, 1]);
        assert_eq!(res.neighbors[0].distance, 0.0);
        assert!((res.neighbors[1].distance - (1.0 - s)).abs() < 1e-12);
        assert!((res.neighbors[2].distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_match_is_zero() {
        let entries = vec![
            entry("a", vec![0.3, -1.2, 4.5], 0),
            entry("b", vec![2.0, 0.1, -0.7], 1),
            entry("c", vec![-1.0, 1.0, 1.0], 0),
        ];
        for metric in [DistanceMetric::Cosine, DistanceMetric::Euclidean, DistanceMetric::MahalanobisDiag] {
            let kb = KnowledgeBase::from_entries(entries.clone(), metric).unwrap();
            let res = kb.search(&entries[1].embedding, 2).unwrap();
            assert_eq!(res.neighbors[0].index, 1);
            assert_eq!(res.neighbors[0].distance, 0.0);
        }
    }

    #[test]
    fn clamped_k_and_ties() {
        let kb = KnowledgeBase::from_entries(
            vec![
                entry("a", vec![1.0, 1.0], 0),
                entry("b", vec![2.0, 2.0], 1),
                entry("c", vec![1.0, 1.0], 1),
            ],
            DistanceMetric::Euclidean,
        )
        .unwrap();
        let res = kb.search(&[1.0, 1.0], 10).unwrap();
        assert!(res.clamped);
        assert_eq!(res.len(), 3);
        let order: Vec<_> = res.neighbors.iter().map(|n| n.index).collect();
        assert_eq!(order, vec![0, 2, 1]);
        assert!(kb.search(&[1.0, 1.0], 0).is_err());
        assert!(matches!(kb.search(&[1.0], 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cosine_zero_norm() {
        let kb = KnowledgeBase::from_entries(vec![entry("a", vec![1.0, 0.0], 0)], DistanceMetric::Cosine)
            .unwrap();
        assert!(matches!(kb.search(&[0.0, 0.0], 1), Err(Error::ZeroNorm)));
        let err = KnowledgeBase::from_entries(vec![entry("a", vec![0.0, 0.0], 0)], DistanceMetric::Cosine);
        assert!(matches!(err, Err(Error::ZeroNorm)));
    }

    #[test]
    fn build_rejects_unlabeled_and_tiny_mahalanobis() {
        let mut s = subject("a", vec![vec![1.0, 2.0]], 10.0);
        s.class_label = None;
        assert!(KnowledgeBase::build(&[s], DistanceMetric::Cosine).is_err());
        let s = subject("a", vec![vec![1.0, 2.0]], 10.0);
        assert!(KnowledgeBase::build(&[s], DistanceMetric::MahalanobisDiag).is_err());
    }

    #[test]
    fn mahalanobis_shrinkage() {
        let kb = KnowledgeBase::from_entries(
            vec![entry("a", vec![0.0, 1.0], 0), entry("b", vec![2.0, 1.0], 1)],
            DistanceMetric::MahalanobisDiag,
        )
        .unwrap();
        // var = [2, 0]; eps = 1e-6 * mean(var) = 1e-6.
        let v = kb.variance().unwrap();
        assert!((v[0] - (2.0 + 1e-6)).abs() < 1e-15);
        assert!((v[1] - 1e-6).abs() < 1e-18);
        let d = kb.distance_to(&[1.0, 1.0], 0).unwrap();
        assert!((d - (1.0f64 / (2.0 + 1e-6)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn version_and_corruption() {
        let kb = KnowledgeBase::from_entries(
            vec![entry("a", vec![0.5, 1.0], 0), entry("b", vec![2.0, 1.5], 1)],
            DistanceMetric::MahalanobisDiag,
        )
        .unwrap();
        let text = kb.to_json_string().unwrap();
        let back = KnowledgeBase::from_json_str(&text).unwrap();
        assert_eq!(back.entries(), kb.entries());
        assert_eq!(back.variance(), kb.variance());

        let truncated = &text[..text.len() / 2];
        assert!(matches!(KnowledgeBase::from_json_str(truncated), Err(Error::Corrupt(_))));
        let future = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            KnowledgeBase::from_json_str(&future),
            Err(Error::Version { found: 2, .. })
        ));
        let wrong_dim = text.replacen("\"dim\":2", "\"dim\":3", 1);
        assert!(matches!(KnowledgeBase::from_json_str(&wrong_dim), Err(Error::Dimension { .. })));
    }
}
