//! Fully connected pose graphs with age-augmented node features.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{PoseKind, SubjectRecord};
use crate::error::{Error, Result};

/// A subject's pose graph. Row `j` of `node_features` is the embedding of
/// `node_poses[j]` followed by the (scaled) age. Every node's neighborhood
/// holds all nodes including itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub subject_id: String,
    pub node_features: Array2<f64>,
    pub node_poses: Vec<PoseKind>,
    neighbors: Vec<Vec<usize>>,
}

impl PoseGraph {
    /// Complete graph with self-loops over the given feature rows.
    pub fn from_features(
        subject_id: impl Into<String>,
        node_features: Array2<f64>,
        node_poses: Vec<PoseKind>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        let n = node_features.nrows();
        if n == 0 {
            return Err(Error::EmptyGraph(subject_id));
        }
        if node_poses.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: node_poses.len(),
            });
        }
        Ok(PoseGraph {
            subject_id,
            node_features,
            node_poses,
            neighbors: vec![(0..n).collect(); n],
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    /// Neighborhood of `node` (includes `node` itself).
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Undirected pair edges `(j, k)` with `j < k`.
    pub fn pair_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (j, nbrs) in self.neighbors.iter().enumerate() {
            edges.extend(nbrs.iter().filter(|&&k| k > j).map(|&k| (j, k)));
        }
        edges
    }

    pub fn self_loops(&self) -> usize {
        self.neighbors
            .iter()
            .enumerate()
            .filter(|(j, nbrs)| nbrs.contains(j))
            .count()
    }

    /// Reorders nodes; `order[i]` is the old index of new node `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let features = self.node_features.select(ndarray::Axis(0), order);
        let poses = order.iter().map(|&i| self.node_poses[i]).collect();
        PoseGraph::from_features(self.subject_id.clone(), features, poses)
            .expect("permutation preserves node count")
    }
}

/// Builds the subject graph with raw age in months as the last feature.
pub fn build_subject_graph(subject: &SubjectRecord) -> Result<PoseGraph> {
    build_subject_graph_scaled(subject, 1.0)
}

/// As [`build_subject_graph`] but multiplies the appended age by `age_scale`.
pub fn build_subject_graph_scaled(subject: &SubjectRecord, age_scale: f64) -> Result<PoseGraph> {
    if subject.poses.is_empty() {
        return Err(Error::EmptyGraph(subject.id.clone()));
    }
    let dim = subject.embed_dim();
    let n = subject.poses.len();
    let mut features = Array2::zeros((n, dim + 1));
    // BTreeMap iteration is canonical pose order.
    for (row, embedding) in subject.poses.values().enumerate() {
        if embedding.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: embedding.len(),
            });
        }
        let mut r = features.row_mut(row);
        for (dst, &src) in r.iter_mut().zip(embedding) {
            *dst = src;
        }
        r[dim] = subject.age_months * age_scale;
    }
    let poses = subject.poses.keys().copied().collect();
    PoseGraph::from_features(subject.id.clone(), features, poses)
}

/// Pose families used by the node-removal ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseFamily {
    Frontal,
    Lateral,
    Selfie,
    Back,
}

impl PoseFamily {
    pub const ALL: [PoseFamily; 4] = [
        PoseFamily::Frontal,
        PoseFamily::Lateral,
        PoseFamily::Selfie,
        PoseFamily::Back,
    ];

    pub fn contains(self, pose: PoseKind) -> bool {
        use PoseKind::*;
        match self {
            PoseFamily::Frontal => matches!(pose, Frontal1 | Frontal2 | Frontal3 | Frontal4),
            PoseFamily::Lateral => matches!(pose, LateralLeft | LateralRight),
            PoseFamily::Selfie => pose == Selfie,
            PoseFamily::Back => pose == Posterior,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PoseFamily::Frontal => "Frontal",
            PoseFamily::Lateral => "Lateral",
            PoseFamily::Selfie => "Selfie",
            PoseFamily::Back => "Back",
        }
    }
}

impl fmt::Display for PoseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PoseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "frontal" => Ok(PoseFamily::Frontal),
            "lateral" => Ok(PoseFamily::Lateral),
            "selfie" => Ok(PoseFamily::Selfie),
            "back" | "posterior" => Ok(PoseFamily::Back),
            other => Err(Error::Config(format!("unknown pose family {other:?}"))),
        }
    }
}

/// Removes every pose of `family` from a record.
pub fn drop_pose_family(subject: &SubjectRecord, family: PoseFamily) -> Result<SubjectRecord> {
    let mut out = subject.clone();
    out.poses.retain(|&pose, _| !family.contains(pose));
    if out.poses.is_empty() {
        return Err(Error::EmptyGraph(subject.id.clone()));
    }
    Ok(out)
}

/// Removes every node of `family` from a graph and rebuilds the adjacency.
pub fn drop_pose_family_graph(graph: &PoseGraph, family: PoseFamily) -> Result<PoseGraph> {
    let keep: Vec<usize> = (0..graph.num_nodes())
        .filter(|&i| !family.contains(graph.node_poses[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyGraph(graph.subject_id.clone()));
    }
    Ok(graph.permuted(&keep))
}
