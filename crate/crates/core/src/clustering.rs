//! Density clustering (DBSCAN) over a precomputed distance matrix, and
//! template-face construction from face-photo embeddings.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::{common_dim, Embedding, SpeakerId};
use crate::{Error, Result};

/// Symmetric, non-negative, zero-diagonal matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates and wraps a row-major `n x n` buffer.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::InvalidDistanceMatrix(format!(
                "expected {} entries, got {}",
                n * n,
                d.len()
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::InvalidDistanceMatrix(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() {
                    return Err(Error::InvalidDistanceMatrix(format!("non-finite entry at ({i}, {j})")));
                }
                if v < 0.0 {
                    return Err(Error::InvalidDistanceMatrix(format!("negative entry at ({i}, {j})")));
                }
                if v != d[j * n + i] {
                    return Err(Error::InvalidDistanceMatrix(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, d })
    }

    /// Builds the matrix from a distance function evaluated on `i < j`.
    pub fn from_fn(n: usize, mut dist: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = dist(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self::new(n, d)
    }

    pub fn euclidean(points: &[Vec<f64>]) -> Result<Self> {
        Self::from_fn(points.len(), |i, j| linalg::norm(&linalg::sub(&points[i], &points[j])))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn max_entry(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry, or `None` when `n < 2`.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let v = self.get(i, j);
                best = Some(best.map_or(v, |b| b.min(v)));
            }
        }
        best
    }
}

/// Label used for points that belong to no cluster.
pub const NOISE: i32 = -1;

/// Result of [`dbscan`]. Cluster `0` is the largest; ties go to the cluster
/// holding the smaller point index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i32>,
    pub core: Vec<bool>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        let c = cluster as i32;
        self.labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Density-based clustering.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within distance `eps`. Core points within `eps` of each other share a
/// cluster. A non-core point within `eps` of some core point is a border
/// point and joins the adjacent cluster whose smallest core index is
/// lowest. Everything else is noise.
pub fn dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be finite and >= 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidParameter("min_pts must be positive".into()));
    }
    let n = d.len();
    let neighbours: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| d.get(i, j) <= eps).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    // Components of the core graph, discovered in index order so that
    // component ids increase with their smallest core index.
    let mut component = vec![usize::MAX; n];
    let mut n_components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || component[start] != usize::MAX {
            continue;
        }
        component[start] = n_components;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if core[q] && component[q] == usize::MAX {
                    component[q] = n_components;
                    queue.push_back(q);
                }
            }
        }
        n_components += 1;
    }
    for p in 0..n {
        if core[p] {
            continue;
        }
        if let Some(c) = neighbours[p].iter().filter(|&&q| core[q]).map(|&q| component[q]).min() {
            component[p] = c;
        }
    }

    // Canonical numbering: size descending, then smallest member index.
    let mut sizes = vec![0usize; n_components];
    let mut first_member = vec![usize::MAX; n_components];
    for (p, &c) in component.iter().enumerate() {
        if c != usize::MAX {
            sizes[c] += 1;
            first_member[c] = first_member[c].min(p);
        }
    }
    let mut order: Vec<usize> = (0..n_components).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(first_member[a].cmp(&first_member[b])));
    let mut relabel = vec![0i32; n_components];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new as i32;
    }
    let labels = component.iter().map(|&c| if c == usize::MAX { NOISE } else { relabel[c] }).collect();
    Ok(ClusterAssignment { labels, core })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub label: i32,
    pub members: Vec<usize>,
}

/// The cluster with most members; ties go to the cluster whose smallest
/// member index is lowest. `None` when every point is noise.
pub fn largest_cluster(a: &ClusterAssignment) -> Option<Cluster> {
    let mut best: Option<Cluster> = None;
    let mut labels: Vec<i32> = a.labels.iter().copied().filter(|&l| l != NOISE).collect();
    labels.sort_unstable();
    labels.dedup();
    for label in labels {
        let members: Vec<usize> =
            a.labels.iter().enumerate().filter(|(_, &l)| l == label).map(|(i, _)| i).collect();
        let better = match &best {
            None => true,
            Some(b) => {
                members.len() > b.members.len()
                    || (members.len() == b.members.len() && members[0] < b.members[0])
            }
        };
        if better {
            best = Some(Cluster { label, members });
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateParams {
    pub eps: f64,
    pub min_pts: usize,
    /// Speakers whose largest face cluster is smaller than this are skipped.
    pub min_support: usize,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self { eps: 0.5, min_pts: 2, min_support: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateFace {
    pub speaker: SpeakerId,
    pub vector: Embedding,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateOutcome {
    Accepted(TemplateFace),
    /// The largest cluster had `largest` members, below the support gate.
    Rejected { speaker: SpeakerId, largest: usize },
}

impl TemplateOutcome {
    pub fn accepted(&self) -> Option<&TemplateFace> {
        match self {
            Self::Accepted(t) => Some(t),
            Self::Rejected { .. } => None,
        }
    }
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let n = linalg::norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Clusters face embeddings by Euclidean distance of their L2-normalised
/// forms and averages the largest cluster into a template.
pub fn build_template(
    speaker: SpeakerId,
    faces: &[Embedding],
    params: &TemplateParams,
) -> Result<TemplateOutcome> {
    let Some(dim) = common_dim(faces)? else {
        return Ok(TemplateOutcome::Rejected { speaker, largest: 0 });
    };
    let raw: Vec<Vec<f64>> = faces.iter().map(Embedding::to_f64).collect();
    let normalized: Vec<Vec<f64>> = raw.iter().map(|v| l2_normalized(v)).collect();
    let d = DistanceMatrix::euclidean(&normalized)?;
    let assignment = dbscan(&d, params.eps, params.min_pts)?;
    let Some(cluster) = largest_cluster(&assignment) else {
        return Ok(TemplateOutcome::Rejected { speaker, largest: 0 });
    };
    if cluster.members.len() < params.min_support {
        return Ok(TemplateOutcome::Rejected { speaker, largest: cluster.members.len() });
    }
    let mut mean = vec![0.0f64; dim];
    for &m in &cluster.members {
        for (acc, v) in mean.iter_mut().zip(&raw[m]) {
            *acc += v;
        }
    }
    let count = cluster.members.len() as f64;
    let values = mean.iter().map(|v| (v / count) as f32).collect();
    let vector = Embedding::new(speaker.as_str(), values)?;
    Ok(TemplateOutcome::Accepted(TemplateFace { speaker, vector, support: cluster.members.len() }))
}
