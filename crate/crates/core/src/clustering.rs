//! Per-class k-means with silhouette-based choice of k, exact silhouettes,
//! centroids, and nearest-prototype assignment.
//!
//! Silhouette of a point `z` in cluster `C`:
//!
//! ```text
//! a_own  = mean distance from z to the other members of C   (0 if none)
//! a_near = min over clusters C' != C of mean distance from z to C'
//! s(z)   = (a_near - a_own) / max(a_near, a_own)            (0 if both are 0)
//! ```
//!
//! Larger is better; `select_k` keeps the k with the largest mean
//! silhouette, ties going to the smallest k.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LatentDataset, Matrix, PrototypeSet};
use crate::distance::{euclidean, mean_distance, nearest, squared_euclidean};
use crate::par::{map_range, Execution};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("silhouette needs at least one other non-empty cluster")]
    NoOtherCluster,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("class {label} has {size} points, needs at least {needed}")]
    ClassTooSmall {
        label: usize,
        size: usize,
        needed: usize,
    },
    #[error("invalid k-means config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub max_iters: usize,
    pub restarts: usize,
    /// Convergence threshold on the largest centroid shift, relative to
    /// the RMS spread of the points.
    pub tol: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k_min: 2,
            k_max: 15,
            max_iters: 300,
            restarts: 8,
            tol: 1e-6,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(ClusterError::InvalidConfig(format!(
                "need 2 <= k_min <= k_max, got k_min={}, k_max={}",
                self.k_min, self.k_max
            )));
        }
        if self.restarts < 1 {
            return Err(ClusterError::InvalidConfig("restarts must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(ClusterError::InvalidConfig("tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Silhouette from the two mean distances.
#[inline]
pub fn silhouette_from_means(a_own: f64, a_near: f64) -> f64 {
    let denom = a_own.max(a_near);
    if denom == 0.0 {
        0.0
    } else {
        (a_near - a_own) / denom
    }
}

/// Silhouette of `z` given its peers (excluding `z` itself) and the member
/// sets of every other cluster. Empty other clusters are ignored.
pub fn silhouette_point(
    z: &[f64],
    own_peers: &[&[f64]],
    other_clusters: &[Vec<&[f64]>],
) -> Result<f64, ClusterError> {
    let a_near = other_clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| mean_distance(z, c.iter().copied()))
        .fold(None, |best: Option<f64>, d| Some(best.map_or(d, |b| b.min(d))))
        .ok_or(ClusterError::NoOtherCluster)?;
    let a_own = mean_distance(z, own_peers.iter().copied());
    Ok(silhouette_from_means(a_own, a_near))
}

/// Member indices of each of `k` clusters.
pub fn cluster_members(assignments: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    members
}

/// Per-point silhouettes for a labelled point set.
pub fn silhouette_samples(
    points: &Matrix,
    assignments: &[usize],
    k: usize,
    exec: Execution,
) -> Result<Vec<f64>, ClusterError> {
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::NoOtherCluster);
    }
    Ok(map_range(exec, points.nrows(), |i| {
        let zi = points.row(i);
        let mut sums = vec![0.0; k];
        for (j, zj) in points.rows().enumerate() {
            if j != i {
                sums[assignments[j]] += euclidean(zi, zj);
            }
        }
        let own = assignments[i];
        let a_own = if sizes[own] > 1 {
            sums[own] / (sizes[own] - 1) as f64
        } else {
            0.0
        };
        let a_near = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        silhouette_from_means(a_own, a_near)
    }))
}

pub fn mean_silhouette(
    points: &Matrix,
    assignments: &[usize],
    k: usize,
    exec: Execution,
) -> Result<f64, ClusterError> {
    let s = silhouette_samples(points, assignments, k, exec)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
    pub iterations: usize,
}

/// Best of `cfg.restarts` seeded Lloyd runs by within-cluster sum of squares.
pub fn kmeans(points: &Matrix, k: usize, cfg: &KMeansConfig) -> Result<KMeansFit, ClusterError> {
    if k == 0 {
        return Err(ClusterError::InvalidConfig("k must be >= 1".into()));
    }
    if points.nrows() < k {
        return Err(ClusterError::TooFewPoints {
            needed: k,
            got: points.nrows(),
        });
    }
    if cfg.restarts < 1 {
        return Err(ClusterError::InvalidConfig("restarts must be >= 1".into()));
    }
    let fits = map_range(cfg.exec, cfg.restarts, |r| {
        let mut rng = seed::rng(cfg.seed, &[k as u64, r as u64]);
        lloyd(points, k, &mut rng, cfg.max_iters, cfg.tol)
    });
    let best = fits
        .into_iter()
        .reduce(|best, f| if f.wcss < best.wcss { f } else { best })
        .expect("restarts >= 1");
    Ok(best)
}

fn plus_plus_init(points: &Matrix, k: usize, rng: &mut seed::Rng) -> Matrix {
    let n = points.nrows();
    let mut centroids = Matrix::zeros(k, points.ncols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .map(|p| squared_euclidean(p, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.rows().enumerate() {
            d2[i] = d2[i].min(squared_euclidean(p, centroids.row(c)));
        }
    }
    centroids
}

fn rms_spread(points: &Matrix) -> f64 {
    let n = points.nrows() as f64;
    let mut mean = vec![0.0; points.ncols()];
    for p in points.rows() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    (points.rows().map(|p| squared_euclidean(p, &mean)).sum::<f64>() / n).sqrt()
}

fn assign_nearest(points: &Matrix, centroids: &Matrix, out: &mut [usize]) {
    for (i, p) in points.rows().enumerate() {
        out[i] = nearest(p, centroids.rows()).expect("k >= 1").0;
    }
}

/// Moves the point farthest from its centroid (taken from a cluster with at
/// least two members) into each empty cluster.
fn repair_empty(points: &Matrix, centroids: &Matrix, assignments: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &c in assignments.iter() {
        sizes[c] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.rows().enumerate() {
            let c = assignments[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = squared_euclidean(p, centroids.row(c));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n >= k guarantees a donor cluster");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
    }
}

fn means(points: &Matrix, assignments: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, points.ncols());
    let mut counts = vec![0usize; k];
    for (i, p) in points.rows().enumerate() {
        let c = assignments[i];
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        let inv = count as f64;
        for s in sums.row_mut(c) {
            *s /= inv;
        }
    }
    sums
}

fn lloyd(points: &Matrix, k: usize, rng: &mut seed::Rng, max_iters: usize, tol: f64) -> KMeansFit {
    let scale = rms_spread(points);
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![0usize; points.nrows()];
    let mut previous: Option<Vec<usize>> = None;
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        assign_nearest(points, &centroids, &mut assignments);
        repair_empty(points, &centroids, &mut assignments, k);
        let updated = means(points, &assignments, k);
        let shift = centroids
            .rows()
            .zip(updated.rows())
            .map(|(a, b)| euclidean(a, b))
            .fold(0.0, f64::max);
        centroids = updated;
        let stable = previous.as_deref() == Some(&assignments[..]);
        if stable || scale == 0.0 || shift <= tol * scale {
            break;
        }
        previous = Some(assignments.clone());
    }
    let wcss = points
        .rows()
        .zip(&assignments)
        .map(|(p, &c)| squared_euclidean(p, centroids.row(c)))
        .sum();
    KMeansFit {
        assignments,
        centroids,
        wcss,
        iterations,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub mean_silhouette: f64,
    /// Mean silhouette of every tested k, ascending in k.
    pub tested: Vec<(usize, f64)>,
}

/// Index of the first maximum.
pub(crate) fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fits k-means for every k in `[k_min, min(k_max, |points| - 1)]` and keeps
/// the k with the largest mean silhouette (ties to the smallest k).
pub fn select_k(points: &Matrix, cfg: &KMeansConfig) -> Result<KSelection, ClusterError> {
    cfg.validate()?;
    let n = points.nrows();
    if n < cfg.k_min + 1 {
        return Err(ClusterError::TooFewPoints {
            needed: cfg.k_min + 1,
            got: n,
        });
    }
    let k_hi = cfg.k_max.min(n - 1);
    let ks: Vec<usize> = (cfg.k_min..=k_hi).collect();
    let fits = map_range(cfg.exec, ks.len(), |i| -> Result<_, ClusterError> {
        let fit = kmeans(points, ks[i], cfg)?;
        let s = mean_silhouette(points, &fit.assignments, ks[i], cfg.exec)?;
        Ok((fit, s))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = fits.iter().map(|(_, s)| *s).collect();
    let best = first_argmax(&scores).expect("at least one k");
    let tested = ks.iter().copied().zip(scores.iter().copied()).collect();
    let (fit, s) = fits.into_iter().nth(best).expect("in range");
    Ok(KSelection {
        k: ks[best],
        assignments: fit.assignments,
        centroids: fit.centroids,
        mean_silhouette: s,
        tested,
    })
}

/// Per-class clusters of a latent dataset, concatenated in ascending label
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Global cluster index of each point.
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Class whose points each cluster was fit on.
    pub cluster_class: Vec<usize>,
    pub per_class_k: BTreeMap<usize, usize>,
    pub per_class_silhouette: BTreeMap<usize, f64>,
    /// Point-weighted mean of the per-class silhouettes.
    pub mean_silhouette: f64,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        cluster_members(&self.assignments, self.num_clusters())
    }

    /// Builds a model from known assignments, with centroids as member
    /// means. Used for planted ground truth.
    pub fn from_assignments(
        latent: &LatentDataset,
        assignments: Vec<usize>,
        cluster_class: Vec<usize>,
    ) -> Result<Self, ClusterError> {
        let k = cluster_class.len();
        if assignments.len() != latent.len() || assignments.iter().any(|&c| c >= k) {
            return Err(ClusterError::DimensionMismatch(
                "assignments do not fit the dataset / cluster count".into(),
            ));
        }
        let members = cluster_members(&assignments, k);
        if members.iter().any(Vec::is_empty) {
            return Err(ClusterError::InvalidConfig("every cluster needs a member".into()));
        }
        let centroids = means(&latent.vectors, &assignments, k);
        let mut per_class_k = BTreeMap::new();
        for &c in &cluster_class {
            *per_class_k.entry(c).or_insert(0) += 1;
        }
        let mut per_class_silhouette = BTreeMap::new();
        let mut weighted = 0.0;
        for (&label, &kc) in &per_class_k {
            let idx: Vec<usize> = (0..latent.len()).filter(|&i| latent.labels[i] == label).collect();
            let local: Vec<usize> = {
                let globals: Vec<usize> = (0..k).filter(|&c| cluster_class[c] == label).collect();
                idx.iter()
                    .map(|&i| globals.iter().position(|&g| g == assignments[i]).unwrap_or(0))
                    .collect()
            };
            let s = if kc >= 2 {
                mean_silhouette(&latent.vectors.select_rows(&idx), &local, kc, Execution::default())?
            } else {
                0.0
            };
            weighted += s * idx.len() as f64;
            per_class_silhouette.insert(label, s);
        }
        Ok(ClusterModel {
            assignments,
            centroids,
            cluster_class,
            per_class_k,
            per_class_silhouette,
            mean_silhouette: weighted / latent.len() as f64,
        })
    }
}

/// Groups points by ground-truth label, runs [`select_k`] per class, and
/// concatenates the clusters with global indices.
pub fn build_cluster_model(
    latent: &LatentDataset,
    cfg: &KMeansConfig,
) -> Result<ClusterModel, ClusterError> {
    cfg.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in latent.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut assignments = vec![0usize; latent.len()];
    let mut centroids = Matrix::zeros(0, latent.dim());
    let mut cluster_class = Vec::new();
    let mut per_class_k = BTreeMap::new();
    let mut per_class_silhouette = BTreeMap::new();
    let mut weighted = 0.0;
    for (&label, idx) in &by_class {
        if idx.len() < cfg.k_min + 1 {
            return Err(ClusterError::ClassTooSmall {
                label,
                size: idx.len(),
                needed: cfg.k_min + 1,
            });
        }
        let class_cfg = KMeansConfig {
            seed: seed::derive(cfg.seed, &[label as u64]),
            ..cfg.clone()
        };
        let sel = select_k(&latent.vectors.select_rows(idx), &class_cfg)?;
        let offset = cluster_class.len();
        for (local, &global) in sel.assignments.iter().zip(idx) {
            assignments[global] = offset + local;
        }
        centroids.append(&sel.centroids).expect("same width");
        cluster_class.extend(std::iter::repeat_n(label, sel.k));
        per_class_k.insert(label, sel.k);
        per_class_silhouette.insert(label, sel.mean_silhouette);
        weighted += sel.mean_silhouette * idx.len() as f64;
    }
    Ok(ClusterModel {
        assignments,
        centroids,
        cluster_class,
        per_class_k,
        per_class_silhouette,
        mean_silhouette: weighted / latent.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeAssignment {
    /// Nearest prototype of each point.
    pub point_to_proto: Vec<usize>,
    /// Cluster with the nearest centroid, for each prototype.
    pub proto_to_cluster: Vec<usize>,
}

pub fn assign_prototypes(
    proto: &PrototypeSet,
    cm: &ClusterModel,
    latent: &LatentDataset,
) -> Result<PrototypeAssignment, ClusterError> {
    if proto.dim() != latent.dim() || cm.centroids.ncols() != latent.dim() {
        return Err(ClusterError::DimensionMismatch(format!(
            "prototypes have width {}, latents {}, centroids {}",
            proto.dim(),
            latent.dim(),
            cm.centroids.ncols()
        )));
    }
    let point_to_proto = nearest_rows(&latent.vectors, &proto.prototypes, Execution::default());
    let proto_to_cluster = nearest_rows(&proto.prototypes, &cm.centroids, Execution::Sequential);
    Ok(PrototypeAssignment {
        point_to_proto,
        proto_to_cluster,
    })
}

/// Nearest row of `targets` for each row of `queries`; ties to lowest index.
pub fn nearest_rows(queries: &Matrix, targets: &Matrix, exec: Execution) -> Vec<usize> {
    map_range(exec, queries.nrows(), |i| {
        nearest(queries.row(i), targets.rows()).expect("non-empty targets").0
    })
}
