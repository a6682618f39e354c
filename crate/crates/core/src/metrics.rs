//! The nine prototype-quality scores and their total.
//!
//! | score | reads                                   | needs model |
//! |-------|-----------------------------------------|-------------|
//! | CR    | prediction agreement, sample vs. prototype | yes      |
//! | CS    | prototype drift across reruns           | yes         |
//! | CN    | prototype drift under input noise       | yes         |
//! | CT    | mean inter-prototype distance           | no          |
//! | CC    | silhouette of prototypes in their clusters | no       |
//! | CP    | prototype count                         | no          |
//! | CF    | sample-to-prototype distance            | no          |
//! | IC    | fraction of clusters with a representative prototype | no |
//! | CLS   | silhouette of cluster centroids         | no          |
//!
//! Every score lies in [0, 1] except raw CT, which is a distance.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, ModelChannel};
use crate::clustering::{silhouette_from_means, ClusterError, ClusterModel, PrototypeAssignment};
use crate::data::{average_row_range, InputDataset, LatentDataset, Matrix, PrototypeSet};
use crate::distance::{euclidean, mean_distance, nearest};
use crate::par::{map_range, map_slice_mut, Execution};
use crate::seed;

/// Default compactness normalization; ten prototypes score about one half.
pub const COMPACTNESS_A_NORMALIZE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least {needed} prototypes, got {got}")]
    TooFewPrototypes { needed: usize, got: usize },
    #[error("silhouette needs at least two clusters")]
    NoOtherCluster,
    #[error("prototype count mismatch: {0}")]
    PrototypeCountMismatch(String),
    #[error("total needs exactly nine scores, got {0}")]
    WrongArity(usize),
    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Gaussian input perturbation for continuity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// σ as a fraction of the average per-sample value range.
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Divide CT by the diameter of latents ∪ prototypes.
    pub ct_normalized: bool,
    /// Map silhouettes from [-1, 1] to [0, 1] for CC and CLS.
    pub silhouette_rescale: bool,
    pub a_normalize: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            ct_normalized: false,
            silhouette_rescale: true,
            a_normalize: COMPACTNESS_A_NORMALIZE,
            exec: Execution::default(),
        }
    }
}

/// Everything the geometric scores read.
#[derive(Clone, Copy, Debug)]
pub struct MetricContext<'a> {
    pub latent: &'a LatentDataset,
    pub proto: &'a PrototypeSet,
    pub cm: &'a ClusterModel,
    pub assignment: &'a PrototypeAssignment,
    pub options: &'a MetricOptions,
}

impl<'a> MetricContext<'a> {
    pub fn new(
        latent: &'a LatentDataset,
        proto: &'a PrototypeSet,
        cm: &'a ClusterModel,
        assignment: &'a PrototypeAssignment,
        options: &'a MetricOptions,
    ) -> Result<Self, MetricError> {
        if assignment.point_to_proto.len() != latent.len()
            || assignment.proto_to_cluster.len() != proto.len()
            || cm.assignments.len() != latent.len()
        {
            return Err(MetricError::DimensionMismatch(
                "assignment tables do not match the dataset / prototype sizes".into(),
            ));
        }
        if proto.dim() != latent.dim() {
            return Err(MetricError::DimensionMismatch(format!(
                "prototype width {} vs latent width {}",
                proto.dim(),
                latent.dim()
            )));
        }
        Ok(MetricContext {
            latent,
            proto,
            cm,
            assignment,
            options,
        })
    }

    fn exec(&self) -> Execution {
        self.options.exec
    }

    fn rescale(&self, s: f64) -> f64 {
        if self.options.silhouette_rescale {
            (s + 1.0) / 2.0
        } else {
            s
        }
    }
}

/// Fidelity: share of samples whose reconstruction `h(f(g(z_i)))` is
/// predicted like the reconstruction of their nearest prototype.
pub fn correctness(ctx: &MetricContext<'_>, channel: &mut ModelChannel) -> Result<f64, MetricError> {
    check_latent_width(channel, ctx.latent.dim())?;
    let sample_pred = predict_reconstruction(channel, &ctx.latent.vectors)?;
    let proto_pred = predict_reconstruction(channel, &ctx.proto.prototypes)?;
    let hits = sample_pred
        .iter()
        .zip(&ctx.assignment.point_to_proto)
        .filter(|(&y, &j)| proto_pred[j] == y)
        .count();
    Ok(hits as f64 / ctx.latent.len() as f64)
}

fn predict_reconstruction(ch: &mut ModelChannel, latents: &Matrix) -> Result<Vec<usize>, MetricError> {
    let x = ch.decode(latents)?;
    let z = ch.encode(&x)?;
    Ok(ch.classify(&z)?)
}

fn check_latent_width(ch: &ModelChannel, width: usize) -> Result<(), MetricError> {
    if ch.latent_dim() != width {
        return Err(MetricError::DimensionMismatch(format!(
            "channel latent dim {} vs data width {width}",
            ch.latent_dim()
        )));
    }
    Ok(())
}

/// A model trained under the same conditions as the base model.
#[derive(Debug)]
pub struct RerunModel {
    pub prototypes: PrototypeSet,
    pub channel: ModelChannel,
}

/// Decodes each rerun's prototypes with its own decoder (reruns run
/// concurrently), then re-encodes them with the base encoder.
pub fn reencode_rerun_prototypes(
    base_channel: &mut ModelChannel,
    reruns: &mut [RerunModel],
    exec: Execution,
) -> Result<Vec<Matrix>, MetricError> {
    let input_dim = base_channel.input_dim();
    let decoded = map_slice_mut(exec, reruns, |_, r| r.channel.decode(&r.prototypes.prototypes))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    decoded
        .iter()
        .map(|x| {
            if x.ncols() != input_dim {
                return Err(MetricError::DimensionMismatch(format!(
                    "rerun decodes to width {}, base input dim is {input_dim}",
                    x.ncols()
                )));
            }
            Ok(base_channel.encode(x)?)
        })
        .collect()
}

/// Consistency from prototypes already living in the base latent space.
///
/// Each base prototype is matched to the nearest prototype of every rerun
/// (ties to the lowest index); `CS = exp(-mean matched distance)` over
/// `M · N_R` pairs.
pub fn consistency_from_reencoded(base: &Matrix, reruns: &[Matrix]) -> Result<f64, MetricError> {
    if reruns.is_empty() {
        return Err(MetricError::PrototypeCountMismatch("no rerun models".into()));
    }
    let mut total = 0.0;
    for (r, q) in reruns.iter().enumerate() {
        if q.nrows() == 0 {
            return Err(MetricError::PrototypeCountMismatch(format!("rerun {r} has no prototypes")));
        }
        if q.ncols() != base.ncols() {
            return Err(MetricError::DimensionMismatch(format!(
                "rerun {r} prototypes have width {}, base {}",
                q.ncols(),
                base.ncols()
            )));
        }
        for p in base.rows() {
            total += nearest(p, q.rows()).expect("non-empty").1;
        }
    }
    Ok((-total / (base.nrows() * reruns.len()) as f64).exp())
}

/// Consistency of the base prototypes against rerun models.
pub fn consistency(
    base_proto: &PrototypeSet,
    base_channel: &mut ModelChannel,
    reruns: &mut [RerunModel],
    exec: Execution,
) -> Result<f64, MetricError> {
    if reruns.is_empty() {
        return Err(MetricError::PrototypeCountMismatch("no rerun models".into()));
    }
    let reencoded = reencode_rerun_prototypes(base_channel, reruns, exec)?;
    consistency_from_reencoded(&base_proto.prototypes, &reencoded)
}

/// `x + ε`, `ε ~ N(0, σ²I)` with σ = `sigma_fraction` × average sample range.
pub fn perturb(samples: &Matrix, noise: &NoiseConfig) -> Result<Matrix, MetricError> {
    if !(noise.sigma_fraction >= 0.0) || !noise.sigma_fraction.is_finite() {
        return Err(MetricError::InvalidNoise(format!(
            "sigma_fraction must be finite and >= 0, got {}",
            noise.sigma_fraction
        )));
    }
    let sigma = noise.sigma_fraction * average_row_range(samples);
    let mut out = samples.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| MetricError::InvalidNoise(e.to_string()))?;
    let mut rng = seed::rng(noise.seed, &[seed::STAGE_CONTINUITY]);
    for i in 0..out.nrows() {
        for v in out.row_mut(i) {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Continuity from clean and perturbed latents:
/// `exp(-mean ‖p(z_i) − p(z'_i)‖)` with `p` the nearest prototype.
pub fn continuity_from_latents(
    clean: &Matrix,
    noised: &Matrix,
    proto: &PrototypeSet,
    exec: Execution,
) -> Result<f64, MetricError> {
    if clean.nrows() != noised.nrows() || clean.ncols() != noised.ncols() {
        return Err(MetricError::DimensionMismatch("clean and noised latents differ in shape".into()));
    }
    let dists = map_range(exec, clean.nrows(), |i| {
        let (a, _) = nearest(clean.row(i), proto.prototypes.rows()).expect("M >= 1");
        let (b, _) = nearest(noised.row(i), proto.prototypes.rows()).expect("M >= 1");
        euclidean(proto.get(a), proto.get(b))
    });
    Ok((-dists.iter().sum::<f64>() / clean.nrows() as f64).exp())
}

/// Continuity: perturb the inputs, re-encode, compare nearest prototypes.
pub fn continuity(
    ctx: &MetricContext<'_>,
    channel: &mut ModelChannel,
    data: &InputDataset,
    noise: &NoiseConfig,
) -> Result<f64, MetricError> {
    if data.len() != ctx.latent.len() {
        return Err(MetricError::DimensionMismatch(format!(
            "{} samples vs {} latents",
            data.len(),
            ctx.latent.len()
        )));
    }
    check_latent_width(channel, ctx.latent.dim())?;
    let noised = perturb(&data.samples, noise)?;
    let noised_latent = channel.encode(&noised)?;
    continuity_from_latents(&ctx.latent.vectors, &noised_latent, ctx.proto, ctx.exec())
}

/// Mean distance over ordered prototype pairs (equal to the unordered mean).
pub fn contrastivity_raw(proto: &PrototypeSet) -> Result<f64, MetricError> {
    let m = proto.len();
    if m < 2 {
        return Err(MetricError::TooFewPrototypes { needed: 2, got: m });
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            sum += euclidean(proto.get(i), proto.get(j));
        }
    }
    Ok(sum / (m * (m - 1) / 2) as f64)
}

/// Largest pairwise distance within latents ∪ prototypes.
pub fn diameter(latent: &Matrix, proto: &Matrix, exec: Execution) -> f64 {
    let mut all = latent.clone();
    all.append(proto).expect("same width");
    map_range(exec, all.nrows(), |i| {
        let zi = all.row(i);
        (i + 1..all.nrows())
            .map(|j| euclidean(zi, all.row(j)))
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn contrastivity(ctx: &MetricContext<'_>) -> Result<f64, MetricError> {
    let raw = contrastivity_raw(ctx.proto)?;
    if !ctx.options.ct_normalized {
        return Ok(raw);
    }
    let diam = diameter(&ctx.latent.vectors, &ctx.proto.prototypes, ctx.exec());
    Ok(if diam > 0.0 { raw / diam } else { 0.0 })
}

/// Distance sums and member counts from `z` to each cluster, in one pass.
fn cluster_distance_sums(z: &[f64], latent: &Matrix, assignments: &[usize], k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in latent.rows().zip(assignments) {
        sums[c] += euclidean(z, p);
        counts[c] += 1;
    }
    (sums, counts)
}

/// Silhouette of an outside point `z` treated as a member of `own`.
fn silhouette_against_clusters(
    z: &[f64],
    own: usize,
    latent: &Matrix,
    assignments: &[usize],
    k: usize,
) -> Result<f64, MetricError> {
    let (sums, counts) = cluster_distance_sums(z, latent, assignments, k);
    let a_near = (0..k)
        .filter(|&c| c != own && counts[c] > 0)
        .map(|c| sums[c] / counts[c] as f64)
        .fold(None, |b: Option<f64>, d| Some(b.map_or(d, |b| b.min(d))))
        .ok_or(MetricError::NoOtherCluster)?;
    let a_own = if counts[own] > 0 {
        sums[own] / counts[own] as f64
    } else {
        0.0
    };
    Ok(silhouette_from_means(a_own, a_near))
}

/// Covariate complexity: mean silhouette of each prototype placed into the
/// cluster with the nearest centroid.
pub fn covariate_complexity(ctx: &MetricContext<'_>) -> Result<f64, MetricError> {
    let k = ctx.cm.num_clusters();
    if k < 2 {
        return Err(MetricError::NoOtherCluster);
    }
    let scores = map_range(ctx.exec(), ctx.proto.len(), |j| {
        silhouette_against_clusters(
            ctx.proto.get(j),
            ctx.assignment.proto_to_cluster[j],
            &ctx.latent.vectors,
            &ctx.cm.assignments,
            k,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(ctx.rescale(mean))
}

/// `exp((1 − M) · a_normalize)`.
pub fn compactness(num_prototypes: usize, a_normalize: f64) -> f64 {
    ((1.0 - num_prototypes as f64) * a_normalize).exp()
}

/// `exp(-mean distance from each latent to its nearest prototype)`.
pub fn confidence(ctx: &MetricContext<'_>) -> Result<f64, MetricError> {
    let n = ctx.latent.len();
    let sum: f64 = map_range(ctx.exec(), n, |i| {
        euclidean(
            ctx.latent.vectors.row(i),
            ctx.proto.get(ctx.assignment.point_to_proto[i]),
        )
    })
    .iter()
    .sum();
    Ok((-sum / n as f64).exp())
}

/// Fraction of clusters with some prototype strictly closer to the
/// centroid than the cluster's mean member-to-centroid distance.
pub fn input_completeness(ctx: &MetricContext<'_>) -> Result<f64, MetricError> {
    let k = ctx.cm.num_clusters();
    if k == 0 {
        return Err(MetricError::NoOtherCluster);
    }
    let members = ctx.cm.members();
    let represented = (0..k)
        .filter(|&c| {
            let mu = ctx.cm.centroids.row(c);
            let spread = mean_distance(mu, members[c].iter().map(|&i| ctx.latent.vectors.row(i)));
            ctx.proto.prototypes.rows().any(|p| euclidean(p, mu) < spread)
        })
        .count();
    Ok(represented as f64 / k as f64)
}

/// Cohesion of latent space: mean silhouette of the cluster centroids,
/// each scored against its own members and every other cluster.
pub fn cohesion_latent_space(ctx: &MetricContext<'_>) -> Result<f64, MetricError> {
    let k = ctx.cm.num_clusters();
    if k < 2 {
        return Err(MetricError::NoOtherCluster);
    }
    let scores = map_range(ctx.exec(), k, |c| {
        silhouette_against_clusters(
            ctx.cm.centroids.row(c),
            c,
            &ctx.latent.vectors,
            &ctx.cm.assignments,
            k,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(ctx.rescale(scores.iter().sum::<f64>() / k as f64))
}

/// Equal-weight mean of exactly nine finite scores.
pub fn total_score(scores: &[f64]) -> Result<f64, MetricError> {
    if scores.len() != 9 {
        return Err(MetricError::WrongArity(scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(i));
    }
    Ok(scores.iter().sum::<f64>() / 9.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::server::LoopbackTransport;
    use crate::adapter::toy::ToyLinearModel;
    use crate::adapter::ChannelOptions;
    use crate::clustering::assign_prototypes;

    fn m(cols: usize, rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(cols, rows).unwrap()
    }

    struct Fixture {
        latent: LatentDataset,
        proto: PrototypeSet,
        cm: ClusterModel,
        assign: PrototypeAssignment,
        opts: MetricOptions,
    }

    impl Fixture {
        fn new(latent: Matrix, labels: Vec<usize>, clusters: Vec<usize>, cluster_class: Vec<usize>, protos: Matrix) -> Self {
            let latent = LatentDataset::new(latent, labels, None).unwrap();
            let cm = ClusterModel::from_assignments(&latent, clusters, cluster_class).unwrap();
            let proto = PrototypeSet::new(protos, None).unwrap();
            let assign = assign_prototypes(&proto, &cm, &latent).unwrap();
            Fixture {
                latent,
                proto,
                cm,
                assign,
                opts: MetricOptions::default(),
            }
        }

        fn ctx(&self) -> MetricContext<'_> {
            MetricContext::new(&self.latent, &self.proto, &self.cm, &self.assign, &self.opts).unwrap()
        }
    }

    fn identity_channel(d: usize, protos: &Matrix, classes: Vec<usize>) -> ModelChannel {
        let model = ToyLinearModel::identity(d, protos.clone(), classes).unwrap();
        ModelChannel::connect(Box::new(LoopbackTransport::new(model)), ChannelOptions::default()).unwrap()
    }

    #[test]
    fn compactness_published_values() {
        assert_eq!(compactness(1, 0.08), 1.0);
        let cp4 = compactness(4, 0.08);
        assert!((cp4 - (-0.24f64).exp()).abs() < 1e-15);
        assert_eq!(format!("{cp4:.2}"), "0.79");
        let cp10 = compactness(10, 0.08);
        assert!((cp10 - 0.4868).abs() < 1e-4);
    }

    #[test]
    fn total_score_published_rows() {
        let map = [0.69, 0.28, 0.98, 0.43, 0.68, 0.79, 0.67, 0.67, 0.63];
        let msp = [1.00, 0.37, 1.00, 0.49, 0.50, 0.79, 0.55, 0.00, 0.60];
        assert!((total_score(&map).unwrap() - 0.6467).abs() < 1e-4);
        assert!((total_score(&msp).unwrap() - 0.5889).abs() < 1e-4);
        assert_eq!(total_score(&[1.0; 9]).unwrap(), 1.0);
        assert!(matches!(total_score(&[1.0; 8]), Err(MetricError::WrongArity(8))));
        let mut bad = [0.5; 9];
        bad[4] = f64::NAN;
        assert!(matches!(total_score(&bad), Err(MetricError::NonFiniteScore(4))));
    }

    #[test]
    fn contrastivity_cases() {
        let p = PrototypeSet::new(m(2, &[&[0.0, 0.0], &[3.0, 4.0]]), None).unwrap();
        assert_eq!(contrastivity_raw(&p).unwrap(), 5.0);
        let same = PrototypeSet::new(m(2, &[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]), None).unwrap();
        assert_eq!(contrastivity_raw(&same).unwrap(), 0.0);
        let one = PrototypeSet::new(m(2, &[&[1.0, 1.0]]), None).unwrap();
        assert!(matches!(contrastivity_raw(&one), Err(MetricError::TooFewPrototypes { .. })));
    }

    #[test]
    fn contrastivity_normalized_by_diameter() {
        let f = Fixture::new(
            m(1, &[&[0.0], &[1.0], &[9.0], &[10.0]]),
            vec![0; 4],
            vec![0, 0, 1, 1],
            vec![0, 0],
            m(1, &[&[0.5], &[9.5]]),
        );
        let mut f = f;
        f.opts.ct_normalized = true;
        assert!((contrastivity(&f.ctx()).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn confidence_closed_forms() {
        let f = Fixture::new(
            m(1, &[&[0.0], &[0.0], &[5.0]]),
            vec![0; 3],
            vec![0, 0, 1],
            vec![0, 0],
            m(1, &[&[0.0], &[5.0]]),
        );
        assert_eq!(confidence(&f.ctx()).unwrap(), 1.0);
        let ln2 = std::f64::consts::LN_2;
        let f = Fixture::new(
            m(1, &[&[ln2], &[-ln2], &[10.0 + ln2]]),
            vec![0; 3],
            vec![0, 0, 1],
            vec![0, 0],
            m(1, &[&[0.0], &[10.0]]),
        );
        assert!((confidence(&f.ctx()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_completeness_counts_strictly_inside_spread() {
        // clusters: {0,2} centroid 1 spread 1; {10,12} centroid 11 spread 1
        let pts = m(1, &[&[0.0], &[2.0], &[10.0], &[12.0]]);
        let f = Fixture::new(pts.clone(), vec![0; 4], vec![0, 0, 1, 1], vec![0, 0], m(1, &[&[1.0], &[11.0]]));
        assert_eq!(input_completeness(&f.ctx()).unwrap(), 1.0);
        // prototype exactly at the spread boundary does not count
        let f = Fixture::new(pts.clone(), vec![0; 4], vec![0, 0, 1, 1], vec![0, 0], m(1, &[&[2.0], &[11.5]]));
        assert_eq!(input_completeness(&f.ctx()).unwrap(), 0.5);
        let f = Fixture::new(pts, vec![0; 4], vec![0, 0, 1, 1], vec![0, 0], m(1, &[&[100.0]]));
        assert_eq!(input_completeness(&f.ctx()).unwrap(), 0.0);
    }

    #[test]
    fn covariate_complexity_lone_point_cluster() {
        // far-away singleton cluster at 100 with prototype on it: s = 1
        let f = Fixture::new(
            m(1, &[&[0.0], &[1.0], &[100.0]]),
            vec![0; 3],
            vec![0, 0, 1],
            vec![0, 0],
            m(1, &[&[100.0]]),
        );
        assert_eq!(covariate_complexity(&f.ctx()).unwrap(), 1.0);
    }

    #[test]
    fn covariate_complexity_equidistant_is_half() {
        // prototype at 0 assigned to cluster {-2,-2}? nearest centroid is -2 vs 2: tie -> cluster 0
        let f = Fixture::new(
            m(1, &[&[-2.0], &[-2.0], &[2.0], &[2.0]]),
            vec![0; 4],
            vec![0, 0, 1, 1],
            vec![0, 0],
            m(1, &[&[0.0]]),
        );
        assert_eq!(f.assign.proto_to_cluster, vec![0]);
        assert_eq!(covariate_complexity(&f.ctx()).unwrap(), 0.5);
    }

    #[test]
    fn cohesion_limits() {
        let f = Fixture::new(
            m(1, &[&[0.0], &[1e-9], &[1e6], &[1e6 + 1e-9]]),
            vec![0; 4],
            vec![0, 0, 1, 1],
            vec![0, 0],
            m(1, &[&[0.0]]),
        );
        assert!((cohesion_latent_space(&f.ctx()).unwrap() - 1.0).abs() < 1e-9);
        // identical overlapping clusters: centroid equidistant -> s = 0 -> 0.5
        let f = Fixture::new(
            m(1, &[&[-1.0], &[1.0], &[-1.0], &[1.0]]),
            vec![0; 4],
            vec![0, 0, 1, 1],
            vec![0, 0],
            m(1, &[&[0.0]]),
        );
        assert_eq!(cohesion_latent_space(&f.ctx()).unwrap(), 0.5);
        let mut f = f;
        f.opts.silhouette_rescale = false;
        assert_eq!(cohesion_latent_space(&f.ctx()).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_has_no_silhouette() {
        let f = Fixture::new(m(1, &[&[0.0], &[1.0]]), vec![0; 2], vec![0, 0], vec![0], m(1, &[&[0.0]]));
        assert!(matches!(cohesion_latent_space(&f.ctx()), Err(MetricError::NoOtherCluster)));
        assert!(matches!(covariate_complexity(&f.ctx()), Err(MetricError::NoOtherCluster)));
    }

    #[test]
    fn consistency_closed_forms() {
        let base = m(2, &[&[0.0, 0.0], &[10.0, 0.0]]);
        assert_eq!(consistency_from_reencoded(&base, &[base.clone()]).unwrap(), 1.0);
        let ln2 = std::f64::consts::LN_2;
        let shifted = m(2, &[&[0.0, ln2], &[10.0, ln2]]);
        assert!((consistency_from_reencoded(&base, &[shifted]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            consistency_from_reencoded(&base, &[]),
            Err(MetricError::PrototypeCountMismatch(_))
        ));
        // fewer rerun prototypes: the missing pair uses the nearest available
        let one = m(2, &[&[0.0, 0.0]]);
        assert!((consistency_from_reencoded(&base, &[one]).unwrap() - (-5.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn consistency_with_base_as_rerun_is_one() {
        let protos = m(2, &[&[0.0, 0.0], &[4.0, 1.0]]);
        let p = PrototypeSet::new(protos.clone(), None).unwrap();
        let mut base = identity_channel(2, &protos, vec![0, 1]);
        let mut reruns = vec![RerunModel {
            prototypes: p.clone(),
            channel: identity_channel(2, &protos, vec![0, 1]),
        }];
        assert_eq!(consistency(&p, &mut base, &mut reruns, Execution::Sequential).unwrap(), 1.0);
        assert!(matches!(
            consistency(&p, &mut base, &mut [], Execution::Sequential),
            Err(MetricError::PrototypeCountMismatch(_))
        ));
    }

    #[test]
    fn correctness_is_agreement_fraction() {
        let protos = m(1, &[&[0.0], &[10.0]]);
        let f = Fixture::new(
            m(1, &[&[0.1], &[0.2], &[9.9], &[10.1]]),
            vec![0, 0, 1, 1],
            vec![0, 0, 1, 1],
            vec![0, 1],
            protos.clone(),
        );
        let mut ch = identity_channel(1, &protos, vec![0, 1]);
        assert_eq!(correctness(&f.ctx(), &mut ch).unwrap(), 1.0);
        // a single prototype at 10 is predicted as class 1; half the samples disagree
        let lone = m(1, &[&[10.0]]);
        let f = Fixture::new(
            m(1, &[&[0.1], &[0.2], &[9.9], &[10.1]]),
            vec![0, 0, 1, 1],
            vec![0, 0, 1, 1],
            vec![0, 1],
            lone,
        );
        assert_eq!(correctness(&f.ctx(), &mut ch).unwrap(), 0.5);
    }

    #[test]
    fn continuity_zero_noise_is_one() {
        let protos = m(1, &[&[0.0], &[10.0]]);
        let pts = m(1, &[&[0.1], &[4.9], &[5.1], &[10.0]]);
        let f = Fixture::new(pts.clone(), vec![0, 0, 1, 1], vec![0, 0, 1, 1], vec![0, 1], protos.clone());
        let data = InputDataset::new(pts, vec![0, 0, 1, 1], None).unwrap();
        let mut ch = identity_channel(1, &protos, vec![0, 1]);
        let noise = NoiseConfig {
            sigma_fraction: 0.0,
            seed: 1,
        };
        assert_eq!(continuity(&f.ctx(), &mut ch, &data, &noise).unwrap(), 1.0);
    }

    #[test]
    fn continuity_half_flipped_is_exp_minus_five() {
        let protos = PrototypeSet::new(m(1, &[&[0.0], &[10.0]]), None).unwrap();
        let clean = m(1, &[&[1.0], &[2.0], &[8.0], &[9.0]]);
        let noised = m(1, &[&[1.0], &[6.0], &[4.0], &[9.0]]);
        let cn = continuity_from_latents(&clean, &noised, &protos, Execution::Sequential).unwrap();
        assert!((cn - (-5.0f64).exp()).abs() < 1e-15);
        assert!((cn - 0.0067).abs() < 1e-4);
    }

    #[test]
    fn perturb_is_seeded_and_scaled() {
        let x = m(2, &[&[0.0, 2.0], &[1.0, 3.0]]);
        let cfg = NoiseConfig {
            sigma_fraction: 0.05,
            seed: 3,
        };
        let a = perturb(&x, &cfg).unwrap();
        assert_eq!(a, perturb(&x, &cfg).unwrap());
        assert_ne!(a, x);
        assert!(perturb(&x, &NoiseConfig { sigma_fraction: -1.0, seed: 0 }).is_err());
    }
}
