//! Seeded data generators: a two-class sawtooth / sine time-series set and
//! planted Gaussian blobs in latent space with prototypes at the centers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterError, ClusterModel};
use crate::data::{DataError, InputDataset, LatentDataset, Matrix, PrototypeSet};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseShape {
    RisingSawtooth,
    FallingSawtooth,
    Sine,
    ShiftedSine,
}

impl BaseShape {
    pub const ALL: [BaseShape; 4] = [
        BaseShape::RisingSawtooth,
        BaseShape::FallingSawtooth,
        BaseShape::Sine,
        BaseShape::ShiftedSine,
    ];

    pub fn class(self) -> usize {
        match self {
            BaseShape::RisingSawtooth | BaseShape::FallingSawtooth => 0,
            BaseShape::Sine | BaseShape::ShiftedSine => 1,
        }
    }

    /// Unit-amplitude series with two periods over `len` steps.
    pub fn series(self, len: usize) -> Vec<f64> {
        use std::f64::consts::{FRAC_PI_2, TAU};
        (0..len)
            .map(|i| {
                let t = 2.0 * i as f64 / len as f64;
                match self {
                    BaseShape::RisingSawtooth => 2.0 * t.fract() - 1.0,
                    BaseShape::FallingSawtooth => 1.0 - 2.0 * t.fract(),
                    BaseShape::Sine => (TAU * t).sin(),
                    BaseShape::ShiftedSine => (TAU * t + FRAC_PI_2).sin(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SawsineConfig {
    pub num_samples: usize,
    pub series_length: usize,
    /// Upper bound of the per-sample noise amplitudes.
    pub noise_amp_max: f64,
    pub seed: u64,
}

impl Default for SawsineConfig {
    fn default() -> Self {
        SawsineConfig {
            num_samples: 8000,
            series_length: 100,
            noise_amp_max: 1.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SawsineData {
    pub dataset: InputDataset,
    /// Base shape of each sample.
    pub shapes: Vec<BaseShape>,
}

/// Class 0 (first half) alternates the two sawtooths, class 1 the two
/// sines. Each sample is `base · (1 + m(t)) + a(t)` with `m(t) ~ U[-A_m, A_m]`,
/// `a(t) ~ U[-A_a, A_a]` and per-sample `A_m, A_a ~ U[0, noise_amp_max]`.
pub fn generate_sawsine(cfg: &SawsineConfig) -> Result<SawsineData, DataError> {
    if cfg.num_samples < 2 || cfg.num_samples % 2 != 0 {
        return Err(DataError::invalid("num_samples", format!("must be even and >= 2, got {}", cfg.num_samples)));
    }
    if cfg.series_length < 8 {
        return Err(DataError::invalid("series_length", format!("must be >= 8, got {}", cfg.series_length)));
    }
    if !(cfg.noise_amp_max >= 0.0) || !cfg.noise_amp_max.is_finite() {
        return Err(DataError::invalid("noise_amp_max", "must be finite and >= 0"));
    }
    let len = cfg.series_length;
    let bases: Vec<Vec<f64>> = BaseShape::ALL.iter().map(|s| s.series(len)).collect();
    let half = cfg.num_samples / 2;
    let mut rng = seed::rng(cfg.seed, &[seed::STAGE_SYNTHETIC, 0]);
    let mut samples = Matrix::zeros(cfg.num_samples, len);
    let mut shapes = Vec::with_capacity(cfg.num_samples);
    let mut labels = Vec::with_capacity(cfg.num_samples);
    for i in 0..cfg.num_samples {
        let class = usize::from(i >= half);
        let shape = BaseShape::ALL[2 * class + i % 2];
        let base = &bases[2 * class + i % 2];
        let amp_m = rng.random_range(0.0..=cfg.noise_amp_max);
        let amp_a = rng.random_range(0.0..=cfg.noise_amp_max);
        for (x, &b) in samples.row_mut(i).iter_mut().zip(base) {
            let m = rng.random_range(-amp_m..=amp_m);
            let a = rng.random_range(-amp_a..=amp_a);
            *x = b * (1.0 + m) + a;
        }
        shapes.push(shape);
        labels.push(class);
    }
    let ids = (0..cfg.num_samples).map(|i| format!("sawsine-{i}")).collect();
    Ok(SawsineData {
        dataset: InputDataset::new(samples, labels, Some(ids))?,
        shapes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedLatentConfig {
    pub num_classes: usize,
    pub clusters_per_class: usize,
    pub points_per_cluster: usize,
    pub cluster_sigma: f64,
    /// Grid spacing between neighbouring blob centers.
    pub separation: f64,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for PlantedLatentConfig {
    fn default() -> Self {
        PlantedLatentConfig {
            num_classes: 2,
            clusters_per_class: 2,
            points_per_cluster: 100,
            cluster_sigma: 0.05,
            separation: 0.5,
            latent_dim: 2,
            seed: 0,
        }
    }
}

impl PlantedLatentConfig {
    pub fn num_clusters(&self) -> usize {
        self.num_classes * self.clusters_per_class
    }

    /// Center of blob `c` on a grid with the smallest side that fits.
    pub fn center(&self, c: usize) -> Vec<f64> {
        let side = grid_side(self.num_clusters(), self.latent_dim);
        let mut rest = c;
        (0..self.latent_dim)
            .map(|_| {
                let digit = rest % side;
                rest /= side;
                digit as f64 * self.separation
            })
            .collect()
    }
}

fn grid_side(k: usize, dim: usize) -> usize {
    let mut side = 1usize;
    while side.checked_pow(dim as u32).is_some_and(|v| v < k) {
        side += 1;
    }
    side
}

#[derive(Debug, thiserror::Error)]
pub enum PlantedError {
    #[error("invalid planted config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Gaussian blobs on a grid; blob `c` belongs to class `c / clusters_per_class`.
/// Returns latents, one prototype per blob at its exact center (with the
/// blob's class as hint), and the ground-truth clustering.
pub fn generate_planted_latent(
    cfg: &PlantedLatentConfig,
) -> Result<(LatentDataset, PrototypeSet, ClusterModel), PlantedError> {
    if cfg.num_classes == 0 || cfg.clusters_per_class == 0 || cfg.points_per_cluster == 0 || cfg.latent_dim == 0 {
        return Err(PlantedError::Invalid("counts and latent_dim must be positive".into()));
    }
    if !(cfg.cluster_sigma >= 0.0) || !cfg.separation.is_finite() || cfg.separation <= 0.0 {
        return Err(PlantedError::Invalid("need cluster_sigma >= 0 and separation > 0".into()));
    }
    let k = cfg.num_clusters();
    let n = k * cfg.points_per_cluster;
    let centers: Vec<Vec<f64>> = (0..k).map(|c| cfg.center(c)).collect();
    let cluster_class: Vec<usize> = (0..k).map(|c| c / cfg.clusters_per_class).collect();
    let normal = Normal::new(0.0, cfg.cluster_sigma).map_err(|e| PlantedError::Invalid(e.to_string()))?;
    let mut rng = seed::rng(cfg.seed, &[seed::STAGE_SYNTHETIC, 1]);
    let mut vectors = Matrix::zeros(n, cfg.latent_dim);
    let mut labels = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    for c in 0..k {
        for p in 0..cfg.points_per_cluster {
            let row = vectors.row_mut(c * cfg.points_per_cluster + p);
            for (v, mu) in row.iter_mut().zip(&centers[c]) {
                *v = mu + normal.sample(&mut rng);
            }
            labels.push(cluster_class[c]);
            assignments.push(c);
        }
    }
    let latent = LatentDataset::new(vectors, labels, None)?;
    let proto = PrototypeSet::new(Matrix::from_rows(cfg.latent_dim, &centers)?, Some(cluster_class.clone()))?;
    let truth = ClusterModel::from_assignments(&latent, assignments, cluster_class)?;
    Ok((latent, proto, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sawsine_is_balanced() {
        let d = generate_sawsine(&SawsineConfig::default()).unwrap();
        assert_eq!(d.dataset.len(), 8000);
        assert_eq!(d.dataset.dim(), 100);
        assert_eq!(d.dataset.labels.iter().filter(|&&l| l == 0).count(), 4000);
        for (s, &l) in d.shapes.iter().zip(&d.dataset.labels) {
            assert_eq!(s.class(), l);
        }
    }

    #[test]
    fn noiseless_sawsine_reproduces_base_shapes() {
        let cfg = SawsineConfig {
            num_samples: 40,
            series_length: 16,
            noise_amp_max: 0.0,
            seed: 9,
        };
        let d = generate_sawsine(&cfg).unwrap();
        for (i, s) in d.shapes.iter().enumerate() {
            assert_eq!(d.dataset.samples.row(i), s.series(16).as_slice());
        }
        assert_eq!(
            d.shapes.iter().collect::<std::collections::BTreeSet<_>>().len(),
            4
        );
    }

    #[test]
    fn sawsine_is_seeded() {
        let cfg = SawsineConfig {
            num_samples: 20,
            series_length: 8,
            noise_amp_max: 1.1,
            seed: 1,
        };
        assert_eq!(generate_sawsine(&cfg).unwrap(), generate_sawsine(&cfg).unwrap());
        let other = SawsineConfig { seed: 2, ..cfg.clone() };
        assert_ne!(generate_sawsine(&cfg).unwrap(), generate_sawsine(&other).unwrap());
        assert!(generate_sawsine(&SawsineConfig { num_samples: 3, ..cfg.clone() }).is_err());
        assert!(generate_sawsine(&SawsineConfig { series_length: 7, ..cfg }).is_err());
    }

    #[test]
    fn base_shapes_are_unit_amplitude() {
        for s in BaseShape::ALL {
            let v = s.series(100);
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            assert!(hi <= 1.0 + 1e-12 && lo >= -1.0 - 1e-12);
            assert!(hi - lo > 1.9, "{s:?}");
        }
    }

    #[test]
    fn planted_centers_are_separated() {
        let cfg = PlantedLatentConfig {
            num_classes: 3,
            clusters_per_class: 3,
            latent_dim: 2,
            ..Default::default()
        };
        let centers: Vec<_> = (0..9).map(|c| cfg.center(c)).collect();
        for i in 0..9 {
            for j in i + 1..9 {
                assert!(crate::distance::euclidean(&centers[i], &centers[j]) >= cfg.separation - 1e-12);
            }
        }
        assert_eq!(grid_side(4, 2), 2);
        assert_eq!(grid_side(5, 2), 3);
        assert_eq!(grid_side(1, 3), 1);
    }

    #[test]
    fn zero_sigma_puts_points_on_prototypes() {
        let cfg = PlantedLatentConfig {
            cluster_sigma: 0.0,
            points_per_cluster: 5,
            ..Default::default()
        };
        let (latent, proto, truth) = generate_planted_latent(&cfg).unwrap();
        assert_eq!(latent.len(), 20);
        assert_eq!(proto.class_hint.as_deref(), Some(&[0, 0, 1, 1][..]));
        assert_eq!(truth.centroids, proto.prototypes);
        for i in 0..20 {
            assert_eq!(latent.vectors.row(i), proto.get(truth.assignments[i]));
        }
    }
}
