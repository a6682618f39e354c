//! End-to-end runs: encode, cluster per class, assign prototypes, score.
//! Also the outlier study and rerun-consistency campaigns.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapter::{self, AdapterDescriptor, AdapterError, ChannelOptions, ModelChannel};
use crate::clustering::{assign_prototypes, build_cluster_model, ClusterError, KMeansConfig};
use crate::data::{
    average_row_range, load_prototypes, DataError, InputDataset, LatentDataset, MetricScores,
    PrototypeSet, RunContext, ScoreReport,
};
use crate::metrics::{self, MetricContext, MetricError, MetricOptions, NoiseConfig, RerunModel};
use crate::par::Execution;
use crate::seed;

/// Which kind of component failed inside a stage.
#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct ExperimentError {
    pub stage: &'static str,
    #[source]
    pub source: StageFailure,
}

impl ExperimentError {
    fn new(stage: &'static str, source: impl Into<StageFailure>) -> Self {
        ExperimentError {
            stage,
            source: source.into(),
        }
    }

    /// True when the root cause is the model adapter or its protocol.
    pub fn is_adapter(&self) -> bool {
        matches!(
            self.source,
            StageFailure::Adapter(_) | StageFailure::Metric(MetricError::Adapter(_))
        )
    }
}

fn at<E: Into<StageFailure>>(stage: &'static str) -> impl FnOnce(E) -> ExperimentError {
    move |e| ExperimentError::new(stage, e)
}

/// One rerun model: its prototype file and how to reach it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerunSpec {
    pub prototypes: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_cmd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub reruns: Vec<RerunSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kmeans: KMeansConfig,
    pub noise: NoiseConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyConfig>,
    pub metric_flags: MetricOptions,
    /// Master seed; the k-means and noise seeds are derived from it.
    pub seed: u64,
    /// Adds per-stage wall-clock seconds to the report (not deterministic).
    pub record_timings: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kmeans: KMeansConfig::default(),
            noise: NoiseConfig::default(),
            consistency: None,
            metric_flags: MetricOptions::default(),
            seed: 0,
            record_timings: false,
            exec: Execution::default(),
        }
    }
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            ..Default::default()
        }
    }

    /// Copy with derived sub-seeds and the execution mode pushed down.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.kmeans.seed = seed::derive(self.seed, &[seed::STAGE_KMEANS]);
        cfg.kmeans.exec = self.exec;
        cfg.noise.seed = seed::derive(self.seed, &[seed::STAGE_CONTINUITY]);
        cfg.metric_flags.exec = self.exec;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Hex SHA-256 of the resolved config's canonical JSON.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.resolved()).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Caller-supplied facts shown next to the scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMeta {
    pub label: Option<String>,
    pub val_loss: Option<f64>,
}

/// Opens the rerun models listed in a consistency config.
pub fn open_reruns(cfg: &ConsistencyConfig, opts: ChannelOptions) -> Result<Vec<RerunModel>, ExperimentError> {
    cfg.reruns
        .iter()
        .map(|rerun| {
            let desc = match (&rerun.adapter_cmd, &rerun.replay) {
                (Some(cmd), None) => AdapterDescriptor::command_line(cmd).map_err(at("reruns"))?,
                (None, Some(path)) => AdapterDescriptor::Replay(path.clone()),
                _ => {
                    return Err(ExperimentError::new(
                        "reruns",
                        StageFailure::Invalid("each rerun needs exactly one of adapter_cmd / replay".into()),
                    ))
                }
            };
            let prototypes = load_prototypes(&rerun.prototypes).map_err(at("reruns"))?;
            let channel = adapter::handshake_with(&desc, opts).map_err(at("reruns"))?;
            Ok(RerunModel { prototypes, channel })
        })
        .collect()
}

struct Clock {
    enabled: bool,
    entries: std::collections::BTreeMap<String, f64>,
    last: Instant,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Clock {
            enabled,
            entries: Default::default(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        if self.enabled {
            let now = Instant::now();
            self.entries
                .insert(stage.to_string(), now.duration_since(self.last).as_secs_f64());
            self.last = now;
        }
    }
}

/// Scores a prototype set against a model and dataset.
///
/// With no reruns, consistency compares the base model with itself
/// (decode then re-encode its own prototypes).
pub fn run_benchmark(
    data: &InputDataset,
    proto: &PrototypeSet,
    channel: &mut ModelChannel,
    reruns: &mut [RerunModel],
    cfg: &RunConfig,
    meta: &RunMeta,
) -> Result<ScoreReport, ExperimentError> {
    let cfg = cfg.resolved();
    let mut clock = Clock::new(cfg.record_timings);
    if channel.input_dim() != data.dim() || channel.latent_dim() != proto.dim() {
        return Err(ExperimentError::new(
            "validate",
            StageFailure::Invalid(format!(
                "adapter dims (input {}, latent {}) do not match dataset width {} / prototype width {}",
                channel.input_dim(),
                channel.latent_dim(),
                data.dim(),
                proto.dim()
            )),
        ));
    }

    let z = channel.encode(&data.samples).map_err(at("encode"))?;
    let latent = LatentDataset::from_encoded(data, z).map_err(at("encode"))?;
    clock.lap("encode");

    let cm = build_cluster_model(&latent, &cfg.kmeans).map_err(at("cluster"))?;
    let assignment = assign_prototypes(proto, &cm, &latent).map_err(at("assign"))?;
    clock.lap("cluster");

    let ctx = MetricContext::new(&latent, proto, &cm, &assignment, &cfg.metric_flags)
        .map_err(at("assign"))?;
    let exec = cfg.exec;

    let cr = metrics::correctness(&ctx, channel).map_err(at("correctness"))?;
    clock.lap("correctness");
    let cs = if reruns.is_empty() {
        channel
            .decode(&proto.prototypes)
            .and_then(|x| channel.encode(&x))
            .map_err(MetricError::from)
            .and_then(|q| metrics::consistency_from_reencoded(&proto.prototypes, &[q]))
    } else {
        metrics::consistency(proto, channel, reruns, exec)
    }
    .map_err(at("consistency"))?;
    clock.lap("consistency");
    let cn = metrics::continuity(&ctx, channel, data, &cfg.noise).map_err(at("continuity"))?;
    clock.lap("continuity");
    let ct = metrics::contrastivity(&ctx).map_err(at("contrastivity"))?;
    let cc = metrics::covariate_complexity(&ctx).map_err(at("covariate_complexity"))?;
    let cp = metrics::compactness(proto.len(), cfg.metric_flags.a_normalize);
    let cf = metrics::confidence(&ctx).map_err(at("confidence"))?;
    let ic = metrics::input_completeness(&ctx).map_err(at("input_completeness"))?;
    let cls = metrics::cohesion_latent_space(&ctx).map_err(at("cohesion"))?;
    clock.lap("geometry");

    let scores = MetricScores::from_array([cr, cs, cn, ct, cc, cp, cf, ic, cls]);
    let total = metrics::total_score(&scores.to_array()).map_err(at("total"))?;

    Ok(ScoreReport {
        run_label: meta.label.clone(),
        scores,
        total,
        val_loss: meta.val_loss,
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        engine_version: crate::ENGINE_VERSION.to_string(),
        context: RunContext {
            num_samples: data.len(),
            num_prototypes: proto.len(),
            num_clusters: cm.num_clusters(),
            per_class_k: cm.per_class_k.clone(),
            mean_silhouette: cm.mean_silhouette,
            consistency_reruns: reruns.len(),
            ct_normalized: cfg.metric_flags.ct_normalized,
            silhouette_rescale: cfg.metric_flags.silhouette_rescale,
        },
        clock: clock.entries,
    })
}

/// Consistency of the base prototypes against rerun models.
pub fn run_consistency_campaign(
    base_proto: &PrototypeSet,
    base_channel: &mut ModelChannel,
    reruns: &mut [RerunModel],
    cfg: &RunConfig,
) -> Result<f64, ExperimentError> {
    metrics::consistency(base_proto, base_channel, reruns, cfg.exec).map_err(at("consistency"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierConfig {
    /// Share of samples to perturb; `⌊fraction · N⌋` rows are chosen.
    pub fraction: f64,
    /// Outlier σ as a fraction of the average per-sample value range.
    pub magnitude_fraction: f64,
    pub seed: u64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            fraction: 0.03,
            magnitude_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierInjection {
    pub dataset: InputDataset,
    /// Sorted indices of the perturbed rows.
    pub modified_rows: Vec<usize>,
}

/// Adds i.i.d. Gaussian noise to every feature of a seeded random subset of
/// samples. Labels and ids are untouched.
pub fn inject_outliers(data: &InputDataset, cfg: &OutlierConfig) -> Result<OutlierInjection, ExperimentError> {
    let invalid = |msg: String| ExperimentError::new("outliers", StageFailure::Invalid(msg));
    if !(0.0..=1.0).contains(&cfg.fraction) {
        return Err(invalid(format!("fraction must lie in [0, 1], got {}", cfg.fraction)));
    }
    if !(cfg.magnitude_fraction >= 0.0) || !cfg.magnitude_fraction.is_finite() {
        return Err(invalid(format!(
            "magnitude_fraction must be finite and >= 0, got {}",
            cfg.magnitude_fraction
        )));
    }
    let count = (cfg.fraction * data.len() as f64).floor() as usize;
    if cfg.fraction > 0.0 && count == 0 {
        return Err(invalid(format!(
            "fraction {} selects no rows out of {}",
            cfg.fraction,
            data.len()
        )));
    }
    let mut rng = seed::rng(cfg.seed, &[seed::STAGE_OUTLIER]);
    let mut rows = index::sample(&mut rng, data.len(), count).into_vec();
    rows.sort_unstable();
    let sigma = cfg.magnitude_fraction * average_row_range(&data.samples);
    let mut out = data.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        for &i in &rows {
            for v in out.samples.row_mut(i) {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(OutlierInjection {
        dataset: out,
        modified_rows: rows,
    })
}

/// Paired clean / mixed runs with the same model and prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct OutlierStudy {
    pub clean: ScoreReport,
    pub mixed: ScoreReport,
    /// `mixed − clean`, per metric.
    pub delta: MetricScores,
    pub delta_total: f64,
    pub modified_rows: Vec<usize>,
}

pub fn run_outlier_study(
    data: &InputDataset,
    proto: &PrototypeSet,
    channel: &mut ModelChannel,
    reruns: &mut [RerunModel],
    cfg: &RunConfig,
    outliers: &OutlierConfig,
) -> Result<OutlierStudy, ExperimentError> {
    let injected = inject_outliers(data, outliers)?;
    let clean = run_benchmark(data, proto, channel, reruns, cfg, &RunMeta {
        label: Some("clean".into()),
        val_loss: None,
    })?;
    let mixed = run_benchmark(&injected.dataset, proto, channel, reruns, cfg, &RunMeta {
        label: Some("mixed".into()),
        val_loss: None,
    })?;
    Ok(OutlierStudy {
        delta: mixed.scores.delta(&clean.scores),
        delta_total: mixed.total - clean.total,
        clean,
        mixed,
        modified_rows: injected.modified_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::server::LoopbackTransport;
    use crate::adapter::toy::ToyLinearModel;
    use crate::data::Matrix;
    use crate::synthetic::{generate_planted_latent, PlantedLatentConfig};

    fn planted_setup(seed: u64) -> (InputDataset, PrototypeSet, ModelChannel) {
        let cfg = PlantedLatentConfig {
            seed,
            ..PlantedLatentConfig::default()
        };
        let (latent, proto, truth) = generate_planted_latent(&cfg).unwrap();
        let classes = proto.class_hint.clone().unwrap();
        let model = ToyLinearModel::with_random_projection(6, proto.prototypes.clone(), classes, seed).unwrap();
        let inputs = {
            use crate::adapter::server::AdapterModel;
            model.decode(&latent.vectors).unwrap()
        };
        let data = InputDataset::new(inputs, latent.labels.clone(), None).unwrap();
        let _ = truth;
        let ch = ModelChannel::connect(Box::new(LoopbackTransport::new(model)), ChannelOptions::default()).unwrap();
        (data, proto, ch)
    }

    #[test]
    fn planted_run_scores_perfectly_where_expected() {
        let (data, proto, mut ch) = planted_setup(1);
        let cfg = RunConfig::with_seed(7);
        let r = run_benchmark(&data, &proto, &mut ch, &mut [], &cfg, &RunMeta::default()).unwrap();
        r.validate().unwrap();
        assert_eq!(r.scores.correctness, 1.0);
        assert_eq!(r.scores.input_completeness, 1.0);
        assert!(r.scores.confidence >= 0.9, "{}", r.scores.confidence);
        assert!((r.scores.consistency - 1.0).abs() < 1e-9);
        assert_eq!(r.context.per_class_k.values().copied().collect::<Vec<_>>(), vec![2, 2]);
        assert!((r.scores.compactness - (-0.24f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = RunConfig::with_seed(3);
        let (data, proto, mut ch) = planted_setup(2);
        let a = run_benchmark(&data, &proto, &mut ch, &mut [], &cfg, &RunMeta::default()).unwrap();
        let (data, proto, mut ch) = planted_setup(2);
        let b = run_benchmark(&data, &proto, &mut ch, &mut [], &cfg, &RunMeta::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.clock.is_empty());
    }

    #[test]
    fn dimension_mismatch_names_the_stage() {
        let (data, _, mut ch) = planted_setup(1);
        let wrong = PrototypeSet::new(Matrix::zeros(2, 3), None).unwrap();
        let err = run_benchmark(&data, &wrong, &mut ch, &mut [], &RunConfig::default(), &RunMeta::default())
            .unwrap_err();
        assert_eq!(err.stage, "validate");
        assert!(!err.is_adapter());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = RunConfig::with_seed(1);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.metric_flags.ct_normalized = true;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
        // execution mode does not change results, so it is not fingerprinted
        b = a.clone();
        b.exec = Execution::Sequential;
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn config_json_round_trips_and_rejects_unknown_keys() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 5, "kmeans": {"k_max": 4}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.kmeans.k_max, 4);
        assert_eq!(cfg.kmeans.k_min, 2);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 5}"#).is_err());
    }

    fn ramp(n: usize) -> InputDataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, i as f64 + 1.0, 0.5]).collect();
        InputDataset::new(Matrix::from_rows(3, &rows).unwrap(), (0..n).map(|i| i % 2).collect(), None).unwrap()
    }

    #[test]
    fn outlier_floor_and_untouched_rows() {
        let data = ramp(100);
        let inj = inject_outliers(&data, &OutlierConfig { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(inj.modified_rows.len(), 3);
        for i in 0..100 {
            let same = inj.dataset.samples.row(i) == data.samples.row(i);
            assert_eq!(same, !inj.modified_rows.contains(&i), "row {i}");
        }
        assert_eq!(inj.dataset.labels, data.labels);
        assert_eq!(inj.dataset.sample_ids, data.sample_ids);
    }

    #[test]
    fn zero_fraction_is_identity_and_tiny_fraction_errors() {
        let data = ramp(10);
        let none = inject_outliers(&data, &OutlierConfig { fraction: 0.0, ..Default::default() }).unwrap();
        assert_eq!(none.dataset, data);
        assert!(none.modified_rows.is_empty());
        assert!(inject_outliers(&data, &OutlierConfig::default()).is_err());
        assert!(inject_outliers(&data, &OutlierConfig { fraction: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn outlier_study_leaves_model_only_scores_unchanged() {
        let (data, proto, mut ch) = planted_setup(5);
        let study = run_outlier_study(
            &data,
            &proto,
            &mut ch,
            &mut [],
            &RunConfig::with_seed(1),
            &OutlierConfig { seed: 2, ..Default::default() },
        )
        .unwrap();
        assert_eq!(study.delta.consistency, 0.0);
        assert_eq!(study.delta.contrastivity, 0.0);
        assert_eq!(study.delta.compactness, 0.0);
        assert_eq!(study.modified_rows.len(), 12);
    }

    #[test]
    fn campaign_closed_forms() {
        let protos = Matrix::from_rows(2, &[[0.0, 0.0], [20.0, 0.0]]).unwrap();
        let base = PrototypeSet::new(protos.clone(), None).unwrap();
        let ln4 = 4f64.ln();
        let shifted = Matrix::from_rows(2, &[[0.0, ln4], [20.0, ln4]]).unwrap();
        let chan = |p: &Matrix| {
            let m = ToyLinearModel::identity(2, p.clone(), vec![0, 1]).unwrap();
            ModelChannel::connect(Box::new(LoopbackTransport::new(m)), ChannelOptions::default()).unwrap()
        };
        let mut base_ch = chan(&protos);
        let mut one = vec![RerunModel {
            prototypes: PrototypeSet::new(shifted.clone(), None).unwrap(),
            channel: chan(&shifted),
        }];
        let cfg = RunConfig::default();
        let cs = run_consistency_campaign(&base, &mut base_ch, &mut one, &cfg).unwrap();
        assert!((cs - 0.25).abs() < 1e-12);
        let mut two = vec![
            RerunModel {
                prototypes: base.clone(),
                channel: chan(&protos),
            },
            one.pop().unwrap(),
        ];
        let cs = run_consistency_campaign(&base, &mut base_ch, &mut two, &cfg).unwrap();
        assert!((cs - 0.5).abs() < 1e-12);
    }
}
