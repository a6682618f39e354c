use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use protoscore::adapter::server::LoopbackTransport;
use protoscore::adapter::toy::ToyLinearModel;
use protoscore::adapter::server::AdapterModel;
use protoscore::adapter::{ChannelOptions, ModelChannel};
use protoscore::clustering::{
    assign_prototypes, build_cluster_model, mean_silhouette, nearest_rows, KMeansConfig,
};
use protoscore::experiments::{run_benchmark, RunConfig, RunMeta};
use protoscore::metrics::{self, MetricContext, MetricOptions};
use protoscore::synthetic::{generate_planted_latent, PlantedLatentConfig};
use protoscore::{Execution, InputDataset};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn planted(points_per_cluster: usize) -> PlantedLatentConfig {
    PlantedLatentConfig {
        num_classes: 2,
        clusters_per_class: 3,
        points_per_cluster,
        latent_dim: 8,
        seed: 1,
        ..Default::default()
    }
}

fn silhouette(c: &mut Criterion) {
    let mut g = c.benchmark_group("silhouette");
    for ppc in [100, 400] {
        let (latent, _, truth) = generate_planted_latent(&planted(ppc)).unwrap();
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, latent.len()), &exec, |b, &exec| {
                b.iter(|| mean_silhouette(black_box(&latent.vectors), &truth.assignments, truth.num_clusters(), exec))
            });
        }
    }
    g.finish();
}

fn clustering(c: &mut Criterion) {
    let mut g = c.benchmark_group("per_class_select_k");
    g.sample_size(10);
    let (latent, _, _) = generate_planted_latent(&planted(150)).unwrap();
    for (name, exec) in MODES {
        let cfg = KMeansConfig {
            k_max: 8,
            exec,
            ..Default::default()
        };
        g.bench_function(name, |b| b.iter(|| build_cluster_model(black_box(&latent), &cfg)));
    }
    g.finish();
}

fn geometry(c: &mut Criterion) {
    let mut g = c.benchmark_group("geometric_scores");
    let (latent, proto, truth) = generate_planted_latent(&planted(400)).unwrap();
    let pa = assign_prototypes(&proto, &truth, &latent).unwrap();
    for (name, exec) in MODES {
        let opts = MetricOptions {
            exec,
            ct_normalized: true,
            ..Default::default()
        };
        let ctx = MetricContext::new(&latent, &proto, &truth, &pa, &opts).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| {
                (
                    nearest_rows(&latent.vectors, &proto.prototypes, exec),
                    metrics::contrastivity(&ctx).unwrap(),
                    metrics::covariate_complexity(&ctx).unwrap(),
                    metrics::confidence(&ctx).unwrap(),
                    metrics::cohesion_latent_space(&ctx).unwrap(),
                )
            })
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_benchmark");
    g.sample_size(10);
    let (latent, proto, _) = generate_planted_latent(&planted(100)).unwrap();
    let model = ToyLinearModel::with_random_projection(16, proto.prototypes.clone(), proto.class_hint.clone().unwrap(), 1)
        .unwrap();
    let data = InputDataset::new(model.decode(&latent.vectors).unwrap(), latent.labels.clone(), None).unwrap();
    for (name, exec) in MODES {
        let cfg = RunConfig {
            exec,
            ..RunConfig::with_seed(1)
        };
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut ch =
                    ModelChannel::connect(Box::new(LoopbackTransport::new(model.clone())), ChannelOptions::default())
                        .unwrap();
                run_benchmark(&data, &proto, &mut ch, &mut [], &cfg, &RunMeta::default()).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().measurement_time(Duration::from_secs(5));
    targets = silhouette, clustering, geometry, pipeline
}
criterion_main!(benches);
