use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Duration;

use protoscore::adapter::toy::ToyLinearModel;
use protoscore::adapter::server::AdapterModel;
use protoscore::adapter::{self, AdapterDescriptor, AdapterError, ChannelOptions, ModelChannel};
use protoscore::data::{
    load_dataset, load_prototypes, render_markdown, save_dataset, save_latent, save_prototypes,
    save_report, DType, DataError, ReportFormat, METRIC_NAMES,
};
use protoscore::experiments::{
    open_reruns, run_benchmark, run_consistency_campaign, run_outlier_study, ExperimentError,
    OutlierConfig, OutlierStudy, RunConfig, RunMeta,
};
use protoscore::metrics::RerunModel;
use protoscore::synthetic::{generate_planted_latent, generate_sawsine, PlantedLatentConfig, SawsineConfig};
use protoscore::{Execution, InputDataset};
use serde_json::json;

use super::{
    AdapterArgs, Command, ConsistencyArgs, Format, OutlierArgs, PlantedArgs, RecordArgs, RunArgs,
    SawsineArgs, ScoreArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Adapter(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Adapter(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Adapter(m) => f.write_str(m),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_adapter() {
            CliError::Adapter(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        CliError::Adapter(e.to_string())
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Input errors on a named flag are usage errors.
fn flag_input(flag: &str) -> impl Fn(DataError) -> CliError + '_ {
    move |e| CliError::Usage(format!("{flag}: {e}"))
}

fn need_file(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: file not found: {}", path.display())))
    }
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Score(a) => score(a),
        Command::Consistency(a) => consistency(a),
        Command::OutlierStudy(a) => outlier_study(a),
        Command::GenSawsine(a) => gen_sawsine(a),
        Command::GenPlanted(a) => gen_planted(a),
        Command::RecordReplay(a) => record_replay(a),
    }
}

fn channel_options(a: &AdapterArgs) -> ChannelOptions {
    ChannelOptions {
        timeout: Duration::from_secs(a.timeout_secs.max(1)),
        strict: a.strict,
        ..ChannelOptions::default()
    }
}

fn open_channel(a: &AdapterArgs) -> Result<ModelChannel, CliError> {
    let desc = match (&a.adapter_cmd, &a.replay) {
        (Some(cmd), _) => {
            AdapterDescriptor::command_line(cmd).map_err(|e| CliError::Usage(format!("--adapter-cmd: {e}")))?
        }
        (None, Some(path)) => {
            need_file("--replay", path)?;
            AdapterDescriptor::Replay(path.clone())
        }
        (None, None) => return Err(CliError::Usage("one of --adapter-cmd / --replay is required".into())),
    };
    Ok(adapter::handshake_with(&desc, channel_options(a))?)
}

fn load_config(path: Option<&Path>, seed: Option<u64>, sequential: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            need_file("--config", p)?;
            RunConfig::load(p).map_err(flag_input("--config"))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if sequential {
        cfg.exec = Execution::Sequential;
    }
    cfg.kmeans
        .validate()
        .map_err(|e| CliError::Usage(format!("--config: {e}")))?;
    Ok(cfg)
}

struct Session {
    data: InputDataset,
    proto: protoscore::PrototypeSet,
    channel: ModelChannel,
    reruns: Vec<RerunModel>,
    cfg: RunConfig,
}

impl Session {
    fn open(run: &RunArgs) -> Result<Self, CliError> {
        need_file("--dataset", &run.dataset)?;
        need_file("--prototypes", &run.prototypes)?;
        let cfg = load_config(run.config.as_deref(), Some(run.seed), run.sequential)?;
        let data = load_dataset(&run.dataset).map_err(flag_input("--dataset"))?;
        let proto = load_prototypes(&run.prototypes).map_err(flag_input("--prototypes"))?;
        let channel = open_channel(&run.adapter)?;
        let reruns = match &cfg.consistency {
            Some(c) => open_reruns(c, channel_options(&run.adapter))?,
            None => Vec::new(),
        };
        Ok(Session {
            data,
            proto,
            channel,
            reruns,
            cfg,
        })
    }

    fn close(self) -> Result<(), CliError> {
        for r in self.reruns {
            r.channel.shutdown()?;
        }
        Ok(self.channel.shutdown()?)
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("--out {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let mut s = Session::open(&a.run)?;
    s.cfg.record_timings |= a.timings;
    let meta = RunMeta {
        label: a.label.clone(),
        val_loss: a.val_loss,
    };
    let report = run_benchmark(&s.data, &s.proto, &mut s.channel, &mut s.reruns, &s.cfg, &meta)?;
    s.close()?;
    if let Some(dir) = &a.out {
        save_report(&report, &dir.join("report.json"), ReportFormat::Json).map_err(runtime)?;
        save_report(&report, &dir.join("report.md"), ReportFormat::Markdown).map_err(runtime)?;
    }
    match a.format {
        Format::Json => print!("{}", report.to_json()),
        Format::Markdown => print!("{}", render_markdown(std::slice::from_ref(&report))),
    }
    Ok(())
}

fn consistency(a: ConsistencyArgs) -> Result<(), CliError> {
    need_file("--prototypes", &a.prototypes)?;
    let cfg = load_config(Some(&a.config), a.seed, false)?;
    let plan = cfg
        .consistency
        .clone()
        .filter(|c| !c.reruns.is_empty())
        .ok_or_else(|| CliError::Usage("--config: needs a non-empty `consistency.reruns` list".into()))?;
    let proto = load_prototypes(&a.prototypes).map_err(flag_input("--prototypes"))?;
    let mut channel = open_channel(&a.adapter)?;
    let mut reruns = open_reruns(&plan, channel_options(&a.adapter))?;
    let cs = run_consistency_campaign(&proto, &mut channel, &mut reruns, &cfg)?;
    for r in reruns {
        r.channel.shutdown()?;
    }
    channel.shutdown()?;
    let json = format!(
        "{}\n",
        serde_json::to_string_pretty(&json!({ "CS": cs, "reruns": plan.reruns.len() })).expect("serializes")
    );
    let table = format!("| Metric | Value |\n|---|---|\n| CS | {cs:.2} |\n");
    if let Some(dir) = &a.out {
        write_out(dir, "consistency.json", &json)?;
        write_out(dir, "consistency.md", &table)?;
    }
    match a.format {
        Format::Json => print!("{json}"),
        Format::Markdown => print!("{table}"),
    }
    Ok(())
}

/// Clean and mixed rows followed by a signed delta row.
fn study_markdown(study: &OutlierStudy) -> String {
    let mut out = render_markdown(&[study.clean.clone(), study.mixed.clone()]);
    out.push_str("| delta | - |");
    for v in study.delta.to_array() {
        out.push_str(&format!(" {v:+.2} |"));
    }
    out.push_str(&format!(" {:+.2} |\n", study.delta_total));
    out
}

fn study_json(study: &OutlierStudy) -> String {
    let delta: serde_json::Map<String, serde_json::Value> = METRIC_NAMES
        .iter()
        .zip(study.delta.to_array())
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let v = json!({
        "clean": study.clean,
        "mixed": study.mixed,
        "delta": delta,
        "delta_total": study.delta_total,
        "modified_rows": study.modified_rows,
    });
    format!("{}\n", serde_json::to_string_pretty(&v).expect("serializes"))
}

fn outlier_study(a: OutlierArgs) -> Result<(), CliError> {
    let mut s = Session::open(&a.run)?;
    let mut ocfg = match &a.outlier_config {
        Some(p) => {
            need_file("--outlier-config", p)?;
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("--outlier-config: {e}")))?;
            serde_json::from_str::<OutlierConfig>(&text)
                .map_err(|e| CliError::Usage(format!("--outlier-config: {e}")))?
        }
        None => OutlierConfig::default(),
    };
    if let Some(f) = a.fraction {
        ocfg.fraction = f;
    }
    if let Some(m) = a.magnitude_fraction {
        ocfg.magnitude_fraction = m;
    }
    ocfg.seed = a.run.seed;
    let study = run_outlier_study(&s.data, &s.proto, &mut s.channel, &mut s.reruns, &s.cfg, &ocfg)?;
    s.close()?;
    if let Some(dir) = &a.out {
        save_report(&study.clean, &dir.join("clean.json"), ReportFormat::Json).map_err(runtime)?;
        save_report(&study.mixed, &dir.join("mixed.json"), ReportFormat::Json).map_err(runtime)?;
        write_out(dir, "study.md", &study_markdown(&study))?;
        write_out(dir, "study.json", &study_json(&study))?;
    }
    match a.format {
        Format::Json => print!("{}", study_json(&study)),
        Format::Markdown => print!("{}", study_markdown(&study)),
    }
    Ok(())
}

fn gen_sawsine(a: SawsineArgs) -> Result<(), CliError> {
    let cfg = SawsineConfig {
        num_samples: a.num_samples,
        series_length: a.series_length,
        noise_amp_max: a.noise_amp_max,
        seed: a.seed,
    };
    let data = generate_sawsine(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let meta = json!({ "generator": "sawsine", "config": cfg, "shapes": data.shapes });
    let dtype = if a.f32 { DType::F32 } else { DType::F64 };
    save_dataset(&data.dataset, &a.out, dtype, Some(meta)).map_err(runtime)?;
    println!("wrote {} samples to {}", data.dataset.len(), a.out.display());
    Ok(())
}

fn gen_planted(a: PlantedArgs) -> Result<(), CliError> {
    let cfg = PlantedLatentConfig {
        num_classes: a.num_classes,
        clusters_per_class: a.clusters_per_class,
        points_per_cluster: a.points_per_cluster,
        cluster_sigma: a.cluster_sigma,
        separation: a.separation,
        latent_dim: a.latent_dim,
        seed: a.seed,
    };
    let (latent, proto, _) = generate_planted_latent(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let classes = proto.class_hint.clone().expect("planted prototypes carry classes");
    let model = ToyLinearModel::with_random_projection(a.input_dim, proto.prototypes.clone(), classes, a.seed)
        .map_err(|e| CliError::Usage(format!("--input-dim: {e}")))?;
    let inputs = model.decode(&latent.vectors).map_err(runtime)?;
    let data = InputDataset::new(inputs, latent.labels.clone(), None).map_err(runtime)?;
    let meta = json!({ "generator": "planted", "config": cfg, "input_dim": a.input_dim });
    save_dataset(&data, &a.out.join("dataset.json"), DType::F64, Some(meta)).map_err(runtime)?;
    save_latent(&latent, &a.out.join("latent.json"), DType::F64).map_err(runtime)?;
    save_prototypes(&proto, &a.out.join("prototypes.json"), DType::F64).map_err(runtime)?;
    println!(
        "wrote {} samples, {} prototypes to {}",
        data.len(),
        proto.len(),
        a.out.display()
    );
    Ok(())
}

fn record_replay(a: RecordArgs) -> Result<(), CliError> {
    if a.run.adapter.adapter_cmd.is_none() {
        return Err(CliError::Usage("record-replay needs --adapter-cmd".into()));
    }
    let mut s = Session::open(&a.run)?;
    if !s.reruns.is_empty() {
        return Err(CliError::Usage(
            "--config: record-replay records the base model only; drop `consistency`".into(),
        ));
    }
    s.channel.start_recording();
    let report = run_benchmark(&s.data, &s.proto, &mut s.channel, &mut [], &s.cfg, &RunMeta::default())?;
    let transcript = s.channel.take_recording().expect("recording was started");
    s.close()?;
    adapter::write_replay(&transcript, &a.out)?;
    println!(
        "recorded {} exchanges to {} (total {:.2})",
        transcript.exchanges.len(),
        a.out.display(),
        report.total
    );
    Ok(())
}
