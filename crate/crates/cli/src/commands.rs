//! Command implementations and the exit-code policy.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use monoframe::checkpoint;
use monoframe::config::ModelConfig;
use monoframe::data::augment::AugmentOptions;
use monoframe::data::generate::{
    generate_static_corpus, generate_temporal_corpus, StaticCorpusSpec, TemporalCorpusSpec,
};
use monoframe::data::ssv2::{
    annotations_from_dataset, build_ssv2_tasks, parse_annotation_file, write_task_manifests, Split,
    SSv2Annotation,
};
use monoframe::data::{load_manifest, save_manifest, Dataset};
use monoframe::error::Error as CoreError;
use monoframe::evaluation::{compare_ensembles, evaluate_qa, evaluate_retrieval, QueryMode};
use monoframe::fusion::EnsembleStrategy;
use monoframe::gradcheck::run_gradcheck;
use monoframe::model::Model;
use monoframe::plot::{line_plot_svg, Series};
use monoframe::training::{
    run_training, steps_per_epoch, Objective, ScheduleConfig, TrainOptions,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::configs;
use crate::CommonArgs;

pub enum CliError {
    /// Bad arguments, config, schema or inputs -> exit 1.
    Validation(String),
    /// Failures during execution (I/O, divergence) -> exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl fmt::Debug for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_)
            | CoreError::Input(_)
            | CoreError::Schema { .. }
            | CoreError::Checkpoint(_)
            | CoreError::Json { .. } => CliError::Validation(e.to_string()),
            CoreError::Io { .. } | CoreError::Divergence { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(name: &'static str, args: &CommonArgs) -> CliResult {
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", out.display())))?;
    match name {
        "gen-static" => gen_static(args, &out),
        "gen-temporal" => gen_temporal(args, &out),
        "build-ssv2" => build_ssv2(args, &out),
        "pretrain" => train(args, &out, configs::TrainConfig::default(), false),
        "finetune" => train(args, &out, configs::TrainConfig::finetune(), false),
        "train-temporal" => train(args, &out, configs::TrainConfig::temporal(), true),
        "eval-retrieval" => eval_retrieval(args, &out),
        "eval-qa" => eval_qa(args, &out),
        "compare-ensembles" => run_compare_ensembles(args, &out),
        "gradcheck" => gradcheck(args, &out),
        other => Err(CliError::Validation(format!("unknown command {other}"))),
    }
}

fn load_config<T: Default + DeserializeOwned>(path: Option<&Path>) -> CliResult<T> {
    load_config_with(path, T::default)
}

fn load_config_with<T: DeserializeOwned>(path: Option<&Path>, default: impl Fn() -> T) -> CliResult<T> {
    match path {
        None => Ok(default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("parse config {}: {e}", p.display())))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn write_run_meta<T: Serialize>(out: &Path, command: &str, seed: u64, config: &T) -> CliResult {
    #[derive(Serialize)]
    struct RunMeta<'a, T> {
        command: &'a str,
        seed: u64,
        artifact_version: &'a str,
        config: &'a T,
    }
    write_json(
        &out.join("run_meta.json"),
        &RunMeta {
            command,
            seed,
            artifact_version: env!("CARGO_PKG_VERSION"),
            config,
        },
    )
}

fn require_checkpoint(args: &CommonArgs, command: &str) -> CliResult<Model> {
    let path = args.checkpoint.as_ref().ok_or_else(|| {
        CliError::Validation(format!("{command} requires --checkpoint <path>"))
    })?;
    Ok(checkpoint::load(path)?)
}

fn prefix_ids(ds: &mut Dataset, prefix: &str) {
    for ex in &mut ds.examples {
        ex.video_id = format!("{prefix}_{}", ex.video_id);
    }
}

fn gen_static(args: &CommonArgs, out: &Path) -> CliResult {
    let cfg: configs::GenStaticConfig = load_config(args.config.as_deref())?;
    write_run_meta(out, "gen-static", args.seed, &cfg)?;
    let train_spec = StaticCorpusSpec {
        n_videos: cfg.n_train,
        frames_per_video: cfg.frames_per_video,
        image_size: cfg.image_size,
    };
    let test_spec = StaticCorpusSpec {
        n_videos: cfg.n_test,
        ..train_spec.clone()
    };
    let mut train = generate_static_corpus(&train_spec, args.seed)?;
    let mut test = generate_static_corpus(&test_spec, args.seed ^ 0x7465_7374)?;
    prefix_ids(&mut train, "train");
    prefix_ids(&mut test, "test");
    save_manifest(&train, out, "train")?;
    save_manifest(&test, out, "test")?;
    let vocab = train.build_vocab();
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "n_train": train.len(),
            "n_test": test.len(),
            "frames_per_video": cfg.frames_per_video,
            "image_size": cfg.image_size,
            "vocab_size": vocab.size(),
        }),
    )
}

fn gen_temporal(args: &CommonArgs, out: &Path) -> CliResult {
    let cfg: configs::GenTemporalConfig = load_config(args.config.as_deref())?;
    write_run_meta(out, "gen-temporal", args.seed, &cfg)?;
    let train_spec = TemporalCorpusSpec {
        n_videos: cfg.n_train,
        frames_per_video: cfg.frames_per_video,
        image_size: cfg.image_size,
    };
    let test_spec = TemporalCorpusSpec {
        n_videos: cfg.n_test,
        ..train_spec.clone()
    };
    let mut train = generate_temporal_corpus(&train_spec, args.seed)?;
    let mut test = generate_temporal_corpus(&test_spec, args.seed ^ 0x7465_7374)?;
    prefix_ids(&mut train, "train");
    prefix_ids(&mut test, "test");
    save_manifest(&train, out, "train")?;
    save_manifest(&test, out, "test")?;
    let templates: std::collections::BTreeSet<String> = train
        .examples
        .iter()
        .filter_map(|e| e.meta.as_ref().and_then(|m| m.template.clone()))
        .collect();
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "n_train": train.len(),
            "n_test": test.len(),
            "frames_per_video": cfg.frames_per_video,
            "image_size": cfg.image_size,
            "n_templates": templates.len(),
        }),
    )
}

/// Frame paths per video id, read from a manifest without loading pixels.
fn frame_paths(manifest: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    #[derive(serde::Deserialize)]
    struct Line {
        video_id: String,
        frames: Option<String>,
    }
    let text = fs::read_to_string(manifest)
        .map_err(|e| CliError::Validation(format!("read {}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(line).map_err(|e| {
            CliError::Validation(format!("{}:{}: {e}", manifest.display(), i + 1))
        })?;
        if let Some(f) = rec.frames {
            map.insert(rec.video_id, base.join(f));
        }
    }
    Ok(map)
}

fn build_ssv2(args: &CommonArgs, out: &Path) -> CliResult {
    let cfg: configs::BuildSsv2Config = load_config(args.config.as_deref())?;
    write_run_meta(out, "build-ssv2", args.seed, &cfg)?;

    let mut annotations: Vec<SSv2Annotation> = Vec::new();
    let mut frames: BTreeMap<String, PathBuf> = BTreeMap::new();
    match (&cfg.train_annotations, &cfg.validation_annotations, &cfg.train_manifest, &cfg.validation_manifest) {
        (Some(train), Some(val), None, None) => {
            annotations.extend(parse_annotation_file(train, Split::Train)?);
            annotations.extend(parse_annotation_file(val, Split::Validation)?);
        }
        (None, None, Some(train), Some(val)) => {
            for (path, split) in [(train, Split::Train), (val, Split::Validation)] {
                let ds = load_manifest(path)?;
                annotations.extend(annotations_from_dataset(&ds, split));
                frames.extend(frame_paths(path)?);
            }
        }
        _ => {
            return Err(CliError::Validation(
                "build-ssv2 needs either train_annotations + validation_annotations \
                 or train_manifest + validation_manifest in the config"
                    .into(),
            ))
        }
    }

    let tasks = build_ssv2_tasks(&annotations, cfg.per_template, args.seed)?;
    write_task_manifests(&tasks, out, (!frames.is_empty()).then_some(&frames))?;
    write_json(
        &out.join("counts.json"),
        &serde_json::json!({
            "n_train": tasks.template_train.len(),
            "n_test_videos": tasks.template_test.len(),
            "n_template_queries": tasks.template_queries.len(),
            "n_label_queries": tasks.label_queries.len(),
            "warnings": tasks.warnings,
            "rejected": tasks.rejected,
        }),
    )
}

fn parse_objectives(names: &[String]) -> CliResult<std::collections::BTreeSet<Objective>> {
    let mut set = std::collections::BTreeSet::new();
    for n in names {
        set.insert(match n.as_str() {
            "vtc" => Objective::Vtc,
            "mlm" => Objective::Mlm,
            "vtm" => Objective::Vtm,
            "qa" => Objective::Qa,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown objective {other:?} (expected vtc|mlm|vtm|qa)"
                )))
            }
        });
    }
    if set.is_empty() {
        return Err(CliError::Validation("objectives list is empty".into()));
    }
    Ok(set)
}

fn train(
    args: &CommonArgs,
    out: &Path,
    defaults: configs::TrainConfig,
    temporal_stage: bool,
) -> CliResult {
    let command = if temporal_stage { "train-temporal" } else { "train" };
    let cfg: configs::TrainConfig = load_config_with(args.config.as_deref(), || defaults.clone())?;
    write_run_meta(out, command, args.seed, &cfg)?;
    if cfg.train_manifest.as_os_str().is_empty() {
        return Err(CliError::Validation(
            "config field train_manifest is required (path to a corpus manifest)".into(),
        ));
    }
    let dataset = load_manifest(&cfg.train_manifest)?;
    let objectives = parse_objectives(&cfg.objectives)?;

    let mut model = match &args.checkpoint {
        Some(p) => checkpoint::load(p)?,
        None if temporal_stage => {
            return Err(CliError::Validation(
                "train-temporal requires --checkpoint (the single-frame stage-1 model)".into(),
            ))
        }
        None => {
            let vocab = dataset.build_vocab();
            let mut mc: ModelConfig = cfg.model.clone();
            mc.vocab_size = 0; // set from vocab
            Model::new(mc, vocab, args.seed)?
        }
    };
    if temporal_stage || cfg.frames_per_step > 1 {
        model.add_temporal(args.seed);
    }
    if objectives.contains(&Objective::Qa) {
        model.add_qa_decoder(args.seed);
    }

    let pair_losses =
        objectives.contains(&Objective::Vtc) || objectives.contains(&Objective::Vtm);
    let min_batch = if pair_losses { 2 } else { 1 };
    let spe = steps_per_epoch(dataset.len(), cfg.batch_size, min_batch);
    if spe == 0 {
        return Err(CliError::Validation(format!(
            "dataset of {} examples yields no usable batches at batch_size {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    let schedule = ScheduleConfig {
        peak_lr: cfg.peak_lr,
        min_lr: cfg.min_lr,
        warmup_steps: (cfg.warmup_epochs * spe as f64).round() as usize,
        total_steps: cfg.epochs * spe,
        weight_decay: cfg.weight_decay,
        ..ScheduleConfig::default()
    };
    let opts = TrainOptions {
        objectives,
        schedule,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        frames_per_step: cfg.frames_per_step,
        augment: AugmentOptions {
            enabled: cfg.augment,
            ..AugmentOptions::default()
        },
        grad_clip: cfg.grad_clip,
    };

    let report = run_training(&mut model, &dataset, &opts, args.seed, Some(out))?;

    let metrics_path = out.join("metrics.jsonl");
    let mut f = fs::File::create(&metrics_path)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", metrics_path.display())))?;
    for r in &report.records {
        let line = serde_json::to_string(r)
            .map_err(|e| CliError::Runtime(format!("serialize step record: {e}")))?;
        writeln!(f, "{line}")
            .map_err(|e| CliError::Runtime(format!("write {}: {e}", metrics_path.display())))?;
    }
    let first = report.records.first();
    let last = report.records.last();
    write_json(
        &out.join("final_metrics.json"),
        &serde_json::json!({
            "steps": report.records.len(),
            "initial_loss": first.map(|r| r.loss_total),
            "final_loss": last.map(|r| r.loss_total),
            "checkpoints": report.checkpoints,
        }),
    )?;
    println!(
        "trained {} steps; final loss {:.6}; checkpoint {}",
        report.records.len(),
        last.map(|r| r.loss_total).unwrap_or(f64::NAN),
        report.checkpoints.last().map(|p| p.display().to_string()).unwrap_or_default()
    );
    Ok(())
}

fn parse_query_mode(s: &str) -> CliResult<QueryMode> {
    match s {
        "per_caption" => Ok(QueryMode::PerCaption),
        "paragraph" => Ok(QueryMode::Paragraph),
        "dedup_caption" => Ok(QueryMode::DedupCaption),
        other => Err(CliError::Validation(format!(
            "unknown query_mode {other:?} (expected per_caption|paragraph|dedup_caption)"
        ))),
    }
}

fn eval_retrieval(args: &CommonArgs, out: &Path) -> CliResult {
    let mut cfg: configs::EvalRetrievalConfig = load_config(args.config.as_deref())?;
    if let Some(t) = args.t_test {
        cfg.t_test = t;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s.clone();
    }
    write_run_meta(out, "eval-retrieval", args.seed, &cfg)?;
    let model = require_checkpoint(args, "eval-retrieval")?;
    if cfg.manifest.as_os_str().is_empty() {
        return Err(CliError::Validation("config field manifest is required".into()));
    }
    let dataset = load_manifest(&cfg.manifest)?;
    let strategy = EnsembleStrategy::parse(&cfg.strategy)?;
    let mode = parse_query_mode(&cfg.query_mode)?;
    let eval = evaluate_retrieval(&model, &dataset, strategy, cfg.t_test, mode)?;
    write_json(&out.join("report.json"), &eval.report)?;
    if !eval.warnings.is_empty() {
        write_json(&out.join("warnings.json"), &eval.warnings)?;
    }
    println!(
        "retrieval r1 {:.2} r5 {:.2} r10 {:.2} avg {:.2} ({} texts, {} videos)",
        eval.report.r1,
        eval.report.r5,
        eval.report.r10,
        eval.report.avg_recall,
        eval.report.n_text,
        eval.report.n_video
    );
    Ok(())
}

fn eval_qa(args: &CommonArgs, out: &Path) -> CliResult {
    let mut cfg: configs::EvalQaConfig = load_config(args.config.as_deref())?;
    if let Some(t) = args.t_test {
        cfg.t_test = t;
    }
    write_run_meta(out, "eval-qa", args.seed, &cfg)?;
    let model = require_checkpoint(args, "eval-qa")?;
    if !model.has_qa() {
        return Err(CliError::Validation(
            "checkpoint has no answer decoder (train with the qa objective first)".into(),
        ));
    }
    if cfg.manifest.as_os_str().is_empty() {
        return Err(CliError::Validation("config field manifest is required".into()));
    }
    let dataset = load_manifest(&cfg.manifest)?;
    let report = evaluate_qa(&model, &dataset, cfg.t_test, cfg.max_answer_len)?;
    write_json(&out.join("qa_report.json"), &report)?;
    println!("qa accuracy {:.2} over {} examples", report.accuracy, report.n);
    Ok(())
}

fn run_compare_ensembles(args: &CommonArgs, out: &Path) -> CliResult {
    let mut cfg: configs::CompareEnsemblesConfig = load_config(args.config.as_deref())?;
    if let Some(t) = args.t_test {
        cfg.frame_counts = vec![t];
    }
    write_run_meta(out, "compare-ensembles", args.seed, &cfg)?;
    let model = require_checkpoint(args, "compare-ensembles")?;
    if cfg.manifest.as_os_str().is_empty() {
        return Err(CliError::Validation("config field manifest is required".into()));
    }
    let dataset = load_manifest(&cfg.manifest)?;
    let strategies: Vec<EnsembleStrategy> = cfg
        .strategies
        .iter()
        .map(|s| EnsembleStrategy::parse(s))
        .collect::<Result<_, _>>()?;
    let mode = parse_query_mode(&cfg.query_mode)?;
    let grid = compare_ensembles(&model, &dataset, &cfg.frame_counts, &strategies, mode)?;
    write_json(&out.join("grid.json"), &grid)?;
    if cfg.plot {
        let series: Vec<Series> = strategies
            .iter()
            .map(|s| Series {
                name: s.name().to_string(),
                points: grid
                    .iter()
                    .filter(|c| c.strategy == s.name())
                    .map(|c| (c.t_test as f64, c.report.avg_recall))
                    .collect(),
            })
            .collect();
        let svg = line_plot_svg(
            "frame ensemble comparison",
            "frames at inference",
            "avg recall",
            &series,
        );
        fs::write(out.join("ensembles.svg"), svg)
            .map_err(|e| CliError::Runtime(format!("write ensembles.svg: {e}")))?;
    }
    for cell in &grid {
        println!(
            "strategy {:>6} t_test {:>2} -> avg recall {:.2}",
            cell.strategy, cell.t_test, cell.report.avg_recall
        );
    }
    Ok(())
}

fn gradcheck(args: &CommonArgs, out: &Path) -> CliResult {
    let cfg: configs::GradcheckConfig = load_config(args.config.as_deref())?;
    write_run_meta(out, "gradcheck", args.seed, &cfg)?;
    let report = run_gradcheck(args.seed, cfg.entries_per_param)?;
    write_json(&out.join("gradcheck.json"), &report)?;
    for (loss, check) in &report.losses {
        println!(
            "{loss:>8}: max rel err {:.3e} over {} entries in {} params ({})",
            check.max_rel_err,
            check.entries_checked,
            check.params_covered,
            if check.passed { "pass" } else { "FAIL" }
        );
    }
    if !report.passed {
        return Err(CliError::Runtime(
            "gradient check failed (see gradcheck.json)".into(),
        ));
    }
    Ok(())
}
