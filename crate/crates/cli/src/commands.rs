//! The six subcommand bodies. Each writes a manifest that, together with
//! its input files, is enough to reproduce the run.

use std::path::{Path, PathBuf};

use prock_core::autodiff::{grad_check, GradCheckConfig};
use prock_core::checkpoint::{Checkpoint, Vocab};
use prock_core::data::{load_event_log, load_knowledge_graph, IsolatedNodePolicy, Sample, Target};
use prock_core::embed::{TimeConfig, TimeMode};
use prock_core::gnn::{Composition, EdgeIndex, Flow, GnnConfig, NeighborNorm};
use prock_core::head::TaskKind;
use prock_core::ingest::{self, SchemaMapping};
use prock_core::metrics::{self, MetricsReport, SplitSpec};
use prock_core::net::{self, ModelParams, ModelSpec};
use prock_core::synth::{self, SynthSpec};
use prock_core::train::{self, EpochStats, TrainConfig, TrainError};
use prock_core::Tensor;
use serde::Serialize;

use crate::config::{self, FileConfig, SplitPartArg, TaskArg};
use crate::dataset::{self, Dataset, TargetMode};
use crate::error::{data, io_write, numeric, usage, CliError};
use crate::{
    EvaluateArgs, ExtractArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs,
};

const MANIFEST_VERSION: u32 = 1;

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_write(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| io_write(path, e))
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("manifest serializes")
}

/// Sidecar manifest path: `model.ckpt` → `model.ckpt.manifest.json`.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

// ---------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct ExtractManifest<'a> {
    manifest_version: u32,
    command: &'static str,
    schema: String,
    data_dir: String,
    extraction: &'a ingest::ExtractionManifest,
}

pub fn cmd_extract(args: ExtractArgs) -> Result<(), CliError> {
    let mapping = SchemaMapping::load(&args.schema)?;
    let (log, graph, extraction) = ingest::extract(&mapping, &args.data_dir)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_write(&args.out, e))?;
    graph.save(&args.out.join("kg.tsv"))?;
    log.save(&args.out.join("log.csv"))?;
    let manifest = ExtractManifest {
        manifest_version: MANIFEST_VERSION,
        command: "extract",
        schema: args.schema.display().to_string(),
        data_dir: args.data_dir.display().to_string(),
        extraction: &extraction,
    };
    write_file(&args.out.join("manifest.json"), &to_pretty_json(&manifest))?;
    println!(
        "extracted {} nodes, {} edges, {} events over {} cases -> {}",
        extraction.node_count,
        extraction.edge_count,
        extraction.event_count,
        extraction.case_count,
        args.out.display()
    );
    for warning in &extraction.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

// ---------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct SynthManifest {
    manifest_version: u32,
    command: &'static str,
    spec: SynthSpec,
    node_count: usize,
    relation_count: usize,
    edge_count: usize,
    event_count: usize,
    case_count: usize,
}

pub fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        cases: args.cases.unwrap_or(defaults.cases),
        kg_depth: args.kg_depth.unwrap_or(defaults.kg_depth),
        noise: args.noise.unwrap_or(defaults.noise),
        seed: args.seed.unwrap_or(defaults.seed),
    };
    let generated = synth::generate(&spec)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_write(&args.out, e))?;
    generated.save(&args.out)?;
    let manifest = SynthManifest {
        manifest_version: MANIFEST_VERSION,
        command: "synth",
        spec,
        node_count: generated.graph.node_count(),
        relation_count: generated.graph.relation_count(),
        edge_count: generated.graph.edge_count(),
        event_count: generated.log.len(),
        case_count: generated.log.cases().len(),
    };
    write_file(&args.out.join("manifest.json"), &to_pretty_json(&manifest))?;
    println!(
        "generated {} cases ({} events, {}-hop graph with {} nodes) -> {}",
        spec.cases,
        generated.log.len(),
        spec.kg_depth,
        generated.graph.node_count(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct TrainManifest<'a> {
    manifest_version: u32,
    command: &'static str,
    kg: String,
    log: String,
    labels: Option<String>,
    next_event: bool,
    seed: u64,
    workers: usize,
    spec: &'a ModelSpec,
    config_hash: String,
    train: &'a TrainConfig,
    split: &'a SplitSpec,
    classes: &'a [String],
    sample_counts: [usize; 3],
    skipped_cases: usize,
    best_epoch: usize,
    best_val_metric: f64,
    diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    divergence_note: Option<&'a str>,
    history: &'a [EpochStats],
    checkpoint: String,
}

fn resolve_task(
    flag: Option<TaskArg>,
    file: &FileConfig,
    mode: &TargetMode,
) -> Result<TaskArg, CliError> {
    let from_file = match &file.task {
        Some(s) => Some(
            clap::ValueEnum::from_str(s, false)
                .map_err(|_| usage(format!("config file: invalid task value {s:?}")))?,
        ),
        None => None,
    };
    match flag.or(from_file) {
        Some(t) => Ok(t),
        // Next-event prediction is always over the event-type vocabulary.
        None if matches!(mode, TargetMode::NextEvent) => Ok(TaskArg::Multiclass),
        None => Err(usage("--task {binary,multiclass,regression} is required with --labels")),
    }
}

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mode = TargetMode::from_flags(args.labels.clone(), args.next_event)?;
    let task = resolve_task(args.task, &file, &mode)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let workers = args.workers.or(file.workers).unwrap_or(1).max(1);
    let model = config::resolve_model(&args.model, &file.model, args.next_event)?;
    let train_config = config::resolve_train(&args.train, &file.train, model.dim, seed)?;
    let split = config::resolve_split(&args.split, &file.split, seed)?;

    let ds = dataset::load_dataset(&args.kg, &args.log, &mode, task, &split)?;
    let Dataset { graph, classes, task: task_kind, parts, skipped_cases, .. } = ds;
    let [train_samples, val_samples, test_samples] = &parts;
    if train_samples.is_empty() {
        return Err(data("the training split is empty".to_string()));
    }
    if val_samples.is_empty() {
        return Err(usage(format!(
            "the validation split is empty ({} cases at val fraction {}); raise --val-fraction",
            parts.iter().map(Vec::len).sum::<usize>(),
            split.val_fraction
        )));
    }

    let spec = ModelSpec {
        dim: model.dim,
        gnn: model.gnn,
        time: model.time,
        task: task_kind,
        bias: model.bias,
        allow_empty: model.allow_empty,
        node_count: graph.node_count(),
        relation_count: graph.relation_count(),
    };
    let prepared_train = net::prepare_samples(train_samples, &graph, &spec)?;
    let prepared_val = net::prepare_samples(val_samples, &graph, &spec)?;
    let index = EdgeIndex::from_graph(&graph);
    let outcome = train::train(&spec, &index, &prepared_train, &prepared_val, &train_config, workers)?;

    let vocab = Vocab {
        nodes: graph.nodes().to_vec(),
        relations: graph.relations().to_vec(),
        classes: classes.clone(),
    };
    let checkpoint = Checkpoint {
        params: outcome.params,
        train_config: train_config.clone(),
        split,
        vocab,
        epoch: outcome.best_epoch,
        val_metric: outcome.best_val_metric,
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_write(parent, e))?;
        }
    }
    checkpoint.save(&args.out)?;
    let manifest = TrainManifest {
        manifest_version: MANIFEST_VERSION,
        command: "train",
        kg: args.kg.display().to_string(),
        log: args.log.display().to_string(),
        labels: args.labels.as_ref().map(|p| p.display().to_string()),
        next_event: args.next_event,
        seed,
        workers,
        spec: &spec,
        config_hash: spec.config_hash(),
        train: &train_config,
        split: &checkpoint.split,
        classes: &classes,
        sample_counts: [train_samples.len(), val_samples.len(), test_samples.len()],
        skipped_cases,
        best_epoch: outcome.best_epoch,
        best_val_metric: outcome.best_val_metric,
        diverged: outcome.diverged,
        divergence_note: outcome.divergence_note.as_deref(),
        history: &outcome.history,
        checkpoint: args.out.display().to_string(),
    };
    write_file(&sidecar(&args.out), &to_pretty_json(&manifest))?;
    println!(
        "trained on {} samples ({} val, {} test held out); best epoch {} ({} {:.4}) -> {}",
        train_samples.len(),
        val_samples.len(),
        test_samples.len(),
        outcome.best_epoch,
        match train_config.selection_metric {
            train::SelectionMetric::ValAccuracy => "val_accuracy",
            train::SelectionMetric::ValRmse => "val_rmse",
        },
        outcome.best_val_metric,
        args.out.display()
    );
    if outcome.diverged {
        // The best finite checkpoint is on disk, but the run itself failed
        // numerically, so say so in the exit code.
        let note = outcome.divergence_note.unwrap_or_default();
        return Err(numeric(format!(
            "training diverged ({note}); best finite checkpoint kept at {}",
            args.out.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct EvaluateManifest<'a> {
    manifest_version: u32,
    command: &'static str,
    checkpoint: String,
    kg: String,
    log: String,
    labels: Option<String>,
    next_event: bool,
    split_part: &'a str,
    split: &'a SplitSpec,
    workers: usize,
    config_hash: String,
    report: &'a MetricsReport,
}

fn part_name(part: SplitPartArg) -> &'static str {
    match part {
        SplitPartArg::Train => "train",
        SplitPartArg::Val => "val",
        SplitPartArg::Test => "test",
    }
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let spec = &ckpt.params.spec;
    if let Some(d) = args.dim {
        if d != spec.dim {
            return Err(data(format!(
                "embedding dimension mismatch: --dim {d} requested but the checkpoint was trained with d={}",
                spec.dim
            )));
        }
    }
    let mode = TargetMode::from_flags(args.labels.clone(), args.next_event)?;
    let ds = dataset::load_dataset(
        &args.kg,
        &args.log,
        &mode,
        config::task_arg_of(spec.task),
        &ckpt.split,
    )?;
    dataset::verify_vocab(&ckpt.vocab, &ds.graph, &ds.classes)?;
    if ds.task != spec.task {
        return Err(data(format!(
            "task mismatch: checkpoint was trained for {} but the data implies {}",
            spec.task.name(),
            ds.task.name()
        )));
    }
    let part = args.split;
    let samples = &ds.parts[match part {
        SplitPartArg::Train => 0,
        SplitPartArg::Val => 1,
        SplitPartArg::Test => 2,
    }];
    if samples.is_empty() {
        return Err(data(format!(
            "the {} split is empty under the stored fractions (val {}, test {})",
            part_name(part),
            ckpt.split.val_fraction,
            ckpt.split.test_fraction
        )));
    }
    let prepared = net::prepare_samples(samples, &ds.graph, spec)?;
    let index = EdgeIndex::from_graph(&ds.graph);
    let workers = args.workers.unwrap_or(1).max(1);
    let preds = net::predict(&ckpt.params, &index, &prepared, workers)?;
    let targets: Vec<Target> = prepared.iter().map(|s| s.target).collect();
    let report = MetricsReport::compute(
        &preds,
        &targets,
        spec.task,
        &spec.config_hash(),
        Some(ckpt.epoch),
    )?;
    let json = report.to_json();
    println!("{json}");
    if let Some(out) = &args.out {
        write_file(out, &json)?;
        let manifest = EvaluateManifest {
            manifest_version: MANIFEST_VERSION,
            command: "evaluate",
            checkpoint: args.checkpoint.display().to_string(),
            kg: args.kg.display().to_string(),
            log: args.log.display().to_string(),
            labels: args.labels.as_ref().map(|p| p.display().to_string()),
            next_event: args.next_event,
            split_part: part_name(part),
            split: &ckpt.split,
            workers,
            config_hash: spec.config_hash(),
            report: &report,
        };
        write_file(&sidecar(out), &to_pretty_json(&manifest))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct PredictManifest {
    manifest_version: u32,
    command: &'static str,
    checkpoint: String,
    kg: String,
    log: String,
    case: Option<String>,
    workers: usize,
    config_hash: String,
    prediction_count: usize,
}

/// A placeholder target of the right kind; prediction never reads it,
/// but sample preparation validates it against the task.
fn dummy_target(task: TaskKind) -> Target {
    match task {
        TaskKind::Regression => Target::Real(0.0),
        _ => Target::Class(0),
    }
}

fn prediction_line(case: &str, pred: &Tensor, task: TaskKind, classes: &[String]) -> String {
    let value = match task {
        TaskKind::Binary => serde_json::json!({ "case": case, "probability": pred.item() }),
        TaskKind::Multiclass(_) => {
            let k = metrics::predicted_class(pred, task).expect("classification");
            let name = classes.get(k).cloned().unwrap_or_else(|| k.to_string());
            serde_json::json!({
                "case": case,
                "class": name,
                "class_index": k,
                "probability": pred.as_slice()[k],
            })
        }
        TaskKind::Regression => serde_json::json!({ "case": case, "value": pred.item() }),
    };
    value.to_string()
}

pub fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let spec = &ckpt.params.spec;
    let mut graph = load_knowledge_graph(&args.kg)?;
    let log = load_event_log(&args.log, &mut graph, IsolatedNodePolicy::Create)?;
    dataset::verify_vocab(&ckpt.vocab, &graph, &ckpt.vocab.classes)?;
    let cases: Vec<String> = match &args.case {
        Some(c) => {
            if !log.cases().contains(c) {
                return Err(data(format!("case {c:?} does not appear in {}", args.log.display())));
            }
            vec![c.clone()]
        }
        None => log.cases().to_vec(),
    };
    let samples: Vec<Sample> = cases
        .iter()
        .map(|case| {
            Ok(Sample {
                case_id: case.clone(),
                events: log.case_sequence(case, None)?,
                target: dummy_target(spec.task),
            })
        })
        .collect::<Result<_, CliError>>()?;
    let prepared = net::prepare_samples(&samples, &graph, spec)?;
    let index = EdgeIndex::from_graph(&graph);
    let workers = args.workers.unwrap_or(1).max(1);
    let preds = net::predict(&ckpt.params, &index, &prepared, workers)?;
    let mut lines = String::new();
    for (sample, pred) in prepared.iter().zip(&preds) {
        let line = prediction_line(&sample.case_id, pred, spec.task, &ckpt.vocab.classes);
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }
    if let Some(out) = &args.out {
        write_file(out, &lines)?;
        let manifest = PredictManifest {
            manifest_version: MANIFEST_VERSION,
            command: "predict",
            checkpoint: args.checkpoint.display().to_string(),
            kg: args.kg.display().to_string(),
            log: args.log.display().to_string(),
            case: args.case.clone(),
            workers,
            config_hash: spec.config_hash(),
            prediction_count: preds.len(),
        };
        write_file(&sidecar(out), &to_pretty_json(&manifest))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct GradcheckManifest {
    manifest_version: u32,
    command: &'static str,
    dim: usize,
    eps: f64,
    seed: u64,
    threshold: f64,
    max_rel_error: f64,
    checked_entries: usize,
    excluded_entries: usize,
    pass: bool,
}

const GRADCHECK_THRESHOLD: f64 = 1e-4;

pub fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let dim = args.dim.unwrap_or(16);
    let seed = args.seed.unwrap_or(0);
    let (graph, samples) = synth::toy_instance();
    let spec = ModelSpec {
        dim,
        gnn: GnnConfig {
            layers: 2,
            composition: Composition::Multiply,
            flow: Flow::Backward,
            neighbor_norm: NeighborNorm::Sum,
        },
        time: TimeConfig { mode: TimeMode::Sinusoidal, ..TimeConfig::default() },
        task: TaskKind::Binary,
        bias: false,
        allow_empty: false,
        node_count: graph.node_count(),
        relation_count: graph.relation_count(),
    };
    let prepared = net::prepare_samples(&samples, &graph, &spec)?;
    let index = EdgeIndex::from_graph(&graph);
    let init = ModelParams::init(spec.clone(), seed);
    let tensors: Vec<Tensor> = init.tensors().iter().map(|(_, t)| t.clone()).collect();
    let cfg = GradCheckConfig { eps: args.eps.unwrap_or(1e-5), seed, ..GradCheckConfig::default() };
    let report = grad_check(&tensors, |tape, ids| {
        let staged = net::view(&spec, ids.to_vec());
        let h = net::encode_nodes_with(tape, &staged, &index, &spec, |_, v, _| Ok(v))?;
        let mut losses = Vec::with_capacity(prepared.len());
        for sample in &prepared {
            let p = net::sample_output(tape, &staged, &spec, h, sample, |_, v| Ok(v))?;
            let li = match train::sample_loss(tape, p, &sample.target, spec.task) {
                Ok(v) => v,
                Err(TrainError::Autodiff(e)) => return Err(e),
                Err(other) => unreachable!("targets were validated: {other}"),
            };
            losses.push(li);
        }
        train::batch_loss(tape, &losses, 0.0, &[])
    }, &cfg)?;
    let pass = report.max_rel_error < GRADCHECK_THRESHOLD;
    println!(
        "gradient check (d={dim}, 2-layer multiply encoder, sinusoidal time, binary head):\n\
         max relative error {:.3e} over {} entries ({} excluded near kinks)",
        report.max_rel_error, report.checked_entries, report.excluded_entries
    );
    if let Some(out) = &args.out {
        let manifest = GradcheckManifest {
            manifest_version: MANIFEST_VERSION,
            command: "gradcheck",
            dim,
            eps: cfg.eps,
            seed,
            threshold: GRADCHECK_THRESHOLD,
            max_rel_error: report.max_rel_error,
            checked_entries: report.checked_entries,
            excluded_entries: report.excluded_entries,
            pass,
        };
        write_file(out, &to_pretty_json(&manifest))?;
    }
    if !pass {
        return Err(numeric(format!(
            "analytic gradients disagree with finite differences: {:.3e} >= {GRADCHECK_THRESHOLD:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
