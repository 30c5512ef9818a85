//! Shared data assembly for train and evaluate: load the graph and log,
//! derive targets (outcome labels or next-event types), and produce
//! case-disjoint train/val/test sample sets.

use std::path::{Path, PathBuf};

use prock_core::checkpoint::Vocab;
use prock_core::data::{
    self, class_mapping, load_event_log, load_knowledge_graph, outcome_samples,
    prefix_expand_cases, real_mapping, IsolatedNodePolicy, KnowledgeGraph, Sample,
};
use prock_core::head::TaskKind;
use prock_core::metrics::{self, CaseInfo, SplitSpec};

use crate::config::TaskArg;
use crate::error::{data, usage, CliError};

/// How per-case targets are obtained.
#[derive(Debug, Clone)]
pub enum TargetMode {
    /// A `case,label` CSV of outcomes; one sample per labeled case.
    Labels(PathBuf),
    /// Each proper prefix of a case predicts the next event's type.
    NextEvent,
}

impl TargetMode {
    pub fn from_flags(labels: Option<PathBuf>, next_event: bool) -> Result<TargetMode, CliError> {
        match (labels, next_event) {
            (Some(p), false) => Ok(TargetMode::Labels(p)),
            (None, true) => Ok(TargetMode::NextEvent),
            (None, false) => Err(usage("provide --labels <path> or --next-event")),
            (Some(_), true) => Err(usage("--labels and --next-event are mutually exclusive")),
        }
    }
}

pub struct Dataset {
    pub graph: KnowledgeGraph,
    /// Class names in label order; empty for regression.
    pub classes: Vec<String>,
    pub task: TaskKind,
    /// Case-disjoint sample sets: train, val, test.
    pub parts: [Vec<Sample>; 3],
    /// Cases that produced no sample (unlabeled, or too short to have a
    /// proper prefix).
    pub skipped_cases: usize,
}

pub fn load_dataset(
    kg: &Path,
    log_path: &Path,
    mode: &TargetMode,
    task: TaskArg,
    split: &SplitSpec,
) -> Result<Dataset, CliError> {
    let mut graph = load_knowledge_graph(kg)?;
    let log = load_event_log(log_path, &mut graph, IsolatedNodePolicy::Create)?;
    match mode {
        TargetMode::Labels(path) => {
            let pairs = data::load_labels(path)?;
            let (classes, task, map) = match task {
                TaskArg::Regression => {
                    let map = real_mapping(&pairs).map_err(|v| {
                        data(format!(
                            "label {v:?} in {} is not a number (regression task)",
                            path.display()
                        ))
                    })?;
                    (Vec::new(), TaskKind::Regression, map)
                }
                TaskArg::Binary | TaskArg::Multiclass => {
                    let (classes, map) = class_mapping(&pairs);
                    let kind = match task {
                        TaskArg::Binary if classes.len() != 2 => {
                            return Err(data(format!(
                                "binary task needs exactly 2 distinct labels, {} has {}: {:?}",
                                path.display(),
                                classes.len(),
                                classes
                            )));
                        }
                        TaskArg::Binary => TaskKind::Binary,
                        _ => {
                            if classes.len() < 2 {
                                return Err(data(format!(
                                    "multiclass task needs at least 2 distinct labels, {} has {}",
                                    path.display(),
                                    classes.len()
                                )));
                            }
                            TaskKind::Multiclass(classes.len())
                        }
                    };
                    (classes, kind, map)
                }
            };
            let (samples, skipped_cases) = outcome_samples(&log, &map);
            if samples.is_empty() {
                return Err(data(format!(
                    "no case in the log matches a label from {}",
                    path.display()
                )));
            }
            let parts = metrics::split_samples(&samples, split)?;
            Ok(Dataset { graph, classes, task, parts, skipped_cases })
        }
        TargetMode::NextEvent => {
            if task == TaskArg::Binary || task == TaskArg::Regression {
                return Err(usage("--next-event is a multiclass task over event types"));
            }
            let classes = log.types().to_vec();
            if classes.len() < 2 {
                return Err(data(format!(
                    "next-event prediction needs at least 2 event types, the log has {}",
                    classes.len()
                )));
            }
            let infos: Vec<CaseInfo> = log
                .cases()
                .iter()
                .map(|case| {
                    let seq = log.case_sequence(case, None)?;
                    Ok(CaseInfo {
                        case_id: case.clone(),
                        class: None,
                        last_time: seq.last().map(|e| e.timestamp).unwrap_or(0),
                    })
                })
                .collect::<Result<_, CliError>>()?;
            let case_parts = metrics::split(&infos, split)?;
            let mut skipped_cases = 0;
            let parts = case_parts.map(|idx| {
                let names: Vec<&str> = idx.iter().map(|&i| infos[i].case_id.as_str()).collect();
                let (samples, skipped) = prefix_expand_cases(&log, &names);
                skipped_cases += skipped;
                samples
            });
            let task = TaskKind::Multiclass(classes.len());
            Ok(Dataset { graph, classes, task, parts, skipped_cases })
        }
    }
}

/// Confirms that freshly loaded data reproduces the vocabulary a
/// checkpoint was trained against, naming the first difference.
pub fn verify_vocab(vocab: &Vocab, graph: &KnowledgeGraph, classes: &[String]) -> Result<(), CliError> {
    check_list("node", &vocab.nodes, graph.nodes())?;
    check_list("relation", &vocab.relations, graph.relations())?;
    check_list("class", &vocab.classes, classes)
}

fn check_list(what: &str, expected: &[String], found: &[String]) -> Result<(), CliError> {
    if expected == found {
        return Ok(());
    }
    let detail = expected
        .iter()
        .zip(found)
        .position(|(a, b)| a != b)
        .map(|i| format!("first difference at index {i}: {:?} vs {:?}", expected[i], found[i]))
        .unwrap_or_else(|| "one is a prefix of the other".into());
    Err(data(format!(
        "{what} vocabulary does not match the checkpoint ({} stored, {} found; {detail})",
        expected.len(),
        found.len()
    )))
}
