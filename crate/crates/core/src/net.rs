//! Model assembly: the full parameter set, its canonical layout, staging
//! onto tapes, sample preparation, and inference.
//!
//! [`ModelParams`] owns every trainable tensor in a fixed, named order —
//! embedding tables, per-layer convolution weights, head weights, optional
//! biases and time table. The same layout drives optimizer state,
//! checkpoint serialization, and gradient checking, so tensor `i` means
//! the same thing everywhere.

use crate::autodiff::{AutodiffError, Result as AdResult, Tape, ValueId};
use crate::data::{KnowledgeGraph, Sample, Target};
use crate::embed::{self, EventSlots, TimeConfig, TimeMode};
use crate::gnn::{self, EdgeIndex, Flow, GnnConfig, GnnIds, GnnLayerIds};
use crate::head::{self, HeadIds, TaskKind};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
    #[error("case `{case}`: label {label} outside the {classes} known classes")]
    LabelOutOfRange {
        case: String,
        label: usize,
        classes: usize,
    },
    #[error("case `{case}`: target kind does not match task `{task}`")]
    TargetMismatch { case: String, task: &'static str },
    #[error("case `{case}` has no events and empty cases are not allowed")]
    EmptyCase { case: String },
}

/// Everything that fixes the model's architecture and shapes. Two runs
/// with equal specs produce interchangeable checkpoints; the spec's hash
/// guards against evaluating a checkpoint under a different architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dim: usize,
    pub gnn: GnnConfig,
    pub time: TimeConfig,
    pub task: TaskKind,
    pub bias: bool,
    /// Map an empty case to a zero pooled representation instead of
    /// failing.
    pub allow_empty: bool,
    pub node_count: usize,
    pub relation_count: usize,
}

impl ModelSpec {
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Canonical tensor layout: `(name, rows, cols)` in staging order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let d = self.dim;
        let o = self.task.output_dim();
        let mut out = vec![
            ("node_table".to_string(), self.node_count, d),
            ("relation_table".to_string(), self.relation_count, d),
        ];
        for i in 0..self.gnn.layers {
            out.push((format!("layer{i}.w_self"), d, d));
            out.push((format!("layer{i}.w_adj"), d, d));
            if self.gnn.flow == Flow::Bidirectional {
                out.push((format!("layer{i}.w_adj_fwd"), d, d));
            }
            out.push((format!("layer{i}.w_rel"), d, d));
        }
        out.push(("head.w1".to_string(), d, d));
        out.push(("head.w2".to_string(), d, d));
        out.push(("head.w3".to_string(), d, o));
        if self.bias {
            out.push(("head.b1".to_string(), 1, d));
            out.push(("head.b2".to_string(), 1, d));
            out.push(("head.b3".to_string(), 1, o));
        }
        if self.time.mode == TimeMode::Parameterized {
            out.push(("time.table".to_string(), self.time.buckets, d));
        }
        out
    }
}

/// The model's tensors in canonical layout order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub spec: ModelSpec,
    tensors: Vec<(String, Tensor)>,
}

impl ModelParams {
    /// Random initialization: uniform(−1/√d, 1/√d) everywhere except bias
    /// rows, which start at zero.
    pub fn init(spec: ModelSpec, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (spec.dim as f64).sqrt();
        let tensors = spec
            .layout()
            .into_iter()
            .map(|(name, rows, cols)| {
                let t = if name.starts_with("head.b") {
                    Tensor::zeros(rows, cols)
                } else {
                    Tensor::uniform(rows, cols, -bound, bound, &mut rng)
                };
                (name, t)
            })
            .collect();
        ModelParams { spec, tensors }
    }

    /// Rebuilds params from named tensors (checkpoint load), verifying the
    /// names and shapes against the spec's layout.
    pub fn from_tensors(spec: ModelSpec, tensors: Vec<(String, Tensor)>) -> Result<ModelParams, String> {
        let layout = spec.layout();
        if layout.len() != tensors.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            ));
        }
        for ((name, rows, cols), (got_name, got)) in layout.iter().zip(&tensors) {
            if name != got_name {
                return Err(format!("expected tensor `{name}`, found `{got_name}`"));
            }
            if got.shape() != (*rows, *cols) {
                return Err(format!(
                    "tensor `{name}`: expected {rows}x{cols}, found {}x{}",
                    got.rows(),
                    got.cols()
                ));
            }
        }
        Ok(ModelParams { spec, tensors })
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Weight matrices (the `.w*` tensors) — the default l2 scope, which
    /// excludes embedding tables, biases, and the time table.
    pub fn is_weight_matrix(name: &str) -> bool {
        name.contains(".w")
    }
}

/// Typed tape handles for all staged parameters, parallel to the layout.
#[derive(Debug, Clone)]
pub struct StagedModel {
    pub ids: Vec<ValueId>,
    pub gnn: GnnIds,
    pub head: HeadIds,
    pub time_table: Option<ValueId>,
}

/// Stages parameters as trainable leaves (training steps).
pub fn stage(tape: &mut Tape, params: &ModelParams) -> AdResult<StagedModel> {
    let mut ids = Vec::with_capacity(params.tensors.len());
    for (_, t) in &params.tensors {
        ids.push(tape.leaf(t.clone())?);
    }
    Ok(view(&params.spec, ids))
}

/// Stages parameters as constants (inference: no gradient buffers).
pub fn stage_const(tape: &mut Tape, params: &ModelParams) -> AdResult<StagedModel> {
    let mut ids = Vec::with_capacity(params.tensors.len());
    for (_, t) in &params.tensors {
        ids.push(tape.constant(t.clone())?);
    }
    Ok(view(&params.spec, ids))
}

/// Builds the typed view over ids that were staged in layout order —
/// gradient checking stages the raw tensors itself and uses this to
/// reconstitute the model.
pub fn view(spec: &ModelSpec, ids: Vec<ValueId>) -> StagedModel {
    let mut cursor = 0;
    let mut next = || {
        let id = ids[cursor];
        cursor += 1;
        id
    };
    let node_table = next();
    let relation_table = next();
    let mut layers = Vec::with_capacity(spec.gnn.layers);
    for _ in 0..spec.gnn.layers {
        layers.push(GnnLayerIds {
            w_self: next(),
            w_adj: next(),
            w_adj_fwd: if spec.gnn.flow == Flow::Bidirectional {
                Some(next())
            } else {
                None
            },
            w_rel: next(),
        });
    }
    let w1 = next();
    let w2 = next();
    let w3 = next();
    let (b1, b2, b3) = if spec.bias {
        (Some(next()), Some(next()), Some(next()))
    } else {
        (None, None, None)
    };
    let time_table = if spec.time.mode == TimeMode::Parameterized {
        Some(next())
    } else {
        None
    };
    debug_assert_eq!(cursor, ids.len());
    StagedModel {
        gnn: GnnIds {
            node_table,
            relation_table,
            layers,
        },
        head: HeadIds {
            w1,
            w2,
            w3,
            b1,
            b2,
            b3,
        },
        time_table,
        ids,
    }
}

/// A sample resolved against the graph and time config: ready to embed.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub case_id: String,
    pub slots: EventSlots,
    pub target: Target,
}

/// Resolves samples into gather/scatter plans and validates targets
/// against the task.
pub fn prepare_samples(
    samples: &[Sample],
    graph: &KnowledgeGraph,
    spec: &ModelSpec,
) -> Result<Vec<PreparedSample>, NetError> {
    samples
        .iter()
        .map(|s| {
            match (&s.target, spec.task) {
                (Target::Class(c), TaskKind::Binary) if *c > 1 => {
                    return Err(NetError::LabelOutOfRange {
                        case: s.case_id.clone(),
                        label: *c,
                        classes: 2,
                    })
                }
                (Target::Class(c), TaskKind::Multiclass(o)) if *c >= o => {
                    return Err(NetError::LabelOutOfRange {
                        case: s.case_id.clone(),
                        label: *c,
                        classes: o,
                    })
                }
                (Target::Real(_), TaskKind::Binary | TaskKind::Multiclass(_))
                | (Target::Class(_), TaskKind::Regression) => {
                    return Err(NetError::TargetMismatch {
                        case: s.case_id.clone(),
                        task: spec.task.name(),
                    })
                }
                _ => {}
            }
            if s.events.is_empty() && !spec.allow_empty {
                return Err(NetError::EmptyCase {
                    case: s.case_id.clone(),
                });
            }
            let slots = embed::prepare_events(&s.events, graph, &spec.time, spec.dim)?;
            Ok(PreparedSample {
                case_id: s.case_id.clone(),
                slots,
                target: s.target,
            })
        })
        .collect()
}

/// Runs the graph encoder part of the model. `layer_hook` is applied to
/// each layer's node output (dropout during training).
pub fn encode_nodes_with<F>(
    tape: &mut Tape,
    staged: &StagedModel,
    index: &EdgeIndex,
    spec: &ModelSpec,
    layer_hook: F,
) -> AdResult<ValueId>
where
    F: FnMut(&mut Tape, ValueId, usize) -> AdResult<ValueId>,
{
    let (h, _) = gnn::encode_with(tape, index, &staged.gnn, &spec.gnn, layer_hook)?;
    Ok(h)
}

/// One sample's prediction (1×o) from already-encoded node embeddings.
/// `hidden_hook` is applied after the head's hidden layer.
pub fn sample_output<F>(
    tape: &mut Tape,
    staged: &StagedModel,
    spec: &ModelSpec,
    h_nodes: ValueId,
    sample: &PreparedSample,
    hidden_hook: F,
) -> AdResult<ValueId>
where
    F: FnMut(&mut Tape, ValueId) -> AdResult<ValueId>,
{
    if sample.slots.n_events == 0 {
        // Only reachable with allow_empty: the pooled representation is
        // defined as zero.
        let pooled = tape.constant(Tensor::zeros(1, spec.dim))?;
        return head::head_from_pooled(tape, pooled, &staged.head, spec.task, hidden_hook);
    }
    let phi = embed::embed_events(tape, &sample.slots, h_nodes, staged.time_table)?;
    head::head_forward(tape, phi, &staged.head, spec.task, hidden_hook)
}

/// Node embeddings in inference mode, as a plain tensor.
pub fn encode_nodes(params: &ModelParams, index: &EdgeIndex) -> Result<Tensor, AutodiffError> {
    let mut tape = Tape::new();
    let staged = stage_const(&mut tape, params)?;
    let h = encode_nodes_with(&mut tape, &staged, index, &params.spec, gnn::no_hook)?;
    Ok(tape.value(h).clone())
}

/// Inference-mode predictions (one 1×o tensor per sample, in order).
/// `workers` > 1 splits the samples across threads; results are identical
/// to the single-threaded run because every sample is independent.
pub fn predict(
    params: &ModelParams,
    index: &EdgeIndex,
    samples: &[PreparedSample],
    workers: usize,
) -> Result<Vec<Tensor>, AutodiffError> {
    let h = encode_nodes(params, index)?;
    let run_chunk = |chunk: &[PreparedSample]| -> Result<Vec<Tensor>, AutodiffError> {
        let mut tape = Tape::new();
        let staged = stage_const(&mut tape, params)?;
        let h_id = tape.constant(h.clone())?;
        let mut out = Vec::with_capacity(chunk.len());
        for sample in chunk {
            let p = sample_output(&mut tape, &staged, &params.spec, h_id, sample, head::no_hook)?;
            out.push(tape.value(p).clone());
        }
        Ok(out)
    };
    if workers <= 1 || samples.len() < 2 {
        return run_chunk(samples);
    }
    let chunk_size = samples.len().div_ceil(workers);
    let chunks: Vec<&[PreparedSample]> = samples.chunks(chunk_size).collect();
    let mut results: Vec<Result<Vec<Tensor>, AutodiffError>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks.into_iter().map(|c| scope.spawn(move || run_chunk(c))).collect();
        for handle in handles {
            results.push(handle.join().expect("prediction worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(samples.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
