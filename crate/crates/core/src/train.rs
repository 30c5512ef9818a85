//! End-to-end training: loss construction, dropout, optimizers, and the
//! epoch loop with validation-based checkpoint selection.
//!
//! Every source of randomness derives from the run seed. Epoch shuffles
//! and per-step dropout masks each use a dedicated RNG stream keyed by
//! (epoch, step, purpose), so interrupting and replaying a run — or
//! reordering unrelated draws — cannot shift later randomness.

use crate::autodiff::{AutodiffError, Result as AdResult, Tape, ValueId};
use crate::data::Target;
use crate::gnn::EdgeIndex;
use crate::head::TaskKind;
use crate::metrics::{self, MetricsError};
use crate::net::{self, ModelParams, ModelSpec, NetError, PreparedSample};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Probabilities are clamped to [ε, 1−ε] before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid training config: {reason}")]
    BadConfig { reason: String },
    #[error("dropout rate {rate} outside [0, 1)")]
    BadDropoutRate { rate: f64 },
    #[error("class label {label} outside the {classes} classes of the task")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("target kind does not match task `{task}`")]
    TargetMismatch { task: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValAccuracy,
    ValRmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub embedding_dim: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub l2_weight: f64,
    /// Widen l2 from weight matrices to every parameter tensor.
    pub l2_all: bool,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 200,
            embedding_dim: 100,
            batch_size: 32,
            dropout_rate: 0.0,
            l2_weight: 0.0,
            l2_all: false,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            selection_metric: SelectionMetric::ValAccuracy,
        }
    }
}

impl TrainConfig {
    fn validate(&self, spec: &ModelSpec) -> Result<(), TrainError> {
        let fail = |reason: String| Err(TrainError::BadConfig { reason });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(TrainError::BadDropoutRate { rate: self.dropout_rate });
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return fail(format!("l2_weight {} must be non-negative", self.l2_weight));
        }
        if self.embedding_dim != spec.dim {
            return fail(format!(
                "embedding_dim {} disagrees with the model dimension {}",
                self.embedding_dim, spec.dim
            ));
        }
        match (self.selection_metric, spec.task) {
            (SelectionMetric::ValRmse, TaskKind::Regression)
            | (SelectionMetric::ValAccuracy, TaskKind::Binary | TaskKind::Multiclass(_)) => Ok(()),
            (m, t) => fail(format!("selection metric {m:?} does not fit a {} task", t.name())),
        }
    }
}

// ---------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------

/// Per-sample loss node: cross-entropy for classification (clamped
/// probabilities), squared error for regression. Always 1×1.
pub fn sample_loss(
    tape: &mut Tape,
    pred: ValueId,
    target: &Target,
    task: TaskKind,
) -> Result<ValueId, TrainError> {
    let mismatch = || TrainError::TargetMismatch { task: task.name() };
    match task {
        TaskKind::Binary => {
            let y = target.class().ok_or_else(mismatch)?;
            if y > 1 {
                return Err(TrainError::LabelOutOfRange { label: y, classes: 2 });
            }
            let p = tape.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
            let p_true = if y == 1 {
                p
            } else {
                let one = tape.constant(Tensor::scalar(1.0))?;
                tape.sub(one, p)?
            };
            let log_p = tape.ln(p_true)?;
            Ok(tape.scale(log_p, -1.0)?)
        }
        TaskKind::Multiclass(o) => {
            let y = target.class().ok_or_else(mismatch)?;
            if y >= o {
                return Err(TrainError::LabelOutOfRange { label: y, classes: o });
            }
            let mut one_hot = Tensor::zeros(1, o);
            one_hot.set(0, y, 1.0);
            let mask = tape.constant(one_hot)?;
            let picked = tape.hadamard(pred, mask)?;
            let p_y = tape.sum_all(picked)?;
            let p_y = tape.clamp(p_y, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
            let log_p = tape.ln(p_y)?;
            Ok(tape.scale(log_p, -1.0)?)
        }
        TaskKind::Regression => {
            let y = target.real().ok_or_else(mismatch)?;
            let y_const = tape.constant(Tensor::scalar(y))?;
            let diff = tape.sub(pred, y_const)?;
            Ok(tape.hadamard(diff, diff)?)
        }
    }
}

/// Mean of per-sample losses plus `l2_weight · Σ‖W‖²` over the selected
/// parameter tensors.
pub fn batch_loss(
    tape: &mut Tape,
    sample_losses: &[ValueId],
    l2_weight: f64,
    l2_params: &[ValueId],
) -> AdResult<ValueId> {
    let mut total = sample_losses[0];
    for &l in &sample_losses[1..] {
        total = tape.add(total, l)?;
    }
    let mut loss = tape.scale(total, 1.0 / sample_losses.len() as f64)?;
    if l2_weight > 0.0 && !l2_params.is_empty() {
        let mut sq_sum = None;
        for &w in l2_params {
            let sq = tape.hadamard(w, w)?;
            let s = tape.sum_all(sq)?;
            sq_sum = Some(match sq_sum {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let penalty = tape.scale(sq_sum.expect("non-empty"), l2_weight)?;
        loss = tape.add(loss, penalty)?;
    }
    Ok(loss)
}

// ---------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------

/// Inverted dropout on a plain tensor: zeroes entries with probability
/// `rate` and scales survivors by 1/(1−rate); identity when not training.
pub fn apply_dropout<R: Rng>(
    x: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor, TrainError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TrainError::BadDropoutRate { rate });
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    let keep_scale = 1.0 / (1.0 - rate);
    for v in out.as_mut_slice() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { *v * keep_scale };
    }
    Ok(out)
}

/// Tape-level dropout: multiplies by a constant 0-or-1/(1−rate) mask, so
/// gradients flow only through kept entries. Rate 0 returns `x` itself.
pub fn tape_dropout<R: Rng>(
    tape: &mut Tape,
    x: ValueId,
    rate: f64,
    rng: &mut R,
) -> Result<ValueId, TrainError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TrainError::BadDropoutRate { rate });
    }
    Ok(masked(tape, x, rate, rng)?)
}

/// Dropout body with the rate already validated.
fn masked<R: Rng>(tape: &mut Tape, x: ValueId, rate: f64, rng: &mut R) -> AdResult<ValueId> {
    if rate == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = tape.value(x).shape();
    let mask = mask_tensor(rows, cols, rate, rng);
    let mask = tape.constant(mask)?;
    tape.hadamard(x, mask)
}

fn mask_tensor<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Tensor {
    let keep_scale = 1.0 / (1.0 - rate);
    Tensor::from_fn(rows, cols, |_, _| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep_scale
        }
    })
}

/// Multiplies in a pre-drawn mask; `None` (dropout off) is the identity.
fn apply_mask(tape: &mut Tape, x: ValueId, mask: Option<&Tensor>) -> AdResult<ValueId> {
    match mask {
        None => Ok(x),
        Some(m) => {
            let m = tape.constant(m.clone())?;
            tape.hadamard(x, m)
        }
    }
}

// ---------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------

const PURPOSE_SHUFFLE: u64 = 0;
const PURPOSE_DROPOUT: u64 = 1;

/// Independent stream per (epoch, step, purpose) under one seed. Steps
/// per epoch stay far below 2²⁸ at the data scales this targets, so the
/// fields cannot collide.
fn stream_rng(seed: u64, epoch: usize, step: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | ((step as u64) << 4) | purpose);
    rng
}

// ---------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------

struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

/// Parameter updater over the model's tensor list (layout order).
pub struct Optimizer {
    lr: f64,
    adam: Option<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, shapes: &[(usize, usize)]) -> Optimizer {
        let adam = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some(AdamState {
                m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
                v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
                t: 0,
            }),
        };
        Optimizer { lr, adam }
    }

    pub fn step(&mut self, tensors: &mut [(String, Tensor)], grads: &[Tensor]) {
        match &mut self.adam {
            None => {
                for ((_, theta), g) in tensors.iter_mut().zip(grads) {
                    for (t, gv) in theta.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *t -= self.lr * gv;
                    }
                }
            }
            Some(state) => {
                state.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
                for (i, ((_, theta), g)) in tensors.iter_mut().zip(grads).enumerate() {
                    let m = state.m[i].as_mut_slice();
                    let v = state.v[i].as_mut_slice();
                    for (j, (t, gv)) in theta.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gv;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gv * gv;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        *t -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch (or last finite state on divergence).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub history: Vec<EpochStats>,
    pub diverged: bool,
    pub divergence_note: Option<String>,
}

fn val_metric(
    params: &ModelParams,
    index: &EdgeIndex,
    val: &[PreparedSample],
    metric: SelectionMetric,
    workers: usize,
) -> Result<f64, TrainError> {
    let preds = net::predict(params, index, val, workers)?;
    let targets: Vec<Target> = val.iter().map(|s| s.target).collect();
    match metric {
        SelectionMetric::ValAccuracy => Ok(metrics::accuracy(&preds, &targets, params.spec.task)?),
        SelectionMetric::ValRmse => {
            let p: Vec<f64> = preds.iter().map(Tensor::item).collect();
            let t: Vec<f64> = targets.iter().map(|t| t.real().unwrap_or(f64::NAN)).collect();
            Ok(metrics::rmse(&p, &t)?)
        }
    }
}

/// True when `candidate` beats `best` under the metric's direction.
fn improves(metric: SelectionMetric, candidate: f64, best: f64) -> bool {
    match metric {
        SelectionMetric::ValAccuracy => candidate > best,
        SelectionMetric::ValRmse => candidate < best,
    }
}

/// Sum of per-sample losses for a slice of the minibatch, plus the leaf
/// gradients of that sum. Each chunk builds its own tape; dropout masks
/// are pre-drawn so the result does not depend on how work is chunked.
fn chunk_grads(
    params: &ModelParams,
    index: &EdgeIndex,
    samples: &[PreparedSample],
    chunk: &[usize],
    layer_masks: &[Tensor],
    hidden_masks: &[Tensor],
    mask_offset: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let spec = &params.spec;
    let mut tape = Tape::new();
    let staged = net::stage(&mut tape, params)?;
    let h = net::encode_nodes_with(&mut tape, &staged, index, spec, |t, hid, layer| {
        apply_mask(t, hid, layer_masks.get(layer))
    })?;
    let mut total: Option<ValueId> = None;
    for (k, &i) in chunk.iter().enumerate() {
        let sample = &samples[i];
        let pred = net::sample_output(&mut tape, &staged, spec, h, sample, |t, hid| {
            apply_mask(t, hid, hidden_masks.get(mask_offset + k))
        })?;
        let li = sample_loss(&mut tape, pred, &sample.target, spec.task)?;
        total = Some(match total {
            None => li,
            Some(acc) => tape.add(acc, li)?,
        });
    }
    let total = total.expect("chunks are non-empty");
    let loss_sum = tape.value(total).item();
    tape.backward(total)?;
    let grads = staged
        .ids
        .iter()
        .map(|&id| tape.grad(id).expect("staged leaves keep gradients").clone())
        .collect();
    Ok((loss_sum, grads))
}

/// One gradient step over a minibatch. Returns the batch loss.
///
/// With `workers > 1` the batch is split into contiguous chunks graded on
/// separate threads; chunk gradients are reduced in chunk order, so a run
/// is deterministic for a fixed worker count.
#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    index: &EdgeIndex,
    samples: &[PreparedSample],
    batch: &[usize],
    config: &TrainConfig,
    epoch: usize,
    step: usize,
    workers: usize,
) -> Result<f64, TrainError> {
    let rate = config.dropout_rate;
    let spec = &params.spec;
    // Masks are drawn once, in a fixed order (per layer, then per batch
    // position), regardless of chunking.
    let mut drop_rng = stream_rng(config.seed, epoch, step, PURPOSE_DROPOUT);
    let (layer_masks, hidden_masks): (Vec<Tensor>, Vec<Tensor>) = if rate == 0.0 {
        (Vec::new(), Vec::new())
    } else {
        (
            (0..spec.gnn.layers)
                .map(|_| mask_tensor(spec.node_count, spec.dim, rate, &mut drop_rng))
                .collect(),
            batch
                .iter()
                .map(|_| mask_tensor(1, spec.dim, rate, &mut drop_rng))
                .collect(),
        )
    };

    let chunk_size = batch.len().div_ceil(workers.max(1));
    let results: Vec<Result<(f64, Vec<Tensor>), TrainError>> = if workers <= 1 {
        vec![chunk_grads(params, index, samples, batch, &layer_masks, &hidden_masks, 0)]
    } else {
        let shared = &*params;
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk_size)
                .enumerate()
                .map(|(ci, chunk)| {
                    let (lm, hm) = (&layer_masks, &hidden_masks);
                    scope.spawn(move || {
                        chunk_grads(shared, index, samples, chunk, lm, hm, ci * chunk_size)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    };

    let mut loss_value = 0.0;
    let mut grads: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    for result in results {
        let (chunk_loss, chunk_grads) = result?;
        loss_value += chunk_loss;
        for (acc, g) in grads.iter_mut().zip(&chunk_grads) {
            for (a, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += v;
            }
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    loss_value *= inv_n;
    for g in &mut grads {
        for v in g.as_mut_slice() {
            *v *= inv_n;
        }
    }
    if config.l2_weight > 0.0 {
        for (i, (name, w)) in params.tensors().iter().enumerate() {
            if config.l2_all || ModelParams::is_weight_matrix(name) {
                let mut sq = 0.0;
                for (g, wv) in grads[i].as_mut_slice().iter_mut().zip(w.as_slice()) {
                    sq += wv * wv;
                    *g += 2.0 * config.l2_weight * wv;
                }
                loss_value += config.l2_weight * sq;
            }
        }
    }

    if !loss_value.is_finite() {
        return Err(AutodiffError::NonFinite { op: "batch loss" }.into());
    }
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(AutodiffError::NonFinite { op: "gradient" }.into());
    }
    optimizer.step(params.tensors_mut(), &grads);
    if params.tensors().iter().any(|(_, t)| !t.all_finite()) {
        return Err(AutodiffError::NonFinite { op: "optimizer update" }.into());
    }
    Ok(loss_value)
}

/// Full training run: `epochs × ⌈n/batch_size⌉` steps, re-encoding the
/// graph every step, evaluating `selection_metric` on the validation set
/// after each epoch, and returning the best epoch's parameters. A
/// non-finite loss, gradient, or update stops the run early and returns
/// the best (still finite) state with a diagnostic instead of failing.
///
/// `workers` bounds how many threads each batch is spread over; results
/// are deterministic for a fixed worker count.
pub fn train(
    spec: &ModelSpec,
    index: &EdgeIndex,
    train_samples: &[PreparedSample],
    val_samples: &[PreparedSample],
    config: &TrainConfig,
    workers: usize,
) -> Result<TrainOutcome, TrainError> {
    config.validate(spec)?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(TrainError::BadConfig {
            reason: "training and validation sets must be non-empty".into(),
        });
    }
    let mut params = ModelParams::init(spec.clone(), config.seed);
    let initial = params.clone();
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, t)| t.shape()).collect();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &shapes);
    let mut best: Option<(ModelParams, usize, f64)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut divergence_note = None;

    'epochs: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut stream_rng(config.seed, epoch, 0, PURPOSE_SHUFFLE));
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            match train_step(
                &mut params,
                &mut optimizer,
                index,
                train_samples,
                batch,
                config,
                epoch,
                step,
                workers,
            ) {
                Ok(loss) => {
                    loss_sum += loss;
                    batches += 1;
                }
                Err(TrainError::Autodiff(AutodiffError::NonFinite { op })) => {
                    divergence_note = Some(format!(
                        "diverged at epoch {epoch}, step {step}: non-finite {op}"
                    ));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        // Parameters can stay finite while their predictions overflow;
        // that is divergence too, not a hard error.
        let metric = match val_metric(&params, index, val_samples, config.selection_metric, workers)
        {
            Ok(m) => m,
            Err(TrainError::Autodiff(AutodiffError::NonFinite { op })) => {
                divergence_note = Some(format!(
                    "diverged at epoch {epoch} validation: non-finite {op}"
                ));
                break 'epochs;
            }
            Err(e) => return Err(e),
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_metric: metric,
        });
        if best.as_ref().is_none_or(|(_, _, b)| improves(config.selection_metric, metric, *b)) {
            best = Some((params.clone(), epoch, metric));
        }
    }

    let diverged = divergence_note.is_some();
    let (best_params, best_epoch, best_val_metric) = match best {
        Some(b) => b,
        // Divergence before the first epoch finished: fall back to the
        // initial parameters, scored on the validation set.
        None => {
            let metric =
                val_metric(&initial, index, val_samples, config.selection_metric, workers)?;
            (initial, 0, metric)
        }
    };
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_val_metric,
        history,
        diverged,
        divergence_note,
    })
}
