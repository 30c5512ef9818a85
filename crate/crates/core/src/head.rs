//! The prediction head: per-event linear transform, mean pooling over the
//! case's events, one hidden relu layer, and a task-dependent output
//! activation.
//!
//! ```text
//! φ'_ℓ = W1·φ_ℓ      φ'' = (1/n) Σ_ℓ φ'_ℓ      φ''' = relu(W2·φ'')
//! P = g(W3·φ''')     g = sigmoid | softmax | identity
//! ```
//!
//! Mean pooling makes the head exactly permutation- and duplication-
//! invariant over events (the pooling op sums in a content-canonical
//! order); sequence order can only enter through time embeddings upstream.
//! All transforms are bias-free by default, with optional bias rows.

use crate::autodiff::{Result as AdResult, Tape, ValueId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Single sigmoid output, class 1 probability.
    Binary,
    /// Softmax over the given number of classes.
    Multiclass(usize),
    /// Single unconstrained output.
    Regression,
}

impl TaskKind {
    pub fn output_dim(&self) -> usize {
        match self {
            TaskKind::Binary | TaskKind::Regression => 1,
            TaskKind::Multiclass(o) => *o,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Binary => "binary",
            TaskKind::Multiclass(_) => "multiclass",
            TaskKind::Regression => "regression",
        }
    }
}

/// Tape handles for the head weights; biases are present only when the
/// model was built with them.
#[derive(Debug, Clone, Copy)]
pub struct HeadIds {
    pub w1: ValueId,
    pub w2: ValueId,
    pub w3: ValueId,
    pub b1: Option<ValueId>,
    pub b2: Option<ValueId>,
    pub b3: Option<ValueId>,
}

/// Full head over an n×d event-embedding matrix, producing a 1×o output.
/// `after_hidden` runs on φ''' (the trainer hooks dropout there); use
/// [`no_hook`] elsewhere. An empty event matrix is an error — callers that
/// allow empty cases substitute a zero pooled row via
/// [`head_from_pooled`].
pub fn head_forward<F>(
    tape: &mut Tape,
    phi: ValueId,
    ids: &HeadIds,
    task: TaskKind,
    after_hidden: F,
) -> AdResult<ValueId>
where
    F: FnMut(&mut Tape, ValueId) -> AdResult<ValueId>,
{
    let mut transformed = tape.matmul(phi, ids.w1)?;
    if let Some(b1) = ids.b1 {
        transformed = tape.add_row(transformed, b1)?;
    }
    let pooled = tape.mean_rows(transformed)?;
    head_from_pooled(tape, pooled, ids, task, after_hidden)
}

/// Head from the pooled 1×d representation onward.
pub fn head_from_pooled<F>(
    tape: &mut Tape,
    pooled: ValueId,
    ids: &HeadIds,
    task: TaskKind,
    mut after_hidden: F,
) -> AdResult<ValueId>
where
    F: FnMut(&mut Tape, ValueId) -> AdResult<ValueId>,
{
    let mut hidden = tape.matmul(pooled, ids.w2)?;
    if let Some(b2) = ids.b2 {
        hidden = tape.add_row(hidden, b2)?;
    }
    let hidden = tape.relu(hidden)?;
    let hidden = after_hidden(tape, hidden)?;
    let mut logits = tape.matmul(hidden, ids.w3)?;
    if let Some(b3) = ids.b3 {
        logits = tape.add_row(logits, b3)?;
    }
    match task {
        TaskKind::Binary => tape.sigmoid(logits),
        TaskKind::Multiclass(_) => tape.softmax_rows(logits),
        TaskKind::Regression => Ok(logits),
    }
}

/// Identity hook for inference and tests.
pub fn no_hook(_tape: &mut Tape, h: ValueId) -> AdResult<ValueId> {
    Ok(h)
}
