//! Event embeddings: each event becomes φ = β + f(τ), where β mean-pools
//! the graph embeddings of the event's attribute nodes and f embeds the
//! timestamp (zero, fixed sinusoid, or a learned bucket table).
//!
//! The module has two faces. The reference functions
//! ([`aggregate_attributes`], [`embed_timestamp`], [`embed_event`]) compute
//! one event at a time with plain loops and serve as the oracle in tests.
//! The tape path ([`prepare_events`] + [`embed_events`]) builds the whole
//! event matrix of a sample with one gather–scale–scatter, which is what
//! training uses: attribute node indices are pre-sorted per event, so the
//! pooled result is bit-identical however the attribute map was ordered.

use crate::autodiff::{Result as AdResult, Tape, ValueId};
use crate::data::{Event, KnowledgeGraph};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("attribute `{attribute}` of a `{event_type}` event names unknown node `{value}`")]
    UnknownNode {
        attribute: String,
        event_type: String,
        value: String,
    },
    #[error("node index {index} outside embedding table of {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("parameterized time embedding needs a bucket table")]
    MissingTimeTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    None,
    Sinusoidal,
    Parameterized,
}

/// What the bucket index of the parameterized embedding is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKey {
    /// The event's timestamp.
    Absolute,
    /// The event's position within its case sequence.
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub mode: TimeMode,
    /// Bucket-table rows (parameterized mode); indices clamp to the last row.
    pub buckets: usize,
    /// Time units per bucket (parameterized mode, absolute key).
    pub bucket_size: u64,
    pub key: TimeKey,
    /// Sinusoid frequency base.
    pub base: f64,
    /// Divisor applied to τ before the sinusoid, to tame large time units.
    pub scale: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            mode: TimeMode::None,
            buckets: 64,
            bucket_size: 1,
            key: TimeKey::Absolute,
            base: 10_000.0,
            scale: 1.0,
        }
    }
}

/// The sinusoid row for one timestamp: dimension 2j holds
/// sin(t / base^{2j/d}) and dimension 2j+1 the matching cosine, with
/// t = τ/scale.
pub fn sinusoidal_row(tau: u64, d: usize, base: f64, scale: f64) -> Vec<f64> {
    let t = tau as f64 / scale;
    (0..d)
        .map(|j| {
            let freq = base.powf((2 * (j / 2)) as f64 / d as f64);
            if j % 2 == 0 {
                (t / freq).sin()
            } else {
                (t / freq).cos()
            }
        })
        .collect()
}

/// Bucket index for the parameterized embedding, clamped into the table.
pub fn bucket_of(key_value: u64, cfg: &TimeConfig) -> usize {
    let raw = (key_value / cfg.bucket_size.max(1)) as usize;
    raw.min(cfg.buckets.saturating_sub(1))
}

/// Reference timestamp embedding. `key_value` is the timestamp or the
/// event's sequence position, per `cfg.key`.
pub fn embed_timestamp(
    key_value: u64,
    cfg: &TimeConfig,
    table: Option<&Tensor>,
    d: usize,
) -> Result<Vec<f64>, EmbedError> {
    match cfg.mode {
        TimeMode::None => Ok(vec![0.0; d]),
        TimeMode::Sinusoidal => Ok(sinusoidal_row(key_value, d, cfg.base, cfg.scale)),
        TimeMode::Parameterized => {
            let table = table.ok_or(EmbedError::MissingTimeTable)?;
            Ok(table.row(bucket_of(key_value, cfg)).to_vec())
        }
    }
}

/// Reference attribute pooling: the mean of the event's attribute node
/// embeddings, zero when the event has no attributes. Duplicate node
/// references count once per attribute occurrence.
pub fn aggregate_attributes(
    event: &Event,
    graph: &KnowledgeGraph,
    h: &Tensor,
) -> Result<Vec<f64>, EmbedError> {
    let d = h.cols();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for (name, value) in &event.attributes {
        let idx = graph.node_id(value).ok_or_else(|| EmbedError::UnknownNode {
            attribute: name.clone(),
            event_type: event.event_type.clone(),
            value: value.clone(),
        })?;
        if idx >= h.rows() {
            return Err(EmbedError::IndexOutOfRange {
                index: idx,
                len: h.rows(),
            });
        }
        for (s, v) in sum.iter_mut().zip(h.row(idx)) {
            *s += v;
        }
        count += 1;
    }
    if count > 0 {
        for s in &mut sum {
            *s /= count as f64;
        }
    }
    Ok(sum)
}

/// Reference event embedding φ = β + f(τ). `position` is the event's index
/// in its case sequence, used when the time key is positional.
pub fn embed_event(
    event: &Event,
    position: usize,
    graph: &KnowledgeGraph,
    h: &Tensor,
    cfg: &TimeConfig,
    table: Option<&Tensor>,
) -> Result<Vec<f64>, EmbedError> {
    let beta = aggregate_attributes(event, graph, h)?;
    let key_value = match cfg.key {
        TimeKey::Absolute => event.timestamp,
        TimeKey::Position => position as u64,
    };
    let f = embed_timestamp(key_value, cfg, table, h.cols())?;
    Ok(beta.iter().zip(&f).map(|(b, t)| b + t).collect())
}

/// Precomputed gather/scatter plan for one sample's event matrix.
#[derive(Debug, Clone)]
pub struct EventSlots {
    pub n_events: usize,
    /// Flat attribute node indices, sorted within each event.
    attr_nodes: Vec<usize>,
    /// Destination event row for each entry of `attr_nodes`.
    attr_slots: Vec<usize>,
    /// 1/|attributes| of the owning event, per entry.
    attr_weights: Vec<f64>,
    time: TimePlan,
}

#[derive(Debug, Clone)]
enum TimePlan {
    Zero,
    Fixed(Tensor),
    Learned(Vec<usize>),
}

/// Resolves a chronologically ordered event sequence into an embedding
/// plan: attribute node indices (sorted per event for canonical summation),
/// scatter slots, pooling weights, and the time rows or bucket indices.
pub fn prepare_events(
    events: &[Arc<Event>],
    graph: &KnowledgeGraph,
    cfg: &TimeConfig,
    d: usize,
) -> Result<EventSlots, EmbedError> {
    let n = events.len();
    let mut attr_nodes = Vec::new();
    let mut attr_slots = Vec::new();
    let mut attr_weights = Vec::new();
    for (pos, event) in events.iter().enumerate() {
        let mut nodes = Vec::with_capacity(event.attributes.len());
        for (name, value) in &event.attributes {
            let idx = graph.node_id(value).ok_or_else(|| EmbedError::UnknownNode {
                attribute: name.clone(),
                event_type: event.event_type.clone(),
                value: value.clone(),
            })?;
            nodes.push(idx);
        }
        nodes.sort_unstable();
        let w = 1.0 / nodes.len().max(1) as f64;
        for idx in nodes {
            attr_nodes.push(idx);
            attr_slots.push(pos);
            attr_weights.push(w);
        }
    }
    let time = match cfg.mode {
        TimeMode::None => TimePlan::Zero,
        TimeMode::Sinusoidal => {
            let mut rows = Tensor::zeros(n, d);
            for (pos, event) in events.iter().enumerate() {
                let key = match cfg.key {
                    TimeKey::Absolute => event.timestamp,
                    TimeKey::Position => pos as u64,
                };
                rows.row_mut(pos)
                    .copy_from_slice(&sinusoidal_row(key, d, cfg.base, cfg.scale));
            }
            TimePlan::Fixed(rows)
        }
        TimeMode::Parameterized => TimePlan::Learned(
            events
                .iter()
                .enumerate()
                .map(|(pos, event)| {
                    let key = match cfg.key {
                        TimeKey::Absolute => event.timestamp,
                        TimeKey::Position => pos as u64,
                    };
                    bucket_of(key, cfg)
                })
                .collect(),
        ),
    };
    Ok(EventSlots {
        n_events: n,
        attr_nodes,
        attr_slots,
        attr_weights,
        time,
    })
}

/// Builds the n×d event-embedding matrix of one sample on the tape:
/// gather the attribute rows from `h_nodes`, scale by the pooling weights,
/// scatter-add into event rows, then add the time rows.
pub fn embed_events(
    tape: &mut Tape,
    slots: &EventSlots,
    h_nodes: ValueId,
    time_table: Option<ValueId>,
) -> AdResult<ValueId> {
    let d = tape.value(h_nodes).cols();
    let gathered = tape.gather_rows(h_nodes, &slots.attr_nodes)?;
    let weights = Tensor::from_fn(slots.attr_weights.len(), d, |r, _| slots.attr_weights[r]);
    let weights = tape.constant(weights)?;
    let weighted = tape.hadamard(gathered, weights)?;
    let beta = tape.scatter_add_rows(slots.n_events, &slots.attr_slots, weighted)?;
    match &slots.time {
        TimePlan::Zero => Ok(beta),
        TimePlan::Fixed(rows) => {
            let rows = tape.constant(rows.clone())?;
            tape.add(beta, rows)
        }
        TimePlan::Learned(buckets) => {
            let table = time_table.expect("parameterized time plan requires a staged table");
            let rows = tape.gather_rows(table, buckets)?;
            tape.add(beta, rows)
        }
    }
}
