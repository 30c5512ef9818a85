//! Event logs, cases, and knowledge graphs: the two data views the model
//! consumes, with loaders, canonical writers, and sample construction.
//!
//! A knowledge graph is a set of `(head, relation, tail)` triples over
//! string-identified nodes. An event log is a list of timestamped, case-
//! tagged events whose attribute values are node identifiers into that
//! graph. Node, relation, type, and case vocabularies are interned in
//! first-seen order so that dense indices are reproducible across runs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Reserved attribute name carrying the event's type as a graph node, so
/// the type participates in attribute mean pooling like any other value.
pub const TYPE_ATTR: &str = "__type";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: missing mandatory column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path}: column name `{column}` is reserved")]
    ReservedColumn { path: String, column: String },
    #[error("{path}: row {row}: attribute value `{value}` is not a known graph node")]
    UnknownNode {
        path: String,
        row: usize,
        value: String,
    },
    #[error("unknown case id `{0}`")]
    UnknownCase(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Directed multi-relational graph of `(head, relation, tail)` triples.
/// Nodes and relations are interned strings with dense first-seen indices;
/// duplicate edges collapse on insertion.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<String>,
    relations: Vec<String>,
    edges: Vec<(usize, usize, usize)>,
    node_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    edge_set: HashSet<(usize, usize, usize)>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        KnowledgeGraph::default()
    }

    /// Interns a node id, returning its dense index.
    pub fn add_node(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.node_index.get(id) {
            return idx;
        }
        let idx = self.nodes.len();
        self.nodes.push(id.to_string());
        self.node_index.insert(id.to_string(), idx);
        idx
    }

    pub fn add_relation(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.relation_index.get(id) {
            return idx;
        }
        let idx = self.relations.len();
        self.relations.push(id.to_string());
        self.relation_index.insert(id.to_string(), idx);
        idx
    }

    /// Adds a triple, interning ids as needed. Returns false if the exact
    /// edge was already present.
    pub fn add_edge(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.add_node(head);
        let r = self.add_relation(relation);
        let t = self.add_node(tail);
        if self.edge_set.insert((h, r, t)) {
            self.edges.push((h, r, t));
            true
        } else {
            false
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn node_name(&self, idx: usize) -> &str {
        &self.nodes[idx]
    }

    pub fn relation_name(&self, idx: usize) -> &str {
        &self.relations[idx]
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// Edges as `(head, relation, tail)` dense-index triples, insertion order.
    pub fn edges(&self) -> &[(usize, usize, usize)] {
        &self.edges
    }

    /// Nodes that appear in no edge.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let mut touched = vec![false; self.nodes.len()];
        for &(h, _, t) in &self.edges {
            touched[h] = true;
            touched[t] = true;
        }
        (0..self.nodes.len()).filter(|&v| !touched[v]).collect()
    }

    /// Canonical text form: sorted `@node` lines for isolated nodes, then
    /// sorted tab-separated triples. Loading this back yields an equal graph.
    pub fn to_canonical_string(&self) -> String {
        let mut isolated: Vec<&str> = self
            .isolated_nodes()
            .into_iter()
            .map(|v| self.nodes[v].as_str())
            .collect();
        isolated.sort_unstable();
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|&(h, r, t)| format!("{}\t{}\t{}", self.nodes[h], self.relations[r], self.nodes[t]))
            .collect();
        lines.sort_unstable();
        let mut out = String::new();
        for id in isolated {
            let _ = writeln!(out, "@node {}", id);
        }
        for line in lines {
            let _ = writeln!(out, "{}", line);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_canonical_string()).map_err(|e| io_err(path, e))
    }
}

/// Parses the tab-separated triple format: one `head<TAB>relation<TAB>tail`
/// per line, `#` comments, and `@node <id>` lines declaring isolated nodes.
pub fn load_knowledge_graph(path: &Path) -> Result<KnowledgeGraph, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut graph = KnowledgeGraph::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("@node ") {
            let id = rest.trim();
            if id.is_empty() {
                return Err(DataError::MalformedLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: "@node declaration without an id".into(),
                });
            }
            graph.add_node(id);
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                graph.add_edge(h, r, t);
            }
            _ => {
                return Err(DataError::MalformedLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: "expected head<TAB>relation<TAB>tail".into(),
                })
            }
        }
    }
    Ok(graph)
}

/// One timestamped, case-tagged record. Attribute values are node ids of
/// the accompanying graph; [`TYPE_ATTR`] always maps to the type's node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub case_id: String,
    pub event_type: String,
    pub timestamp: u64,
    pub attributes: BTreeMap<String, String>,
}

/// How to handle attribute values that name no existing graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsolatedNodePolicy {
    /// Add the value as a degree-zero node (the no-knowledge-graph mode).
    Create,
    /// Fail, naming the value and row.
    Reject,
}

/// An event log with interned case and type vocabularies. Events keep their
/// input order; per-case chronological order is produced by
/// [`EventLog::case_sequence`].
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<Arc<Event>>,
    cases: Vec<String>,
    case_events: HashMap<String, Vec<usize>>,
    types: Vec<String>,
    type_index: HashMap<String, usize>,
    attribute_names: BTreeSet<String>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, event: Event) {
        if !self.case_events.contains_key(&event.case_id) {
            self.cases.push(event.case_id.clone());
            self.case_events.insert(event.case_id.clone(), Vec::new());
        }
        if !self.type_index.contains_key(&event.event_type) {
            self.type_index.insert(event.event_type.clone(), self.types.len());
            self.types.push(event.event_type.clone());
        }
        for name in event.attributes.keys() {
            if !self.attribute_names.contains(name) {
                self.attribute_names.insert(name.clone());
            }
        }
        self.case_events
            .get_mut(&event.case_id)
            .expect("case registered above")
            .push(self.events.len());
        self.events.push(Arc::new(event));
    }

    pub fn events(&self) -> &[Arc<Event>] {
        &self.events
    }

    /// Case ids in first-seen order.
    pub fn cases(&self) -> &[String] {
        &self.cases
    }

    /// Event types in first-seen order; indices into this slice are the
    /// class labels for next-event prediction.
    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_index.get(name).copied()
    }

    /// Attribute names seen anywhere in the log, sorted.
    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attribute_names.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The case's events strictly before `cutoff` (all of them when absent),
    /// sorted by timestamp ascending with ties kept in input order.
    pub fn case_sequence(&self, case: &str, cutoff: Option<u64>) -> Result<Vec<Arc<Event>>, DataError> {
        let indices = self
            .case_events
            .get(case)
            .ok_or_else(|| DataError::UnknownCase(case.to_string()))?;
        let mut picked: Vec<Arc<Event>> = indices
            .iter()
            .map(|&i| Arc::clone(&self.events[i]))
            .filter(|e| cutoff.is_none_or(|t| e.timestamp < t))
            .collect();
        picked.sort_by_key(|e| e.timestamp);
        Ok(picked)
    }

    /// Canonical CSV form: `case,type,timestamp` plus one column per
    /// attribute name in sorted order. The derived [`TYPE_ATTR`] column is
    /// omitted — it is re-injected on load.
    pub fn to_canonical_csv(&self) -> String {
        let attrs: Vec<&str> = self
            .attribute_names
            .iter()
            .map(String::as_str)
            .filter(|&a| a != TYPE_ATTR)
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["case", "type", "timestamp"];
        header.extend(&attrs);
        w.write_record(&header).expect("in-memory write");
        for event in &self.events {
            let mut record = vec![
                event.case_id.clone(),
                event.event_type.clone(),
                event.timestamp.to_string(),
            ];
            for &a in &attrs {
                record.push(event.attributes.get(a).cloned().unwrap_or_default());
            }
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_canonical_csv()).map_err(|e| io_err(path, e))
    }
}

/// Loads the CSV event-log format (mandatory `case,type,timestamp` columns,
/// every other column an attribute). Attribute values are resolved against
/// `graph` per `policy`; the event type's node is always created when
/// missing, since type nodes are internal rather than user data.
pub fn load_event_log(
    path: &Path,
    graph: &mut KnowledgeGraph,
    policy: IsolatedNodePolicy,
) -> Result<EventLog, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_err(path, 1, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, 1, e))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let case_col = find("case").ok_or_else(|| DataError::MissingColumn {
        path: path.display().to_string(),
        column: "case".into(),
    })?;
    let type_col = find("type").ok_or_else(|| DataError::MissingColumn {
        path: path.display().to_string(),
        column: "type".into(),
    })?;
    let ts_col = find("timestamp").ok_or_else(|| DataError::MissingColumn {
        path: path.display().to_string(),
        column: "timestamp".into(),
    })?;
    if find(TYPE_ATTR).is_some() {
        return Err(DataError::ReservedColumn {
            path: path.display().to_string(),
            column: TYPE_ATTR.into(),
        });
    }
    let attr_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != case_col && i != type_col && i != ts_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut log = EventLog::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // 1-based, after the header
        let record = record.map_err(|e| csv_err(path, line, e))?;
        let case_id = record.get(case_col).unwrap_or("").to_string();
        let event_type = record.get(type_col).unwrap_or("").to_string();
        let ts_raw = record.get(ts_col).unwrap_or("");
        if case_id.is_empty() || event_type.is_empty() {
            return Err(DataError::MalformedLine {
                path: path.display().to_string(),
                line,
                reason: "empty case or type".into(),
            });
        }
        let timestamp: u64 = ts_raw.parse().map_err(|_| DataError::MalformedLine {
            path: path.display().to_string(),
            line,
            reason: format!("timestamp `{}` is not a non-negative integer", ts_raw),
        })?;
        let mut attributes = BTreeMap::new();
        for (col, name) in &attr_cols {
            let value = record.get(*col).unwrap_or("");
            if value.is_empty() {
                continue;
            }
            if graph.node_id(value).is_none() {
                match policy {
                    IsolatedNodePolicy::Create => {
                        graph.add_node(value);
                    }
                    IsolatedNodePolicy::Reject => {
                        return Err(DataError::UnknownNode {
                            path: path.display().to_string(),
                            row: line,
                            value: value.to_string(),
                        })
                    }
                }
            }
            attributes.insert(name.clone(), value.to_string());
        }
        graph.add_node(&event_type);
        attributes.insert(TYPE_ATTR.to_string(), event_type.clone());
        log.push(Event {
            case_id,
            event_type,
            timestamp,
            attributes,
        });
    }
    Ok(log)
}

fn csv_err(path: &Path, line: usize, e: csv::Error) -> DataError {
    DataError::MalformedLine {
        path: path.display().to_string(),
        line,
        reason: e.to_string(),
    }
}

/// A labeled prediction input: one case (or case prefix) plus its target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub case_id: String,
    /// Chronologically ordered events (ties in input order).
    pub events: Vec<Arc<Event>>,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Class index: 0/1 for binary tasks, `0..o` for multi-class.
    Class(usize),
    Real(f64),
}

impl Target {
    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Real(_) => None,
        }
    }

    pub fn real(&self) -> Option<f64> {
        match self {
            Target::Real(v) => Some(*v),
            Target::Class(_) => None,
        }
    }
}

/// Expands every case into next-event-prediction samples: a case with `n`
/// events yields `n−1` prefixes, each targeting the type of the event that
/// follows it. Targets are indices into `log.types()`. Returns the samples
/// and the count of cases skipped for having fewer than two events.
///
/// Call this per split, after case-level splitting, so no prefix straddles
/// a split boundary.
pub fn prefix_expand(log: &EventLog) -> (Vec<Sample>, usize) {
    let case_refs: Vec<&str> = log.cases().iter().map(String::as_str).collect();
    prefix_expand_cases(log, &case_refs)
}

/// [`prefix_expand`] restricted to the given cases.
pub fn prefix_expand_cases(log: &EventLog, cases: &[&str]) -> (Vec<Sample>, usize) {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for &case in cases {
        let seq = match log.case_sequence(case, None) {
            Ok(seq) => seq,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if seq.len() < 2 {
            skipped += 1;
            continue;
        }
        for i in 1..seq.len() {
            let target = log
                .type_id(&seq[i].event_type)
                .expect("type interned at load");
            samples.push(Sample {
                case_id: case.to_string(),
                events: seq[..i].to_vec(),
                target: Target::Class(target),
            });
        }
    }
    (samples, skipped)
}

/// One full-case sample per case, labeled from `labels` (case id → target).
/// Cases missing from `labels` are skipped and counted.
pub fn outcome_samples(log: &EventLog, labels: &HashMap<String, Target>) -> (Vec<Sample>, usize) {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for case in log.cases() {
        let Some(&target) = labels.get(case) else {
            skipped += 1;
            continue;
        };
        let events = log.case_sequence(case, None).expect("case exists");
        samples.push(Sample {
            case_id: case.clone(),
            events,
            target,
        });
    }
    (samples, skipped)
}

/// Loads a `case,label` CSV (header required, extra columns ignored) in
/// file order. Duplicate case ids are rejected.
pub fn load_labels(path: &Path) -> Result<Vec<(String, String)>, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let malformed = |line: usize, reason: String| DataError::MalformedLine {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(source),
        other => malformed(1, format!("{other:?}")),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })
    };
    let (case_col, label_col) = (col("case")?, col("label")?);
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        let case = record
            .get(case_col)
            .ok_or_else(|| malformed(line, "missing case field".into()))?
            .to_string();
        let label = record
            .get(label_col)
            .ok_or_else(|| malformed(line, "missing label field".into()))?
            .to_string();
        if !seen.insert(case.clone()) {
            return Err(malformed(line, format!("duplicate case id `{case}`")));
        }
        pairs.push((case, label));
    }
    Ok(pairs)
}

/// Assigns class indices to label strings: classes are the sorted distinct
/// label values, so the mapping depends only on the label set.
pub fn class_mapping(pairs: &[(String, String)]) -> (Vec<String>, HashMap<String, Target>) {
    let mut classes: Vec<String> = pairs.iter().map(|(_, l)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    let targets = pairs
        .iter()
        .map(|(case, label)| {
            let idx = classes.binary_search(label).expect("label is in classes");
            (case.clone(), Target::Class(idx))
        })
        .collect();
    (classes, targets)
}

/// Parses labels as real-valued regression targets; `Err` carries the
/// first unparseable value.
pub fn real_mapping(pairs: &[(String, String)]) -> Result<HashMap<String, Target>, String> {
    pairs
        .iter()
        .map(|(case, label)| {
            label
                .trim()
                .parse::<f64>()
                .map(|v| (case.clone(), Target::Real(v)))
                .map_err(|_| label.clone())
        })
        .collect()
}
