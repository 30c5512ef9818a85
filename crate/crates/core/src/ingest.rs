//! Config-driven extraction of an event log and knowledge graph from
//! multi-table CSV dumps.
//!
//! A schema mapping (TOML) declares, per table: the primary key (one
//! node per row), foreign-key columns (edges to other tables' row
//! nodes), categorical columns (edges to shared value nodes), numeric
//! columns (edges to equal-frequency bin nodes), and optionally an event
//! spec turning each row into a timestamped event whose attributes
//! reference the emitted nodes. Tables are referenced by their
//! `node_prefix`, which doubles as the namespace keeping ids from
//! colliding.
//!
//! Cell semantics: an empty cell produces nothing; a non-empty numeric
//! cell that does not parse goes to the column's dedicated missing bin.

use crate::data::{DataError, Event, EventLog, KnowledgeGraph, TYPE_ATTR};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    BadMapping { path: String, message: String },
    #[error("invalid schema mapping: {0}")]
    Validation(String),
    #[error("{file}: duplicate primary key `{key}`")]
    DuplicateKey { file: String, key: String },
    #[error("{file}: row {row}: column `{column}` holds `{value}`, which is no key of table `{target}`")]
    DanglingFk {
        file: String,
        row: usize,
        column: String,
        value: String,
        target: String,
    },
    #[error("{file}: row {row}: cannot read `{value}` as a timestamp")]
    BadTimestamp { file: String, row: usize, value: String },
    #[error("bin_count must be at least 2, got {0}")]
    BadBinCount(usize),
    #[error("cannot discretize an empty column")]
    EmptyColumn,
}

// ---------------------------------------------------------------------
// Schema mapping
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FkEdge {
    pub column: String,
    pub relation: String,
    /// `node_prefix` of the table the key points into.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalAttr {
    pub column: String,
    pub relation: String,
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericAttr {
    pub column: String,
    pub relation: String,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    /// Column holding the case id.
    pub case: String,
    /// Literal event type shared by all of this table's events.
    #[serde(rename = "type")]
    pub event_type: String,
    /// Column holding a numeric timestamp.
    pub time: String,
    /// Declared categorical/numeric columns whose node becomes an event
    /// attribute.
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub file: String,
    pub key: String,
    pub node_prefix: String,
    #[serde(default)]
    pub fk_edges: Vec<FkEdge>,
    #[serde(default)]
    pub categorical_attrs: Vec<CategoricalAttr>,
    #[serde(default)]
    pub numeric_attrs: Vec<NumericAttr>,
    pub events: Option<EventSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DanglingPolicy {
    /// Abort extraction on the first dangling foreign key.
    #[default]
    Fail,
    /// Drop the edge and count it in the manifest.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMapping {
    #[serde(rename = "table")]
    pub tables: Vec<TableSpec>,
    #[serde(default)]
    pub on_dangling: DanglingPolicy,
}

impl SchemaMapping {
    pub fn from_toml_str(text: &str) -> Result<SchemaMapping, IngestError> {
        let mapping: SchemaMapping = toml::from_str(text).map_err(|e| IngestError::BadMapping {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        mapping.validate()?;
        Ok(mapping)
    }

    pub fn load(path: &Path) -> Result<SchemaMapping, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mapping: SchemaMapping = toml::from_str(&text).map_err(|e| IngestError::BadMapping {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        mapping.validate()?;
        Ok(mapping)
    }

    fn validate(&self) -> Result<(), IngestError> {
        let fail = |msg: String| Err(IngestError::Validation(msg));
        if self.tables.is_empty() {
            return fail("no tables declared".into());
        }
        let mut prefixes = HashSet::new();
        for t in &self.tables {
            if !prefixes.insert(t.node_prefix.as_str()) {
                return fail(format!("node_prefix `{}` used by two tables", t.node_prefix));
            }
        }
        for t in &self.tables {
            for fk in &t.fk_edges {
                if !prefixes.contains(fk.target.as_str()) {
                    return fail(format!(
                        "table `{}`: fk target `{}` matches no declared node_prefix",
                        t.file, fk.target
                    ));
                }
            }
            for n in &t.numeric_attrs {
                if n.bins < 2 {
                    return Err(IngestError::BadBinCount(n.bins));
                }
            }
            if let Some(ev) = &t.events {
                let declared: HashSet<&str> = t
                    .categorical_attrs
                    .iter()
                    .map(|c| c.column.as_str())
                    .chain(t.numeric_attrs.iter().map(|n| n.column.as_str()))
                    .collect();
                for a in &ev.attributes {
                    if !declared.contains(a.as_str()) {
                        return fail(format!(
                            "table `{}`: event attribute `{a}` is not a declared categorical or numeric column",
                            t.file
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bin {
    Value(usize),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    pub bins: Vec<Bin>,
    /// Ascending quantile boundaries; a value lands in the count of
    /// boundaries strictly below it, so boundary values go to the lower
    /// bin. At most `bin_count − 1` entries; degenerate columns collapse
    /// to fewer.
    pub boundaries: Vec<f64>,
    pub all_missing: bool,
}

/// Equal-frequency binning. `None` entries (missing) map to a dedicated
/// missing bin and do not influence the boundaries.
pub fn discretize(values: &[Option<f64>], bin_count: usize) -> Result<Discretized, IngestError> {
    if bin_count < 2 {
        return Err(IngestError::BadBinCount(bin_count));
    }
    if values.is_empty() {
        return Err(IngestError::EmptyColumn);
    }
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Ok(Discretized {
            bins: vec![Bin::Missing; values.len()],
            boundaries: Vec::new(),
            all_missing: true,
        });
    }
    present.sort_by(f64::total_cmp);
    let n = present.len();
    let max = present[n - 1];
    let mut boundaries: Vec<f64> = (1..bin_count)
        .map(|i| present[(i * n).div_ceil(bin_count) - 1])
        .filter(|&b| b < max)
        .collect();
    boundaries.dedup();
    let bins = values
        .iter()
        .map(|v| match v {
            None => Bin::Missing,
            Some(x) => Bin::Value(boundaries.iter().filter(|&&b| b < *x).count()),
        })
        .collect();
    Ok(Discretized {
        bins,
        boundaries,
        all_missing: false,
    })
}

// ---------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBins {
    pub table: String,
    pub column: String,
    pub boundaries: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionManifest {
    pub schema_version: u32,
    pub node_count: usize,
    pub edge_count: usize,
    pub event_count: usize,
    pub case_count: usize,
    pub tables: Vec<TableStats>,
    pub bins: Vec<ColumnBins>,
    pub dangling_skipped: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl ExtractionManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

struct LoadedTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    stats: TableStats,
}

fn load_table(dir: &Path, file: &str) -> Result<LoadedTable, IngestError> {
    let path = dir.join(file);
    let bytes = std::fs::read(&path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let malformed = |line: usize, reason: String| DataError::MalformedLine {
        path: path.display().to_string(),
        line,
        reason,
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(i + 2, e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    let stats = TableStats {
        file: file.to_string(),
        rows: rows.len(),
        sha256,
    };
    Ok(LoadedTable { headers, rows, stats })
}

impl LoadedTable {
    fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                DataError::MissingColumn {
                    path: self.stats.file.clone(),
                    column: name.to_string(),
                }
                .into()
            })
    }

    fn cell(&self, row: usize, col: usize) -> &str {
        self.rows[row].get(col).map_or("", |s| s.as_str()).trim()
    }
}

/// Runs the whole mapping over `data_dir`, producing the graph, the
/// event log, and a manifest describing what was built.
pub fn extract(
    mapping: &SchemaMapping,
    data_dir: &Path,
) -> Result<(EventLog, KnowledgeGraph, ExtractionManifest), IngestError> {
    mapping.validate()?;
    let mut graph = KnowledgeGraph::new();
    let mut log = EventLog::new();
    let mut manifest = ExtractionManifest {
        schema_version: 1,
        node_count: 0,
        edge_count: 0,
        event_count: 0,
        case_count: 0,
        tables: Vec::new(),
        bins: Vec::new(),
        dangling_skipped: 0,
        warnings: Vec::new(),
    };

    // Pass 1: load every table and intern its row nodes, so foreign keys
    // can point at any table regardless of declaration order.
    let mut tables = Vec::with_capacity(mapping.tables.len());
    let mut row_keys: HashMap<&str, HashSet<String>> = HashMap::new();
    for spec in &mapping.tables {
        let table = load_table(data_dir, &spec.file)?;
        let key_col = table.column(&spec.key)?;
        let keys = row_keys.entry(spec.node_prefix.as_str()).or_default();
        for row in 0..table.rows.len() {
            let key = table.cell(row, key_col);
            if !keys.insert(key.to_string()) {
                return Err(IngestError::DuplicateKey {
                    file: spec.file.clone(),
                    key: key.to_string(),
                });
            }
            graph.add_node(&format!("{}{key}", spec.node_prefix));
        }
        manifest.tables.push(table.stats.clone());
        tables.push(table);
    }

    // Pass 2: per table, bin the numeric columns, then emit edges (row
    // by row: foreign keys, categorical values, numeric bins, each in
    // declaration order) and finally that table's events, whose
    // attribute values are exactly the nodes the row's cells mapped to.
    for (spec, table) in mapping.tables.iter().zip(&tables) {
        let key_col = table.column(&spec.key)?;
        let fk_cols = spec
            .fk_edges
            .iter()
            .map(|fk| table.column(&fk.column))
            .collect::<Result<Vec<_>, _>>()?;
        let cat_cols = spec
            .categorical_attrs
            .iter()
            .map(|c| table.column(&c.column))
            .collect::<Result<Vec<_>, _>>()?;
        let num_cols = spec
            .numeric_attrs
            .iter()
            .map(|nu| table.column(&nu.column))
            .collect::<Result<Vec<_>, _>>()?;

        // Numeric columns are binned over the whole table up front.
        let mut binned = Vec::with_capacity(spec.numeric_attrs.len());
        for (nu, &col) in spec.numeric_attrs.iter().zip(&num_cols) {
            let cells: Vec<&str> = (0..table.rows.len()).map(|r| table.cell(r, col)).collect();
            let values: Vec<Option<f64>> = cells
                .iter()
                .filter(|c| !c.is_empty())
                .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            let disc = if values.is_empty() {
                Discretized {
                    bins: Vec::new(),
                    boundaries: Vec::new(),
                    all_missing: true,
                }
            } else {
                discretize(&values, nu.bins)?
            };
            if disc.all_missing {
                manifest.warnings.push(format!(
                    "{}: numeric column `{}` has no parseable values",
                    spec.file, nu.column
                ));
            }
            // Re-align bins with row indices (empty cells were skipped).
            let mut by_row = vec![None; table.rows.len()];
            let mut cursor = 0;
            for (row, cell) in cells.iter().enumerate() {
                if !cell.is_empty() {
                    by_row[row] = Some(disc.bins[cursor]);
                    cursor += 1;
                }
            }
            manifest.bins.push(ColumnBins {
                table: spec.node_prefix.clone(),
                column: nu.column.clone(),
                boundaries: disc.boundaries.clone(),
            });
            binned.push(by_row);
        }

        for row in 0..table.rows.len() {
            let row_node = format!("{}{}", spec.node_prefix, table.cell(row, key_col));
            for (fk, &col) in spec.fk_edges.iter().zip(&fk_cols) {
                let value = table.cell(row, col);
                if value.is_empty() {
                    continue;
                }
                if !row_keys[fk.target.as_str()].contains(value) {
                    match mapping.on_dangling {
                        DanglingPolicy::Skip => {
                            manifest.dangling_skipped += 1;
                            continue;
                        }
                        DanglingPolicy::Fail => {
                            return Err(IngestError::DanglingFk {
                                file: spec.file.clone(),
                                row: row + 2,
                                column: fk.column.clone(),
                                value: value.to_string(),
                                target: fk.target.clone(),
                            })
                        }
                    }
                }
                graph.add_edge(&row_node, &fk.relation, &format!("{}{value}", fk.target));
            }
            for (cat, &col) in spec.categorical_attrs.iter().zip(&cat_cols) {
                let value = table.cell(row, col);
                if value.is_empty() {
                    continue;
                }
                let value_node = format!("{}{}={value}", spec.node_prefix, cat.column);
                graph.add_edge(&row_node, &cat.relation, &value_node);
            }
            for ((nu, by_row), &col) in spec.numeric_attrs.iter().zip(&binned).zip(&num_cols) {
                if table.cell(row, col).is_empty() {
                    continue;
                }
                let bin_node = bin_node_id(spec, &nu.column, by_row[row].expect("binned"));
                graph.add_edge(&row_node, &nu.relation, &bin_node);
            }
        }

        let Some(ev) = &spec.events else { continue };
        graph.add_node(&ev.event_type);
        let case_col = table.column(&ev.case)?;
        let time_col = table.column(&ev.time)?;
        // Resolves a declared attribute column to the node its cell was
        // mapped to above; empty cells resolve to nothing.
        let node_of = |row: usize, column: &str| -> Option<String> {
            let col = table.column(column).ok()?;
            if table.cell(row, col).is_empty() {
                return None;
            }
            if spec.categorical_attrs.iter().any(|c| c.column == column) {
                return Some(format!("{}{column}={}", spec.node_prefix, table.cell(row, col)));
            }
            let nu_idx = spec.numeric_attrs.iter().position(|nu| nu.column == column)?;
            Some(bin_node_id(spec, column, binned[nu_idx][row]?))
        };
        for row in 0..table.rows.len() {
            let case = table.cell(row, case_col).to_string();
            if case.is_empty() {
                return Err(DataError::MalformedLine {
                    path: spec.file.clone(),
                    line: row + 2,
                    reason: format!("empty case id in column `{}`", ev.case),
                }
                .into());
            }
            let time_text = table.cell(row, time_col);
            let timestamp = parse_timestamp(time_text).ok_or_else(|| IngestError::BadTimestamp {
                file: spec.file.clone(),
                row: row + 2,
                value: time_text.to_string(),
            })?;
            let mut attributes = BTreeMap::new();
            attributes.insert(TYPE_ATTR.to_string(), ev.event_type.clone());
            attributes.insert(
                "__row".to_string(),
                format!("{}{}", spec.node_prefix, table.cell(row, key_col)),
            );
            for name in &ev.attributes {
                if let Some(node) = node_of(row, name) {
                    attributes.insert(name.clone(), node);
                }
            }
            log.push(Event {
                case_id: case,
                event_type: ev.event_type.clone(),
                timestamp,
                attributes,
            });
        }
    }

    manifest.node_count = graph.node_count();
    manifest.edge_count = graph.edge_count();
    manifest.event_count = log.len();
    manifest.case_count = log.cases().len();
    Ok((log, graph, manifest))
}

fn bin_node_id(spec: &TableSpec, column: &str, bin: Bin) -> String {
    match bin {
        Bin::Value(b) => format!("{}{column}#bin{b}", spec.node_prefix),
        Bin::Missing => format!("{}{column}#missing", spec.node_prefix),
    }
}

fn parse_timestamp(text: &str) -> Option<u64> {
    if let Ok(v) = text.parse::<u64>() {
        return Some(v);
    }
    let f = text.parse::<f64>().ok()?;
    if f.is_finite() && f >= 0.0 && f <= u64::MAX as f64 {
        Some(f as u64)
    } else {
        None
    }
}
