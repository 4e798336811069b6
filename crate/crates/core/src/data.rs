//! Dataset model and the line-delimited interchange format.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"id":"q1","split":"train","query":"...","evidence":["p1","p2"],"label":"FULL","metadata":{"answer_type":"date"}}
//! ```
//!
//! Records are validated against a [`MetadataSchema`] loaded from a separate
//! schema file. Any invalid record rejects the whole file.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel category for a metadata value that is absent from a record.
/// Accepted for every dimension without being declared.
pub const UNK: &str = "UNK";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: label {label:?} is not in the label set")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unknown metadata dimension {dimension:?}")]
    UnknownDimension { line: usize, dimension: String },
    #[error("line {line}: category {value:?} is not declared for dimension {dimension:?}")]
    UnknownCategory {
        line: usize,
        dimension: String,
        value: String,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("empty item list")]
    Empty,
}

/// One named metadata dimension and its declared categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub categories: BTreeSet<String>,
}

/// Named, typed metadata dimensions plus the label set of a dataset.
///
/// Labels are kept in lexicographic order; every reader indexes labels by
/// their position in this order, so "lowest index" and "lexicographically
/// smallest" are the same tie-break everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct MetadataSchema {
    dimensions: Vec<Dimension>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    dimensions: Vec<Dimension>,
    labels: Vec<String>,
}

impl TryFrom<RawSchema> for MetadataSchema {
    type Error = DataError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        MetadataSchema::new(raw.dimensions, raw.labels)
    }
}

impl From<MetadataSchema> for RawSchema {
    fn from(schema: MetadataSchema) -> Self {
        RawSchema {
            dimensions: schema.dimensions,
            labels: schema.labels,
        }
    }
}

impl MetadataSchema {
    pub fn new(dimensions: Vec<Dimension>, labels: Vec<String>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for dim in &dimensions {
            if dim.name.is_empty() {
                return Err(DataError::InvalidSchema("empty dimension name".into()));
            }
            if !seen.insert(dim.name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "duplicate dimension {:?}",
                    dim.name
                )));
            }
            if dim.categories.is_empty() {
                return Err(DataError::InvalidSchema(format!(
                    "dimension {:?} has no categories",
                    dim.name
                )));
            }
        }
        let label_set: BTreeSet<String> = labels.into_iter().collect();
        if label_set.len() < 2 {
            return Err(DataError::InvalidSchema(
                "label set needs at least two labels".into(),
            ));
        }
        Ok(MetadataSchema {
            dimensions,
            labels: label_set.into_iter().collect(),
        })
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    /// Labels in lexicographic order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| DataError::InvalidSchema(format!("{}: {e}", path.display())))
    }

    /// The item's metadata values in dimension order.
    pub fn metadata_tuple<'a>(&self, item: &'a AuditItem) -> Vec<&'a str> {
        self.dimensions
            .iter()
            .map(|d| item.metadata.get(&d.name).map_or(UNK, String::as_str))
            .collect()
    }

    fn check_item(&self, item: &AuditItem) -> Result<(), ItemProblem> {
        if self.label_index(&item.gold_label).is_none() {
            return Err(ItemProblem::UnknownLabel(item.gold_label.clone()));
        }
        for (key, value) in &item.metadata {
            let dim = self
                .dimension(key)
                .ok_or_else(|| ItemProblem::UnknownDimension(key.clone()))?;
            if value != UNK && !dim.categories.contains(value) {
                return Err(ItemProblem::UnknownCategory(key.clone(), value.clone()));
            }
        }
        for dim in &self.dimensions {
            if !item.metadata.contains_key(&dim.name) {
                return Err(ItemProblem::MissingDimension(dim.name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum ItemProblem {
    UnknownLabel(String),
    UnknownDimension(String),
    UnknownCategory(String, String),
    MissingDimension(String),
}

impl ItemProblem {
    fn at_line(self, line: usize) -> DataError {
        match self {
            ItemProblem::UnknownLabel(label) => DataError::UnknownLabel { line, label },
            ItemProblem::UnknownDimension(dimension) => {
                DataError::UnknownDimension { line, dimension }
            }
            ItemProblem::UnknownCategory(dimension, value) => DataError::UnknownCategory {
                line,
                dimension,
                value,
            },
            ItemProblem::MissingDimension(dim) => DataError::Malformed {
                line,
                reason: format!("missing metadata dimension {dim:?}"),
            },
        }
    }
}

impl fmt::Display for ItemProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ItemProblem::UnknownLabel(l) => write!(f, "label {l:?} is not in the label set"),
            ItemProblem::UnknownDimension(d) => write!(f, "unknown metadata dimension {d:?}"),
            ItemProblem::UnknownCategory(d, v) => {
                write!(f, "category {v:?} is not declared for dimension {d:?}")
            }
            ItemProblem::MissingDimension(d) => write!(f, "missing metadata dimension {d:?}"),
        }
    }
}

/// One benchmark item: the query/evidence/label triple plus its metadata record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditItem {
    pub id: String,
    pub query: String,
    pub evidence: Vec<String>,
    pub gold_label: String,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// Wire form of a dataset line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    split: Split,
    query: String,
    evidence: Vec<String>,
    label: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub schema: MetadataSchema,
    pub train: Vec<AuditItem>,
    pub eval: Vec<AuditItem>,
}

impl Dataset {
    /// Checks every item against the schema and that ids are unique across
    /// both splits.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids = HashSet::new();
        for item in self.train.iter().chain(&self.eval) {
            self.schema
                .check_item(item)
                .map_err(|p| DataError::InvalidDataset(format!("item {:?}: {p}", item.id)))?;
            if !ids.insert(item.id.as_str()) {
                return Err(DataError::InvalidDataset(format!(
                    "duplicate id {:?}",
                    item.id
                )));
            }
        }
        Ok(())
    }

    /// Audit runs need both splits populated.
    pub fn require_splits(&self) -> Result<(), DataError> {
        if self.train.is_empty() {
            return Err(DataError::InvalidDataset("train split is empty".into()));
        }
        if self.eval.is_empty() {
            return Err(DataError::InvalidDataset("eval split is empty".into()));
        }
        Ok(())
    }
}

/// Reads and validates a dataset file. The dataset is named after the file stem.
pub fn ingest_dataset(path: &Path, schema: &MetadataSchema) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(BufReader::new(file), schema, &name)
}

pub fn parse_dataset<R: BufRead>(
    reader: R,
    schema: &MetadataSchema,
    name: &str,
) -> Result<Dataset, DataError> {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !ids.insert(record.id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        let mut metadata = record.metadata;
        for dim in schema.dimensions() {
            metadata
                .entry(dim.name.clone())
                .or_insert_with(|| UNK.to_string());
        }
        let item = AuditItem {
            id: record.id,
            query: record.query,
            evidence: record.evidence,
            gold_label: record.label,
            metadata,
        };
        schema.check_item(&item).map_err(|p| p.at_line(line_no))?;
        match record.split {
            Split::Train => train.push(item),
            Split::Eval => eval.push(item),
        }
    }
    Ok(Dataset {
        name: name.to_string(),
        schema: schema.clone(),
        train,
        eval,
    })
}

/// Writes the dataset in the interchange format, train split first.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    let splits = [(Split::Train, &dataset.train), (Split::Eval, &dataset.eval)];
    for (split, items) in splits {
        for item in items {
            let record = Record {
                id: item.id.clone(),
                split,
                query: item.query.clone(),
                evidence: item.evidence.clone(),
                label: item.gold_label.clone(),
                metadata: item.metadata.clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Label counts of a split and its majority label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub counts: BTreeMap<String, usize>,
    pub majority_label: String,
    pub majority_fraction: f64,
}

impl LabelDistribution {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Counts labels. Majority ties go to the lexicographically smallest label.
pub fn label_distribution(items: &[AuditItem]) -> Result<LabelDistribution, DataError> {
    if items.is_empty() {
        return Err(DataError::Empty);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for item in items {
        *counts.entry(item.gold_label.clone()).or_default() += 1;
    }
    // strict > keeps the first (smallest) label among equal counts
    let (mut best, mut best_count) = (None, 0);
    for (label, &count) in &counts {
        if count > best_count {
            best = Some(label);
            best_count = count;
        }
    }
    let majority_label = best.expect("non-empty counts").clone();
    Ok(LabelDistribution {
        majority_fraction: best_count as f64 / items.len() as f64,
        majority_label,
        counts,
    })
}
