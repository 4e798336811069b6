//! Consequence analyses: OOD metadata shift, counterfactual metadata flips
//! with query and evidence fixed, and MPDS-gated training-set filtering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AuditItem, Dataset, MetadataSchema};
use crate::readers::{accuracy, train_majority, InputView, LrHyper, Reader, ReaderError, ReaderSpec};

#[derive(Debug, Error)]
pub enum ConsequenceError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("{0} is empty")]
    EmptySlice(&'static str),
    #[error("{stage}: {source}")]
    Reader {
        stage: String,
        #[source]
        source: ReaderError,
    },
}

fn reader_stage(stage: &str) -> impl FnOnce(ReaderError) -> ConsequenceError + '_ {
    move |source| ConsequenceError::Reader {
        stage: stage.to_string(),
        source,
    }
}

fn check_dimension(schema: &MetadataSchema, dimension: &str) -> Result<(), ConsequenceError> {
    schema
        .dimension(dimension)
        .map(|_| ())
        .ok_or_else(|| ConsequenceError::InvalidSpec(format!("unknown dimension {dimension:?}")))
}

/// Train excludes the held-out categories; OOD eval contains only them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub dimension: String,
    pub held_out_categories: BTreeSet<String>,
}

impl ShiftSpec {
    pub fn new(dimension: &str, held_out: &[&str]) -> Self {
        ShiftSpec {
            dimension: dimension.into(),
            held_out_categories: held_out.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn validate(&self, schema: &MetadataSchema) -> Result<(), ConsequenceError> {
        check_dimension(schema, &self.dimension)?;
        if self.held_out_categories.is_empty() {
            return Err(ConsequenceError::InvalidSpec(
                "shift holds out no categories".into(),
            ));
        }
        let dim = schema.dimension(&self.dimension).expect("checked");
        for c in &self.held_out_categories {
            if !dim.categories.contains(c) && c != crate::data::UNK {
                return Err(ConsequenceError::InvalidSpec(format!(
                    "category {c:?} is not in dimension {:?}",
                    self.dimension
                )));
            }
        }
        Ok(())
    }

    fn held_out(&self, item: &AuditItem) -> bool {
        self.held_out_categories.contains(&item.metadata[&self.dimension])
    }

    pub fn describe(&self) -> String {
        let cats: Vec<&str> = self.held_out_categories.iter().map(String::as_str).collect();
        format!("hold out {}={{{}}}", self.dimension, cats.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftOutcome {
    pub iid_accuracy: f64,
    pub ood_accuracy: f64,
    pub ood_gap: f64,
    pub train_size: usize,
    pub iid_size: usize,
    pub ood_size: usize,
}

/// Trains a fresh reader on the shifted train split and scores it on the
/// in-distribution and held-out slices of eval.
pub fn run_ood_shift(
    dataset: &Dataset,
    spec: &ShiftSpec,
    reader: &ReaderSpec,
) -> Result<ShiftOutcome, ConsequenceError> {
    spec.validate(&dataset.schema)?;
    let train: Vec<AuditItem> = dataset
        .train
        .iter()
        .filter(|it| !spec.held_out(it))
        .cloned()
        .collect();
    let (ood, iid): (Vec<AuditItem>, Vec<AuditItem>) =
        dataset.eval.iter().cloned().partition(|it| spec.held_out(it));
    if train.is_empty() {
        return Err(ConsequenceError::EmptySlice("residual train split"));
    }
    if ood.is_empty() {
        return Err(ConsequenceError::EmptySlice("OOD eval slice"));
    }
    if iid.is_empty() {
        return Err(ConsequenceError::EmptySlice("in-distribution eval slice"));
    }
    let model = reader
        .train(&train, &dataset.schema)
        .map_err(reader_stage("shifted training"))?;
    let score = |items: &[AuditItem], stage: &str| -> Result<f64, ConsequenceError> {
        let preds = model
            .predict(items, model.view())
            .map_err(reader_stage(stage))?;
        accuracy(&preds, items).map_err(reader_stage(stage))
    };
    let iid_accuracy = score(&iid, "in-distribution eval")?;
    let ood_accuracy = score(&ood, "OOD eval")?;
    Ok(ShiftOutcome {
        iid_accuracy,
        ood_accuracy,
        ood_gap: iid_accuracy - ood_accuracy,
        train_size: train.len(),
        iid_size: iid.len(),
        ood_size: ood.len(),
    })
}

/// Counterfactual rewrite of one metadata dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipSpec {
    pub dimension: String,
    pub mapping: BTreeMap<String, String>,
    #[serde(default)]
    pub allow_identity: bool,
}

impl FlipSpec {
    /// Maps each category to the next one in sorted order, wrapping around.
    pub fn cyclic(schema: &MetadataSchema, dimension: &str) -> Result<Self, ConsequenceError> {
        check_dimension(schema, dimension)?;
        let cats: Vec<&String> = schema.dimension(dimension).expect("checked").categories.iter().collect();
        if cats.len() < 2 {
            return Err(ConsequenceError::InvalidSpec(format!(
                "dimension {dimension:?} has a single category"
            )));
        }
        let mapping = cats
            .iter()
            .enumerate()
            .map(|(i, c)| ((*c).clone(), cats[(i + 1) % cats.len()].clone()))
            .collect();
        Ok(FlipSpec {
            dimension: dimension.into(),
            mapping,
            allow_identity: false,
        })
    }

    pub fn validate(&self, schema: &MetadataSchema, eval: &[AuditItem]) -> Result<(), ConsequenceError> {
        check_dimension(schema, &self.dimension)?;
        let dim = schema.dimension(&self.dimension).expect("checked");
        for (from, to) in &self.mapping {
            if from == to && !self.allow_identity {
                return Err(ConsequenceError::InvalidSpec(format!(
                    "identity entry {from:?} -> {to:?} (set allow_identity to keep it)"
                )));
            }
            if !dim.categories.contains(to) && to != crate::data::UNK {
                return Err(ConsequenceError::InvalidSpec(format!(
                    "target category {to:?} is not in dimension {:?}",
                    self.dimension
                )));
            }
        }
        for item in eval {
            let value = &item.metadata[&self.dimension];
            if !self.mapping.contains_key(value) {
                return Err(ConsequenceError::InvalidSpec(format!(
                    "mapping has no entry for {value:?} (eval item {})",
                    item.id
                )));
            }
        }
        Ok(())
    }

    /// Rewrites the flipped dimension; every other field is untouched.
    pub fn apply(&self, items: &[AuditItem]) -> Vec<AuditItem> {
        items
            .iter()
            .map(|item| {
                let mut flipped = item.clone();
                if let Some(value) = flipped.metadata.get_mut(&self.dimension) {
                    if let Some(to) = self.mapping.get(value) {
                        *value = to.clone();
                    }
                }
                flipped
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipOutcome {
    pub reader: String,
    pub flip_rate: f64,
    pub changed: usize,
    pub total: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub notice: Option<String>,
}

/// Predicts every eval item twice, with original and flipped metadata, and
/// reports the fraction whose predicted label changed.
pub fn run_counterfactual_flip(
    dataset: &Dataset,
    spec: &FlipSpec,
    reader: &dyn Reader,
) -> Result<FlipOutcome, ConsequenceError> {
    if dataset.eval.is_empty() {
        return Err(ConsequenceError::EmptySlice("eval split"));
    }
    spec.validate(&dataset.schema, &dataset.eval)?;
    let view = reader.view();
    let original = reader
        .predict(&dataset.eval, view)
        .map_err(reader_stage("original-metadata predictions"))?;
    let flipped = reader
        .predict(&spec.apply(&dataset.eval), view)
        .map_err(reader_stage("flipped-metadata predictions"))?;
    let changed = original
        .iter()
        .zip(&flipped)
        .filter(|(a, b)| a.label != b.label)
        .count();
    let info = reader.info();
    let notice = (!info.consumes_metadata).then(|| {
        format!(
            "reader {} does not consume metadata; its flip rate is 0 by construction",
            info.name
        )
    });
    Ok(FlipOutcome {
        reader: info.name,
        flip_rate: changed as f64 / dataset.eval.len() as f64,
        changed,
        total: dataset.eval.len(),
        notice,
    })
}

/// Which training groups count as high-risk: metadata tuples ranked by
/// group-level majority accuracy (purity), ties by larger support, then by
/// tuple order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRiskRule {
    #[serde(default = "default_min_support")]
    pub min_support: usize,
    /// Number of top-ranked groups to remove.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Only groups at or above this purity qualify.
    #[serde(default)]
    pub min_purity: Option<f64>,
}

fn default_min_support() -> usize {
    20
}

fn default_top_k() -> usize {
    1
}

impl Default for GroupRiskRule {
    fn default() -> Self {
        GroupRiskRule {
            min_support: default_min_support(),
            top_k: default_top_k(),
            min_purity: None,
        }
    }
}

impl GroupRiskRule {
    pub fn describe(&self) -> String {
        let mut s = format!(
            "remove top {} metadata group(s) by majority accuracy with support >= {}",
            self.top_k, self.min_support
        );
        if let Some(p) = self.min_purity {
            s.push_str(&format!(" and purity >= {p}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGroup {
    pub metadata: BTreeMap<String, String>,
    pub majority_label: String,
    pub support: usize,
    pub purity: f64,
}

/// Ranks the training metadata groups that satisfy the rule and returns the
/// top `top_k`.
pub fn high_risk_groups(
    dataset: &Dataset,
    rule: &GroupRiskRule,
) -> Result<Vec<RiskGroup>, ConsequenceError> {
    if rule.top_k < 1 {
        return Err(ConsequenceError::InvalidSpec("top_k must be at least 1".into()));
    }
    let model = train_majority(&dataset.train, &dataset.schema)
        .map_err(reader_stage("group table"))?;
    let names: Vec<&str> = dataset
        .schema
        .dimensions()
        .iter()
        .map(|d| d.name.as_str())
        .collect();
    let mut ranked: Vec<RiskGroup> = model
        .groups()
        .iter()
        .filter(|(_, g)| g.support >= rule.min_support)
        .filter(|(_, g)| rule.min_purity.is_none_or(|p| g.purity() >= p))
        .map(|(key, g)| RiskGroup {
            metadata: names
                .iter()
                .zip(key)
                .map(|(n, v)| (n.to_string(), v.clone()))
                .collect(),
            majority_label: g.label.clone(),
            support: g.support,
            purity: g.purity(),
        })
        .collect();
    // stable sort keeps tuple order among exact ties
    ranked.sort_by(|a, b| {
        b.purity
            .partial_cmp(&a.purity)
            .unwrap()
            .then(b.support.cmp(&a.support))
    });
    if ranked.is_empty() {
        return Err(ConsequenceError::InvalidSpec(format!(
            "risk rule matches no metadata group ({})",
            rule.describe()
        )));
    }
    ranked.truncate(rule.top_k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub rule: String,
    pub removed_groups: Vec<RiskGroup>,
    pub removed_train_items: usize,
    pub baseline: ShiftOutcome,
    pub filtered: ShiftOutcome,
}

/// Removes the highest-risk training groups and reruns the OOD shift,
/// reporting the unfiltered and filtered gaps side by side.
pub fn run_mpds_gated_filter(
    dataset: &Dataset,
    rule: &GroupRiskRule,
    reader: &ReaderSpec,
    shift: &ShiftSpec,
) -> Result<FilterOutcome, ConsequenceError> {
    shift.validate(&dataset.schema)?;
    let groups = high_risk_groups(dataset, rule)?;
    let in_removed = |item: &AuditItem| {
        groups
            .iter()
            .any(|g| g.metadata.iter().all(|(k, v)| &item.metadata[k] == v))
    };
    let train: Vec<AuditItem> = dataset
        .train
        .iter()
        .filter(|it| !in_removed(it))
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(ConsequenceError::InvalidSpec(
            "filtering removes the whole train split".into(),
        ));
    }
    let removed_train_items = dataset.train.len() - train.len();
    let filtered_ds = Dataset {
        train,
        ..dataset.clone()
    };
    let baseline = run_ood_shift(dataset, shift, reader)?;
    let filtered = run_ood_shift(&filtered_ds, shift, reader)?;
    Ok(FilterOutcome {
        rule: rule.describe(),
        removed_groups: groups,
        removed_train_items,
        baseline,
        filtered,
    })
}

/// Consequence analyses requested by an audit config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsequenceSpecs {
    pub shift: ShiftSpec,
    #[serde(default)]
    pub flip: Option<FlipSpec>,
    #[serde(default)]
    pub filter: Option<GroupRiskRule>,
    /// Reader retrained for the shift and filter runs.
    #[serde(default = "default_reader")]
    pub reader: ReaderSpec,
}

fn default_reader() -> ReaderSpec {
    ReaderSpec::TfidfLr {
        view: InputView::Full,
        hyper: LrHyper::default(),
    }
}

impl ConsequenceSpecs {
    pub fn new(shift: ShiftSpec) -> Self {
        ConsequenceSpecs {
            shift,
            flip: None,
            filter: None,
            reader: default_reader(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsequenceReport {
    pub iid_accuracy: f64,
    pub ood_accuracy: f64,
    pub ood_gap: f64,
    pub flip_rate: Option<f64>,
    pub filter_spec: Option<String>,
    pub filtered_ood_gap: Option<f64>,
    pub shift: ShiftOutcome,
    pub shift_spec: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flip: Option<FlipOutcome>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filter: Option<FilterOutcome>,
}

/// Runs every requested analysis. `flip_reader` answers the counterfactual
/// flip; when absent a metadata-majority predictor is trained on train.
pub fn run_consequences(
    dataset: &Dataset,
    specs: &ConsequenceSpecs,
    flip_reader: Option<&dyn Reader>,
) -> Result<ConsequenceReport, ConsequenceError> {
    let shift = run_ood_shift(dataset, &specs.shift, &specs.reader)?;
    let flip = match &specs.flip {
        None => None,
        Some(flip) => Some(match flip_reader {
            Some(r) => run_counterfactual_flip(dataset, flip, r)?,
            None => {
                let majority = train_majority(&dataset.train, &dataset.schema)
                    .map_err(reader_stage("metadata-majority training"))?;
                run_counterfactual_flip(dataset, flip, &majority)?
            }
        }),
    };
    let filter = specs
        .filter
        .as_ref()
        .map(|rule| run_mpds_gated_filter(dataset, rule, &specs.reader, &specs.shift))
        .transpose()?;
    Ok(ConsequenceReport {
        iid_accuracy: shift.iid_accuracy,
        ood_accuracy: shift.ood_accuracy,
        ood_gap: shift.ood_gap,
        flip_rate: flip.as_ref().map(|f| f.flip_rate),
        filter_spec: filter.as_ref().map(|f| f.rule.clone()),
        filtered_ood_gap: filter.as_ref().map(|f| f.filtered.ood_gap),
        shift_spec: specs.shift.describe(),
        shift,
        flip,
        filter,
    })
}
