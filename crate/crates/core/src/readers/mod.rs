//! The internal reader family and the prediction interface shared with
//! external readers.
//!
//! Every reader maps items to labels under an [`InputView`]. The view is
//! enforced when the reader's input is assembled, so a `query_only` reader
//! never sees a single evidence token.

mod logistic;
mod majority;
mod text;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AuditItem, MetadataSchema};

pub use logistic::{train_tfidf_lr, LrHyper, LrObjective, TfidfLrModel, MODEL_FORMAT_VERSION};
pub use majority::{train_majority, GroupEntry, MajorityModel};
pub use text::{tokenize, view_tokens, SparseRow, TfidfVectorizer, SEPARATOR};

#[derive(Debug, Error)]
pub enum ReaderError {
    #[error("training split is empty")]
    EmptyTrain,
    #[error("empty vocabulary after tokenization")]
    EmptyVocabulary,
    #[error("reader was trained for view {trained} but asked to predict under {requested}")]
    ViewMismatch {
        trained: InputView,
        requested: InputView,
    },
    #[error("{0} is not a valid view for this reader")]
    UnsupportedView(InputView),
    #[error("predictions and items are misaligned: {0}")]
    Misaligned(String),
    #[error("cannot score an empty prediction list")]
    Empty,
    #[error("model file: {0}")]
    Model(String),
    #[error("external reader: {0}")]
    External(String),
}

/// Which parts of an item a reader may look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputView {
    Full,
    QueryOnly,
    EvidenceOnly,
    MetadataOnly,
}

impl InputView {
    pub const ALL: [InputView; 4] = [
        InputView::Full,
        InputView::QueryOnly,
        InputView::EvidenceOnly,
        InputView::MetadataOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputView::Full => "full",
            InputView::QueryOnly => "query_only",
            InputView::EvidenceOnly => "evidence_only",
            InputView::MetadataOnly => "metadata_only",
        }
    }

    pub fn sees_query(self) -> bool {
        matches!(self, InputView::Full | InputView::QueryOnly)
    }

    pub fn sees_evidence(self) -> bool {
        matches!(self, InputView::Full | InputView::EvidenceOnly)
    }
}

impl fmt::Display for InputView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InputView::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown input view {s:?}"))
    }
}

/// One predicted label with its normalized score distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub label: String,
    pub scores: BTreeMap<String, f64>,
}

impl Prediction {
    /// Builds a prediction from scores aligned with `labels`; the label is the
    /// argmax with the lowest index winning ties.
    pub(crate) fn from_scores(item_id: &str, labels: &[String], scores: &[f64]) -> Self {
        let best = argmax(scores);
        Prediction {
            item_id: item_id.to_string(),
            label: labels[best].clone(),
            scores: labels.iter().cloned().zip(scores.iter().copied()).collect(),
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReaderKind {
    Internal,
    External,
}

/// Provenance record describing a reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderInfo {
    pub name: String,
    pub kind: ReaderKind,
    pub view: InputView,
    pub consumes_metadata: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hyper: Option<LrHyper>,
}

/// Anything that maps items to predicted labels.
pub trait Reader {
    fn info(&self) -> ReaderInfo;

    /// The view the reader was built for.
    fn view(&self) -> InputView {
        self.info().view
    }

    fn consumes_metadata(&self) -> bool {
        self.info().consumes_metadata
    }

    /// One prediction per item, in item order.
    fn predict(&self, items: &[AuditItem], view: InputView)
        -> Result<Vec<Prediction>, ReaderError>;
}

/// Exact-match accuracy of predictions aligned by id with `items`.
pub fn accuracy(preds: &[Prediction], items: &[AuditItem]) -> Result<f64, ReaderError> {
    Ok(correctness(preds, items)?.iter().filter(|&&c| c).count() as f64 / items.len() as f64)
}

/// Per-item correctness flags, validating alignment.
pub fn correctness(preds: &[Prediction], items: &[AuditItem]) -> Result<Vec<bool>, ReaderError> {
    if items.is_empty() {
        return Err(ReaderError::Empty);
    }
    if preds.len() != items.len() {
        return Err(ReaderError::Misaligned(format!(
            "{} predictions for {} items",
            preds.len(),
            items.len()
        )));
    }
    preds
        .iter()
        .zip(items)
        .map(|(p, item)| {
            if p.item_id != item.id {
                Err(ReaderError::Misaligned(format!(
                    "prediction for {:?} where {:?} was expected",
                    p.item_id, item.id
                )))
            } else {
                Ok(p.label == item.gold_label)
            }
        })
        .collect()
}

/// How to build an internal reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReaderSpec {
    Majority,
    TfidfLr {
        view: InputView,
        #[serde(default)]
        hyper: LrHyper,
    },
}

impl ReaderSpec {
    pub fn train(
        &self,
        train: &[AuditItem],
        schema: &MetadataSchema,
    ) -> Result<Box<dyn Reader + Send + Sync>, ReaderError> {
        match self {
            ReaderSpec::Majority => Ok(Box::new(train_majority(train, schema)?)),
            ReaderSpec::TfidfLr { view, hyper } => {
                Ok(Box::new(train_tfidf_lr(train, schema, *view, hyper)?))
            }
        }
    }

    /// The internal reader for a view: metadata_only is the majority
    /// predictor, every text view is TF-IDF + LR with `hyper`.
    pub fn for_view(view: InputView, hyper: &LrHyper) -> ReaderSpec {
        match view {
            InputView::MetadataOnly => ReaderSpec::Majority,
            view => ReaderSpec::TfidfLr {
                view,
                hyper: hyper.clone(),
            },
        }
    }
}
