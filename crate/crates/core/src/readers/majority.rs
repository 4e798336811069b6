use std::collections::BTreeMap;

use super::{InputView, Prediction, Reader, ReaderError, ReaderInfo, ReaderKind};
use crate::data::{label_distribution, AuditItem, MetadataSchema};

/// Training-label counts of one metadata group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupEntry {
    pub label: String,
    pub support: usize,
    pub counts: BTreeMap<String, usize>,
}

impl GroupEntry {
    /// Fraction of the group's training items carrying its majority label.
    pub fn purity(&self) -> f64 {
        self.counts[&self.label] as f64 / self.support as f64
    }
}

/// Predicts the training-majority label of an item's full metadata tuple,
/// falling back to the global training majority for unseen tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct MajorityModel {
    labels: Vec<String>,
    group_table: BTreeMap<Vec<String>, GroupEntry>,
    global: GroupEntry,
    schema: MetadataSchema,
}

pub fn train_majority(
    train: &[AuditItem],
    schema: &MetadataSchema,
) -> Result<MajorityModel, ReaderError> {
    if train.is_empty() {
        return Err(ReaderError::EmptyTrain);
    }
    let mut grouped: BTreeMap<Vec<String>, Vec<&AuditItem>> = BTreeMap::new();
    for item in train {
        let key = schema
            .metadata_tuple(item)
            .into_iter()
            .map(String::from)
            .collect();
        grouped.entry(key).or_default().push(item);
    }
    let group_table = grouped
        .into_iter()
        .map(|(key, members)| (key, entry_for(members.into_iter().cloned().collect())))
        .collect();
    Ok(MajorityModel {
        labels: schema.labels().to_vec(),
        group_table,
        global: entry_for(train.to_vec()),
        schema: schema.clone(),
    })
}

fn entry_for(items: Vec<AuditItem>) -> GroupEntry {
    let dist = label_distribution(&items).expect("groups are non-empty");
    GroupEntry {
        support: items.len(),
        label: dist.majority_label,
        counts: dist.counts,
    }
}

impl MajorityModel {
    pub fn global_majority(&self) -> &str {
        &self.global.label
    }

    pub fn groups(&self) -> &BTreeMap<Vec<String>, GroupEntry> {
        &self.group_table
    }

    pub fn group_for(&self, item: &AuditItem) -> Option<&GroupEntry> {
        let key: Vec<String> = self
            .schema
            .metadata_tuple(item)
            .into_iter()
            .map(String::from)
            .collect();
        self.group_table.get(&key)
    }

    pub fn predict(
        &self,
        items: &[AuditItem],
        view: InputView,
    ) -> Result<Vec<Prediction>, ReaderError> {
        if view != InputView::MetadataOnly {
            return Err(ReaderError::ViewMismatch {
                trained: InputView::MetadataOnly,
                requested: view,
            });
        }
        Ok(items
            .iter()
            .map(|item| {
                let entry = self.group_for(item).unwrap_or(&self.global);
                let scores: BTreeMap<String, f64> = self
                    .labels
                    .iter()
                    .map(|l| {
                        let c = entry.counts.get(l).copied().unwrap_or(0);
                        (l.clone(), c as f64 / entry.support as f64)
                    })
                    .collect();
                Prediction {
                    item_id: item.id.clone(),
                    label: entry.label.clone(),
                    scores,
                }
            })
            .collect())
    }
}

impl Reader for MajorityModel {
    fn info(&self) -> ReaderInfo {
        ReaderInfo {
            name: "metadata-majority".into(),
            kind: ReaderKind::Internal,
            view: InputView::MetadataOnly,
            consumes_metadata: true,
            hyper: None,
        }
    }

    fn predict(
        &self,
        items: &[AuditItem],
        view: InputView,
    ) -> Result<Vec<Prediction>, ReaderError> {
        MajorityModel::predict(self, items, view)
    }
}
