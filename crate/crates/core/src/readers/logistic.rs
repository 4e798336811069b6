//! TF-IDF features + multinomial logistic regression, trained by full-batch
//! gradient descent on L2-regularized cross-entropy from a zero start.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{view_tokens, SparseRow, TfidfVectorizer, SEPARATOR};
use super::{InputView, Prediction, Reader, ReaderError, ReaderInfo, ReaderKind};
use crate::data::{AuditItem, MetadataSchema};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub vocab_cap: usize,
    /// Recorded for provenance. Training itself has no random component.
    pub seed: u64,
}

impl Default for LrHyper {
    fn default() -> Self {
        LrHyper {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-4,
            vocab_cap: 50_000,
            seed: 0,
        }
    }
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` (bias unpenalized).
///
/// Parameters are flattened as the label-major weight matrix followed by the
/// bias vector.
pub struct LrObjective<'a> {
    rows: &'a [SparseRow],
    targets: &'a [usize],
    n_labels: usize,
    n_features: usize,
    l2: f64,
}

impl<'a> LrObjective<'a> {
    pub fn new(
        rows: &'a [SparseRow],
        targets: &'a [usize],
        n_labels: usize,
        n_features: usize,
        l2: f64,
    ) -> Self {
        assert_eq!(rows.len(), targets.len());
        LrObjective {
            rows,
            targets,
            n_labels,
            n_features,
            l2,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_labels * (self.n_features + 1)
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        self.evaluate(params, false).0
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.evaluate(params, true).1
    }

    pub fn loss_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        self.evaluate(params, true)
    }

    fn evaluate(&self, params: &[f64], with_grad: bool) -> (f64, Vec<f64>) {
        assert_eq!(params.len(), self.n_params());
        let (k, d) = (self.n_labels, self.n_features);
        let (weights, bias) = params.split_at(k * d);
        let n = self.rows.len() as f64;
        let mut grad = if with_grad {
            vec![0.0; params.len()]
        } else {
            Vec::new()
        };
        let mut probs = vec![0.0; k];
        let mut data_loss = 0.0;
        for (row, &y) in self.rows.iter().zip(self.targets) {
            for (c, p) in probs.iter_mut().enumerate() {
                let w = &weights[c * d..(c + 1) * d];
                *p = bias[c] + row.iter().map(|&(j, x)| w[j] * x).sum::<f64>();
            }
            let log_z = log_sum_exp(&probs);
            data_loss += log_z - probs[y];
            if with_grad {
                for (c, p) in probs.iter_mut().enumerate() {
                    *p = (*p - log_z).exp();
                    let residual = *p - if c == y { 1.0 } else { 0.0 };
                    for &(j, x) in row {
                        grad[c * d + j] += residual * x / n;
                    }
                    grad[k * d + c] += residual / n;
                }
            }
        }
        let penalty: f64 = weights.iter().map(|w| w * w).sum();
        if with_grad {
            for (g, w) in grad.iter_mut().zip(weights) {
                *g += self.l2 * w;
            }
        }
        (data_loss / n + 0.5 * self.l2 * penalty, grad)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let log_z = log_sum_exp(logits);
    logits.iter().map(|l| (l - log_z).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Zero-based epoch; the loss is measured before that epoch's update.
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfLrModel {
    pub format_version: u32,
    pub labels: Vec<String>,
    pub view: InputView,
    pub hyperparameters: LrHyper,
    #[serde(flatten)]
    pub vectorizer: TfidfVectorizer,
    /// `labels.len()` rows of `idf.len()` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub training_trace: Vec<TraceEntry>,
}

pub fn train_tfidf_lr(
    train: &[AuditItem],
    schema: &MetadataSchema,
    view: InputView,
    hyper: &LrHyper,
) -> Result<TfidfLrModel, ReaderError> {
    if train.is_empty() {
        return Err(ReaderError::EmptyTrain);
    }
    if view == InputView::MetadataOnly {
        return Err(ReaderError::UnsupportedView(view));
    }
    let docs: Vec<Vec<String>> = train.iter().map(|it| view_tokens(it, view)).collect();
    let vectorizer = TfidfVectorizer::fit(&docs, hyper.vocab_cap);
    if vectorizer.vocabulary.keys().all(|t| t == SEPARATOR) {
        return Err(ReaderError::EmptyVocabulary);
    }
    let rows: Vec<SparseRow> = docs.iter().map(|d| vectorizer.transform(d)).collect();
    let targets = train
        .iter()
        .map(|it| {
            schema.label_index(&it.gold_label).ok_or_else(|| {
                ReaderError::Model(format!("label {:?} is not in the schema", it.gold_label))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (k, d) = (schema.labels().len(), vectorizer.len());
    let objective = LrObjective::new(&rows, &targets, k, d, hyper.l2);
    let mut params = vec![0.0; objective.n_params()];
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let (loss, grad) = objective.loss_and_gradient(&params);
        trace.push(TraceEntry { epoch, loss });
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= hyper.learning_rate * g;
        }
    }
    let (w, b) = params.split_at(k * d);
    Ok(TfidfLrModel {
        format_version: MODEL_FORMAT_VERSION,
        labels: schema.labels().to_vec(),
        view,
        hyperparameters: hyper.clone(),
        vectorizer,
        weights: w.chunks(d).map(<[f64]>::to_vec).collect(),
        bias: b.to_vec(),
        training_trace: trace,
    })
}

impl TfidfLrModel {
    pub fn predict(
        &self,
        items: &[AuditItem],
        view: InputView,
    ) -> Result<Vec<Prediction>, ReaderError> {
        if view != self.view {
            return Err(ReaderError::ViewMismatch {
                trained: self.view,
                requested: view,
            });
        }
        Ok(items
            .iter()
            .map(|item| {
                let row = self.vectorizer.transform(&view_tokens(item, view));
                let logits: Vec<f64> = self
                    .weights
                    .iter()
                    .zip(&self.bias)
                    .map(|(w, b)| b + row.iter().map(|&(j, x)| w[j] * x).sum::<f64>())
                    .collect();
                Prediction::from_scores(&item.id, &self.labels, &softmax(&logits))
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ReaderError> {
        let file = File::create(path).map_err(|e| ReaderError::Model(e.to_string()))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| ReaderError::Model(e.to_string()))?;
        out.flush().map_err(|e| ReaderError::Model(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ReaderError> {
        let file = File::open(path).map_err(|e| ReaderError::Model(e.to_string()))?;
        let model: TfidfLrModel = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ReaderError::Model(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<(), ReaderError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ReaderError::Model(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let d = self.vectorizer.len();
        let shapes_ok = self.weights.len() == self.labels.len()
            && self.bias.len() == self.labels.len()
            && self.weights.iter().all(|w| w.len() == d)
            && self.vectorizer.vocabulary.values().all(|&i| i < d)
            && self.vectorizer.vocabulary.len() == d;
        if !shapes_ok {
            return Err(ReaderError::Model("inconsistent parameter shapes".into()));
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|w| w.is_finite());
        if !finite {
            return Err(ReaderError::Model("non-finite weights".into()));
        }
        Ok(())
    }
}

impl Reader for TfidfLrModel {
    fn info(&self) -> ReaderInfo {
        ReaderInfo {
            name: format!("tfidf-lr/{}", self.view),
            kind: ReaderKind::Internal,
            view: self.view,
            consumes_metadata: false,
            hyper: Some(self.hyperparameters.clone()),
        }
    }

    fn predict(
        &self,
        items: &[AuditItem],
        view: InputView,
    ) -> Result<Vec<Prediction>, ReaderError> {
        TfidfLrModel::predict(self, items, view)
    }
}
