use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::InputView;
use crate::data::AuditItem;

/// Reserved token placed between the query and the evidence, and between
/// evidence passages. [`tokenize`] can never produce it.
pub const SEPARATOR: &str = "[sep]";

/// Lowercases and splits on every character that is neither alphanumeric
/// nor `_`, so `tok_17` stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The token stream a text reader sees for `item` under `view`.
///
/// `metadata_only` yields no text at all.
pub fn view_tokens(item: &AuditItem, view: InputView) -> Vec<String> {
    let mut tokens = Vec::new();
    if view.sees_query() {
        tokens.extend(tokenize(&item.query));
    }
    if view.sees_evidence() {
        for (i, passage) in item.evidence.iter().enumerate() {
            if i > 0 || view.sees_query() {
                tokens.push(SEPARATOR.to_string());
            }
            tokens.extend(tokenize(passage));
        }
    }
    tokens
}

/// Sparse feature row: `(feature index, value)` sorted by index.
pub type SparseRow = Vec<(usize, f64)>;

/// TF-IDF with smoothed idf `ln((1 + N) / (1 + df)) + 1` and L2-normalized
/// rows. Term frequency is the raw count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
}

impl TfidfVectorizer {
    /// Keeps the `cap` most frequent tokens (total count over the corpus,
    /// ties broken lexicographically); indices follow lexicographic order.
    pub fn fit(docs: &[Vec<String>], cap: usize) -> Self {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            for tok in &seen {
                *freq.entry(tok).or_default() += 1;
            }
            seen.sort_unstable();
            seen.dedup();
            for tok in seen {
                *df.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        let mut kept: Vec<&str> = ranked.into_iter().map(|(t, _)| t).collect();
        kept.sort_unstable();

        let n = docs.len() as f64;
        let idf = kept
            .iter()
            .map(|t| ((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0)
            .collect();
        let vocabulary = kept
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), i))
            .collect();
        TfidfVectorizer { vocabulary, idf }
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    /// Out-of-vocabulary tokens are dropped; a document with no known tokens
    /// maps to the zero row.
    pub fn transform(&self, tokens: &[String]) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokens {
            if let Some(&idx) = self.vocabulary.get(tok) {
                *counts.entry(idx).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(idx, tf)| (idx, tf * self.idf[idx]))
            .collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Who wrote tok_17? It's   HAMLET."),
            ["who", "wrote", "tok_17", "it", "s", "hamlet"]
        );
        assert!(tokenize(" ,;. ").is_empty());
        assert!(tokenize(SEPARATOR).iter().all(|t| t != SEPARATOR));
    }

    #[test]
    fn view_tokens_blind_literally() {
        let item = AuditItem {
            id: "x".into(),
            query: "q1 q2".into(),
            evidence: vec!["e1".into(), "e2 e3".into()],
            gold_label: "A".into(),
            metadata: Default::default(),
        };
        assert_eq!(
            view_tokens(&item, InputView::Full),
            ["q1", "q2", SEPARATOR, "e1", SEPARATOR, "e2", "e3"]
        );
        assert_eq!(view_tokens(&item, InputView::QueryOnly), ["q1", "q2"]);
        assert_eq!(
            view_tokens(&item, InputView::EvidenceOnly),
            ["e1", SEPARATOR, "e2", "e3"]
        );
        assert!(view_tokens(&item, InputView::MetadataOnly).is_empty());
    }

    #[test]
    fn vocabulary_cap_uses_frequency_then_lexicographic_order() {
        let docs = vec![toks("b b a c"), toks("c d")];
        // frequencies: b=2, c=2, a=1, d=1 -> cap 3 keeps b, c, a
        let v = TfidfVectorizer::fit(&docs, 3);
        let kept: Vec<_> = v.vocabulary.keys().cloned().collect();
        assert_eq!(kept, ["a", "b", "c"]);
        assert_eq!(v.vocabulary["a"], 0);
        assert_eq!(v.vocabulary["c"], 2);
    }

    #[test]
    fn idf_non_negative_and_rows_normalized() {
        let docs = vec![toks("x y"), toks("x z z"), toks("x")];
        let v = TfidfVectorizer::fit(&docs, 100);
        assert!(v.idf.iter().all(|&w| w >= 1.0));
        // a token in every document gets exactly idf 1
        assert_eq!(v.idf[v.vocabulary["x"]], 1.0);
        for d in &docs {
            let row = v.transform(d);
            let norm: f64 = row.iter().map(|(_, x)| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!(v.transform(&toks("unseen")).is_empty());
    }
}
