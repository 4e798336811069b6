//! Deterministic readers served over the line protocol, for protocol and
//! end-to-end tests.

use std::collections::BTreeMap;
use std::str::FromStr;

use evaudit_core::bridge::{ReaderHandshake, ServedReader, WireItem, WirePrediction, PROTOCOL_VERSION};
use evaudit_core::data::AuditItem;
use evaudit_core::readers::{tokenize, InputView, MajorityModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Constant,
    EchoMetadata,
    EvidenceKeyword,
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Policy::Constant),
            "echo_metadata" => Ok(Policy::EchoMetadata),
            "evidence_keyword" => Ok(Policy::EvidenceKeyword),
            other => Err(format!(
                "unknown policy {other:?} (expected constant, echo_metadata or evidence_keyword)"
            )),
        }
    }
}

enum Rule {
    /// `None` means the first label the engine announces.
    Constant(Option<String>),
    Echo(MajorityModel),
    Keyword {
        table: BTreeMap<String, String>,
        fallback: Option<String>,
    },
}

pub struct MockReader {
    rule: Rule,
    name: String,
    labels: Vec<String>,
    protocol_version: u32,
}

impl MockReader {
    pub fn constant(label: Option<String>) -> Self {
        Self::with_rule(Rule::Constant(label), "mock-constant")
    }

    /// Looks up each item's metadata group in a trained majority table.
    pub fn echo_metadata(model: MajorityModel) -> Self {
        Self::with_rule(Rule::Echo(model), "mock-echo-metadata")
    }

    /// Labels by the first evidence token found in `table`; items without a
    /// keyword get `fallback` (default: the first engine label).
    pub fn evidence_keyword(table: BTreeMap<String, String>, fallback: Option<String>) -> Self {
        Self::with_rule(Rule::Keyword { table, fallback }, "mock-evidence-keyword")
    }

    fn with_rule(rule: Rule, name: &str) -> Self {
        MockReader {
            rule,
            name: name.into(),
            labels: Vec::new(),
            protocol_version: PROTOCOL_VERSION,
        }
    }

    /// Announces another protocol version, to exercise the engine's check.
    pub fn with_protocol_version(mut self, version: u32) -> Self {
        self.protocol_version = version;
        self
    }

    fn one_hot(&self, id: &str, label: &str) -> WirePrediction {
        WirePrediction {
            id: id.into(),
            label: label.into(),
            scores: self
                .labels
                .iter()
                .map(|l| (l.clone(), if l == label { 1.0 } else { 0.0 }))
                .collect(),
        }
    }

    fn first_label(&self) -> Result<&str, String> {
        self.labels
            .first()
            .map(String::as_str)
            .ok_or_else(|| "empty label set".to_string())
    }
}

impl ServedReader for MockReader {
    fn handshake(&mut self, engine_labels: &[String]) -> ReaderHandshake {
        self.labels = engine_labels.to_vec();
        ReaderHandshake {
            protocol_version: self.protocol_version,
            reader_name: self.name.clone(),
            label_set: self.labels.clone(),
            input_views_supported: InputView::ALL.to_vec(),
            consumes_metadata: matches!(self.rule, Rule::Echo(_)),
        }
    }

    fn predict(&mut self, _view: InputView, items: &[WireItem]) -> Result<Vec<WirePrediction>, String> {
        match &self.rule {
            Rule::Constant(label) => {
                let label = match label {
                    Some(l) => l.clone(),
                    None => self.first_label()?.to_string(),
                };
                Ok(items.iter().map(|it| self.one_hot(&it.id, &label)).collect())
            }
            Rule::Echo(model) => {
                let as_items: Vec<AuditItem> = items
                    .iter()
                    .map(|it| AuditItem {
                        id: it.id.clone(),
                        query: String::new(),
                        evidence: Vec::new(),
                        gold_label: String::new(),
                        metadata: it.metadata.clone(),
                    })
                    .collect();
                let preds = model
                    .predict(&as_items, InputView::MetadataOnly)
                    .map_err(|e| e.to_string())?;
                Ok(preds
                    .into_iter()
                    .map(|p| WirePrediction {
                        id: p.item_id,
                        label: p.label,
                        scores: p.scores,
                    })
                    .collect())
            }
            Rule::Keyword { table, fallback } => {
                let default = match fallback {
                    Some(l) => l.clone(),
                    None => self.first_label()?.to_string(),
                };
                Ok(items
                    .iter()
                    .map(|it| {
                        let hit = it
                            .evidence
                            .iter()
                            .flat_map(|p| tokenize(p))
                            .find_map(|tok| table.get(&tok).cloned());
                        self.one_hot(&it.id, &hit.unwrap_or_else(|| default.clone()))
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use evaudit_core::bridge::serve;

    fn session(reader: &mut MockReader, lines: &[&str]) -> Vec<serde_json::Value> {
        let input = lines.join("\n") + "\n";
        let mut out = Vec::new();
        serve(reader, &mut input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    const HELLO: &str = r#"{"type":"handshake","protocol_version":1,"label_set":["A","B"]}"#;

    #[test]
    fn constant_labels_everything_alike() {
        let mut r = MockReader::constant(Some("B".into()));
        let batch = r#"{"type":"predict","batch_id":0,"view":"full","items":[
            {"id":"x","query":"q","evidence":["e"],"metadata":{}},
            {"id":"y","query":"other","evidence":[],"metadata":{}},
            {"id":"z","query":"","evidence":["f"],"metadata":{}}]}"#
            .replace('\n', "");
        let replies = session(&mut r, &[HELLO, &batch, r#"{"type":"shutdown"}"#]);
        assert_eq!(replies[0]["consumes_metadata"], false);
        let preds = replies[1]["predictions"].as_array().unwrap();
        let ids: Vec<&str> = preds.iter().map(|p| p["id"].as_str().unwrap()).collect();
        assert_eq!(ids, ["x", "y", "z"]);
        assert!(preds.iter().all(|p| p["label"] == "B" && p["scores"]["B"] == 1.0));
    }

    #[test]
    fn keyword_reads_evidence_only() {
        let table = [("alpha".to_string(), "B".to_string())].into_iter().collect();
        let mut r = MockReader::evidence_keyword(table, None);
        let replies = session(
            &mut r,
            &[
                HELLO,
                r#"{"type":"predict","batch_id":4,"view":"full","items":[{"id":"x","query":"alpha","evidence":["beta"],"metadata":{}},{"id":"y","query":"","evidence":["Alpha!"],"metadata":{}}]}"#,
            ],
        );
        assert_eq!(replies[1]["batch_id"], 4);
        assert_eq!(replies[1]["predictions"][0]["label"], "A");
        assert_eq!(replies[1]["predictions"][1]["label"], "B");
    }

    #[test]
    fn policies_parse() {
        assert_eq!("echo_metadata".parse::<Policy>(), Ok(Policy::EchoMetadata));
        assert!("oracle".parse::<Policy>().is_err());
    }
}
