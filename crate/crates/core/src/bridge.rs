//! External readers over a line-delimited JSON protocol on standard streams.
//!
//! Every message is one UTF-8 JSON object followed by `\n`, tagged by
//! `"type"`. The engine opens with a handshake and the reader answers with
//! its own; afterwards the engine sends `predict` requests one at a time and
//! the reader answers each with a `predict` response (or an `error`) carrying
//! the same `batch_id`. `{"type":"shutdown"}` ends the session.
//!
//! The engine masks text per view before sending: query-only requests carry
//! an empty evidence list, evidence-only requests an empty query, and
//! metadata-only requests neither. Metadata is sent only to readers that
//! declare `consumes_metadata`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::AuditItem;
use crate::readers::{InputView, Prediction, Reader, ReaderError, ReaderInfo, ReaderKind};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Allowed deviation of a response's score sum from 1.
pub const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineMessage {
    Handshake {
        protocol_version: u32,
        label_set: Vec<String>,
    },
    Predict(PredictRequest),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub batch_id: u64,
    pub view: InputView,
    pub items: Vec<WireItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireItem {
    pub id: String,
    pub query: String,
    pub evidence: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl WireItem {
    pub fn masked(item: &AuditItem, view: InputView, with_metadata: bool) -> Self {
        WireItem {
            id: item.id.clone(),
            query: if view.sees_query() {
                item.query.clone()
            } else {
                String::new()
            },
            evidence: if view.sees_evidence() {
                item.evidence.clone()
            } else {
                Vec::new()
            },
            metadata: if with_metadata {
                item.metadata.clone()
            } else {
                BTreeMap::new()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReaderMessage {
    Handshake(ReaderHandshake),
    Predict(PredictResponse),
    Error {
        #[serde(default)]
        batch_id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderHandshake {
    pub protocol_version: u32,
    pub reader_name: String,
    pub label_set: Vec<String>,
    pub input_views_supported: Vec<InputView>,
    pub consumes_metadata: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub batch_id: u64,
    pub predictions: Vec<WirePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrediction {
    pub id: String,
    pub label: String,
    pub scores: BTreeMap<String, f64>,
}

fn ext(msg: impl Into<String>) -> ReaderError {
    ReaderError::External(msg.into())
}

fn write_line<T: Serialize>(out: &mut dyn Write, msg: &T) -> io::Result<()> {
    let mut line = serde_json::to_string(msg).map_err(io::Error::other)?;
    line.push('\n');
    out.write_all(line.as_bytes())?;
    out.flush()
}

fn read_message(input: &mut dyn BufRead) -> Result<ReaderMessage, ReaderError> {
    let mut line = String::new();
    let n = input
        .read_line(&mut line)
        .map_err(|e| ext(format!("reading from reader: {e}")))?;
    if n == 0 {
        return Err(ext("reader closed its output stream"));
    }
    serde_json::from_str(line.trim_end_matches(['\n', '\r']))
        .map_err(|e| ext(format!("malformed reader message: {e}: {}", line.trim_end())))
}

struct Channel {
    input: Box<dyn BufRead + Send>,
    output: Box<dyn Write + Send>,
    next_batch: u64,
}

/// A reader behind the wire protocol.
pub struct ExternalReader {
    handshake: ReaderHandshake,
    labels: Vec<String>,
    view: InputView,
    batch_size: usize,
    channel: Mutex<Channel>,
    child: Option<Mutex<Child>>,
}

impl std::fmt::Debug for ExternalReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalReader")
            .field("handshake", &self.handshake)
            .field("view", &self.view)
            .field("batch_size", &self.batch_size)
            .finish()
    }
}

impl ExternalReader {
    /// Spawns `program` and performs the handshake. The child's stderr is
    /// inherited.
    pub fn spawn(program: &str, args: &[String], labels: &[String]) -> Result<Self, ReaderError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ext(format!("cannot start reader {program:?}: {e}")))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped");
        let stdout: ChildStdout = child.stdout.take().expect("piped");
        match Self::connect(BufReader::new(stdout), stdin, labels) {
            Ok(mut reader) => {
                reader.child = Some(Mutex::new(child));
                Ok(reader)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Handshakes over an existing stream pair. Aborts when the reader
    /// speaks another protocol version or declares a different label set.
    pub fn connect(
        input: impl BufRead + Send + 'static,
        output: impl Write + Send + 'static,
        labels: &[String],
    ) -> Result<Self, ReaderError> {
        let mut channel = Channel {
            input: Box::new(input),
            output: Box::new(output),
            next_batch: 0,
        };
        write_line(
            &mut channel.output,
            &EngineMessage::Handshake {
                protocol_version: PROTOCOL_VERSION,
                label_set: labels.to_vec(),
            },
        )
        .map_err(|e| ext(format!("sending handshake: {e}")))?;
        let handshake = match read_message(&mut channel.input)? {
            ReaderMessage::Handshake(h) => h,
            ReaderMessage::Error { message, .. } => {
                return Err(ext(format!("reader refused handshake: {message}")))
            }
            other => return Err(ext(format!("expected handshake, got {other:?}"))),
        };
        if handshake.protocol_version != PROTOCOL_VERSION {
            return Err(ext(format!(
                "protocol version mismatch: engine speaks {PROTOCOL_VERSION}, reader {}",
                handshake.protocol_version
            )));
        }
        let ours: BTreeSet<&String> = labels.iter().collect();
        let theirs: BTreeSet<&String> = handshake.label_set.iter().collect();
        if ours != theirs || theirs.len() != handshake.label_set.len() {
            return Err(ext(format!(
                "label set mismatch: dataset {:?}, reader {:?}",
                labels, handshake.label_set
            )));
        }
        if handshake.input_views_supported.is_empty() {
            return Err(ext("reader supports no input view"));
        }
        let view = if handshake.input_views_supported.contains(&InputView::Full) {
            InputView::Full
        } else {
            handshake.input_views_supported[0]
        };
        Ok(ExternalReader {
            handshake,
            labels: labels.to_vec(),
            view,
            batch_size: DEFAULT_BATCH_SIZE,
            channel: Mutex::new(channel),
            child: None,
        })
    }

    pub fn handshake(&self) -> &ReaderHandshake {
        &self.handshake
    }

    /// Sets the view used for audits (default: full when supported).
    pub fn with_view(mut self, view: InputView) -> Result<Self, ReaderError> {
        self.check_view(view)?;
        self.view = view;
        Ok(self)
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn check_view(&self, view: InputView) -> Result<(), ReaderError> {
        if self.handshake.input_views_supported.contains(&view) {
            Ok(())
        } else {
            Err(ReaderError::UnsupportedView(view))
        }
    }

    fn exchange(
        &self,
        channel: &mut Channel,
        view: InputView,
        batch: &[AuditItem],
    ) -> Result<Vec<Prediction>, ReaderError> {
        let batch_id = channel.next_batch;
        channel.next_batch += 1;
        let request = EngineMessage::Predict(PredictRequest {
            batch_id,
            view,
            items: batch
                .iter()
                .map(|it| WireItem::masked(it, view, self.handshake.consumes_metadata))
                .collect(),
        });
        write_line(&mut channel.output, &request)
            .map_err(|e| ext(format!("sending batch {batch_id}: {e}")))?;
        let response = match read_message(&mut channel.input)? {
            ReaderMessage::Predict(r) => r,
            ReaderMessage::Error { batch_id: b, message } => {
                return Err(ext(format!("reader error on batch {b:?}: {message}")))
            }
            other => return Err(ext(format!("expected predict response, got {other:?}"))),
        };
        if response.batch_id != batch_id {
            return Err(ext(format!(
                "response batch id {} does not answer request {batch_id}",
                response.batch_id
            )));
        }
        if response.predictions.len() != batch.len() {
            return Err(ext(format!(
                "batch {batch_id}: {} predictions for {} items",
                response.predictions.len(),
                batch.len()
            )));
        }
        batch
            .iter()
            .zip(response.predictions)
            .map(|(item, p)| self.check_prediction(batch_id, item, p))
            .collect()
    }

    fn check_prediction(
        &self,
        batch_id: u64,
        item: &AuditItem,
        p: WirePrediction,
    ) -> Result<Prediction, ReaderError> {
        if p.id != item.id {
            return Err(ext(format!(
                "batch {batch_id}: response id {:?} where {:?} was expected",
                p.id, item.id
            )));
        }
        if !self.labels.contains(&p.label) {
            return Err(ext(format!("batch {batch_id}: unknown label {:?}", p.label)));
        }
        let mut sum = 0.0;
        for (label, s) in &p.scores {
            if !self.labels.contains(label) || !s.is_finite() || *s < 0.0 {
                return Err(ext(format!(
                    "batch {batch_id}: invalid score {label:?} = {s} for item {:?}",
                    p.id
                )));
            }
            sum += s;
        }
        if (sum - 1.0).abs() > SCORE_TOLERANCE {
            return Err(ext(format!(
                "batch {batch_id}: scores for item {:?} sum to {sum}",
                p.id
            )));
        }
        Ok(Prediction {
            item_id: p.id,
            label: p.label,
            scores: p.scores,
        })
    }
}

impl Reader for ExternalReader {
    fn info(&self) -> ReaderInfo {
        ReaderInfo {
            name: self.handshake.reader_name.clone(),
            kind: ReaderKind::External,
            view: self.view,
            consumes_metadata: self.handshake.consumes_metadata,
            hyper: None,
        }
    }

    fn predict(&self, items: &[AuditItem], view: InputView) -> Result<Vec<Prediction>, ReaderError> {
        self.check_view(view)?;
        let mut channel = self.channel.lock().map_err(|_| ext("reader channel poisoned"))?;
        if items.is_empty() {
            // still one round trip, so readers see every request shape
            return self.exchange(&mut channel, view, items);
        }
        let mut out = Vec::with_capacity(items.len());
        for batch in items.chunks(self.batch_size) {
            out.extend(self.exchange(&mut channel, view, batch)?);
        }
        Ok(out)
    }
}

impl Drop for ExternalReader {
    fn drop(&mut self) {
        if let Ok(channel) = self.channel.get_mut() {
            let _ = write_line(&mut channel.output, &EngineMessage::Shutdown);
            // close the reader's input so it cannot block on a read
            channel.output = Box::new(io::sink());
        }
        if let Some(child) = &self.child {
            if let Ok(mut child) = child.lock() {
                let _ = child.wait();
            }
        }
    }
}

/// The reader side of the protocol, for implementing readers and mocks.
pub trait ServedReader {
    /// `engine_labels` is the label set the engine announced.
    fn handshake(&mut self, engine_labels: &[String]) -> ReaderHandshake;
    fn predict(&mut self, view: InputView, items: &[WireItem]) -> Result<Vec<WirePrediction>, String>;
}

/// Runs the reader side until shutdown or end of input.
pub fn serve(
    reader: &mut dyn ServedReader,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> io::Result<()> {
    let mut line = String::new();
    let mut greeted = false;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let text = line.trim_end_matches(['\n', '\r']);
        let msg: EngineMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => {
                let batch_id = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.get("batch_id").and_then(|b| b.as_u64()));
                write_line(
                    output,
                    &ReaderMessage::Error {
                        batch_id,
                        message: format!("malformed message: {e}"),
                    },
                )?;
                continue;
            }
        };
        match msg {
            EngineMessage::Handshake {
                protocol_version,
                label_set,
            } => {
                if protocol_version != PROTOCOL_VERSION {
                    write_line(
                        output,
                        &ReaderMessage::Error {
                            batch_id: None,
                            message: format!(
                                "unsupported protocol version {protocol_version}, expected {PROTOCOL_VERSION}"
                            ),
                        },
                    )?;
                    return Ok(());
                }
                greeted = true;
                write_line(output, &ReaderMessage::Handshake(reader.handshake(&label_set)))?;
            }
            EngineMessage::Predict(req) if greeted => {
                let reply = match reader.predict(req.view, &req.items) {
                    Ok(predictions) => ReaderMessage::Predict(PredictResponse {
                        batch_id: req.batch_id,
                        predictions,
                    }),
                    Err(message) => ReaderMessage::Error {
                        batch_id: Some(req.batch_id),
                        message,
                    },
                };
                write_line(output, &reply)?;
            }
            EngineMessage::Predict(req) => write_line(
                output,
                &ReaderMessage::Error {
                    batch_id: Some(req.batch_id),
                    message: "predict before handshake".into(),
                },
            )?,
            EngineMessage::Shutdown => return Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::item;
    use std::thread;

    struct FirstLabel {
        labels: Vec<String>,
        version: u32,
        seen: std::sync::Arc<Mutex<Vec<PredictRequestShape>>>,
    }

    #[derive(Debug, Clone, PartialEq)]
    struct PredictRequestShape {
        view: InputView,
        ids: Vec<String>,
        evidence_empty: bool,
        metadata_empty: bool,
    }

    impl ServedReader for FirstLabel {
        fn handshake(&mut self, _: &[String]) -> ReaderHandshake {
            ReaderHandshake {
                protocol_version: self.version,
                reader_name: "first-label".into(),
                label_set: self.labels.clone(),
                input_views_supported: InputView::ALL.to_vec(),
                consumes_metadata: false,
            }
        }

        fn predict(&mut self, view: InputView, items: &[WireItem]) -> Result<Vec<WirePrediction>, String> {
            self.seen.lock().unwrap().push(PredictRequestShape {
                view,
                ids: items.iter().map(|i| i.id.clone()).collect(),
                evidence_empty: items.iter().all(|i| i.evidence.is_empty()),
                metadata_empty: items.iter().all(|i| i.metadata.is_empty()),
            });
            Ok(items
                .iter()
                .map(|i| WirePrediction {
                    id: i.id.clone(),
                    label: self.labels[0].clone(),
                    scores: self
                        .labels
                        .iter()
                        .enumerate()
                        .map(|(k, l)| (l.clone(), if k == 0 { 1.0 } else { 0.0 }))
                        .collect(),
                })
                .collect())
        }
    }

    fn labels() -> Vec<String> {
        vec!["CONFLICT".into(), "FULL".into()]
    }

    #[allow(clippy::type_complexity)]
    fn start(
        version: u32,
        served_labels: Vec<String>,
    ) -> (
        Result<ExternalReader, ReaderError>,
        std::sync::Arc<Mutex<Vec<PredictRequestShape>>>,
        thread::JoinHandle<()>,
    ) {
        let (to_reader_r, to_reader_w) = io::pipe().unwrap();
        let (from_reader_r, from_reader_w) = io::pipe().unwrap();
        let seen = std::sync::Arc::new(Mutex::new(Vec::new()));
        let mut mock = FirstLabel {
            labels: served_labels,
            version,
            seen: seen.clone(),
        };
        let handle = thread::spawn(move || {
            let mut input = BufReader::new(to_reader_r);
            let mut output = from_reader_w;
            serve(&mut mock, &mut input, &mut output).unwrap();
        });
        let reader = ExternalReader::connect(BufReader::new(from_reader_r), to_reader_w, &labels());
        (reader, seen, handle)
    }

    #[test]
    fn handshake_then_batches_in_order() {
        let (reader, seen, handle) = start(PROTOCOL_VERSION, labels());
        let reader = reader.unwrap().with_batch_size(2);
        assert_eq!(reader.info().kind, ReaderKind::External);
        assert!(reader.predict(&[], InputView::Full).unwrap().is_empty());
        let items: Vec<_> = (0..3)
            .map(|i| item(&format!("i{i}"), "FULL", "bridge", "date"))
            .collect();
        let preds = reader.predict(&items, InputView::QueryOnly).unwrap();
        assert_eq!(preds.len(), 3);
        assert!(preds.iter().all(|p| p.label == "CONFLICT"));
        assert_eq!(
            preds.iter().map(|p| p.item_id.as_str()).collect::<Vec<_>>(),
            ["i0", "i1", "i2"]
        );
        drop(reader);
        handle.join().unwrap();
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[1].ids, ["i0", "i1"]);
        assert_eq!(seen[2].ids, ["i2"]);
        // query-only requests never carry evidence; metadata is withheld
        assert!(seen[1].evidence_empty && seen[1].metadata_empty);
    }

    #[test]
    fn version_and_label_mismatch_abort() {
        let (reader, _, handle) = start(2, labels());
        assert!(matches!(reader, Err(ReaderError::External(m)) if m.contains("refused") || m.contains("version")));
        handle.join().unwrap();

        let (reader, _, handle) = start(PROTOCOL_VERSION, vec!["A".into(), "B".into()]);
        assert!(matches!(&reader, Err(ReaderError::External(m)) if m.contains("label set")));
        drop(reader);
        handle.join().unwrap();
    }

    #[test]
    fn serve_answers_malformed_lines_with_batch_id() {
        let mut mock = FirstLabel {
            labels: labels(),
            version: PROTOCOL_VERSION,
            seen: Default::default(),
        };
        let input = concat!(
            r#"{"type":"handshake","protocol_version":1,"label_set":["CONFLICT","FULL"]}"#,
            "\n",
            r#"{"type":"predict","batch_id":7,"view":"sideways","items":[]}"#,
            "\n",
            r#"{"type":"shutdown"}"#,
            "\n",
            r#"{"type":"predict","batch_id":8,"view":"full","items":[]}"#,
            "\n"
        );
        let mut out = Vec::new();
        serve(&mut mock, &mut input.as_bytes(), &mut out).unwrap();
        let lines: Vec<ReaderMessage> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert!(matches!(lines[0], ReaderMessage::Handshake(_)));
        assert!(matches!(lines[1], ReaderMessage::Error { batch_id: Some(7), .. }));
    }

    #[test]
    fn wire_shapes() {
        let req = EngineMessage::Predict(PredictRequest {
            batch_id: 0,
            view: InputView::Full,
            items: vec![],
        });
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"type":"predict","batch_id":0,"view":"full","items":[]}"#
        );
        assert_eq!(
            serde_json::to_string(&EngineMessage::Shutdown).unwrap(),
            r#"{"type":"shutdown"}"#
        );
    }

    #[test]
    fn masking_follows_view() {
        let it = item("x", "FULL", "bridge", "date");
        let q = WireItem::masked(&it, InputView::QueryOnly, true);
        assert!(q.evidence.is_empty() && !q.query.is_empty() && !q.metadata.is_empty());
        let e = WireItem::masked(&it, InputView::EvidenceOnly, false);
        assert!(e.query.is_empty() && e.evidence == it.evidence && e.metadata.is_empty());
        let m = WireItem::masked(&it, InputView::MetadataOnly, true);
        assert!(m.query.is_empty() && m.evidence.is_empty());
    }
}
