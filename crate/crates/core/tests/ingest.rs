use std::io::Write;

use evaudit_core::data::{ingest_dataset, label_distribution, write_dataset, DataError, MetadataSchema};
use serde_json::json;

const SCHEMA: &str = r#"{
  "dimensions": [
    {"name": "question_type", "categories": ["bridge", "comparison"]},
    {"name": "answer_type", "categories": ["date", "entity", "yes_no"]}
  ],
  "labels": ["FULL", "CONFLICT"]
}"#;

fn schema_file(dir: &tempfile::TempDir) -> MetadataSchema {
    let path = dir.path().join("schema.json");
    std::fs::write(&path, SCHEMA).unwrap();
    MetadataSchema::load(&path).unwrap()
}

#[test]
fn ingests_2600_records_into_2000_train_and_600_eval() {
    let dir = tempfile::tempdir().unwrap();
    let schema = schema_file(&dir);
    let path = dir.path().join("hotpot_recon.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for i in 0..2600 {
        let split = if i % 13 < 10 { "train" } else { "eval" };
        let label = if i % 27 == 0 { "CONFLICT" } else { "FULL" };
        let rec = json!({
            "id": format!("q{i}"),
            "split": split,
            "query": format!("question number {i}"),
            "evidence": ["first paragraph", "second paragraph"],
            "label": label,
            "metadata": {"question_type": "bridge", "answer_type": "entity"}
        });
        writeln!(f, "{rec}").unwrap();
    }
    drop(f);
    let ds = ingest_dataset(&path, &schema).unwrap();
    assert_eq!((ds.train.len(), ds.eval.len()), (2000, 600));
    assert_eq!(ds.name, "hotpot_recon");
    assert_eq!(ds.train[0].id, "q0");
    assert_eq!(ds.eval[0].id, "q10");
    ds.validate().unwrap();
    let dist = label_distribution(&ds.eval).unwrap();
    assert_eq!(dist.total(), 600);

    let mut out = Vec::new();
    write_dataset(&ds, &mut out).unwrap();
    let copy = dir.path().join("copy.jsonl");
    std::fs::write(&copy, out).unwrap();
    let again = ingest_dataset(&copy, &schema).unwrap();
    assert_eq!((again.train, again.eval), (ds.train, ds.eval));
}

#[test]
fn errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let schema = schema_file(&dir);
    let ok = r#"{"id":"a","split":"train","query":"q","evidence":["e"],"label":"FULL","metadata":{"question_type":"bridge","answer_type":"date"}}"#;
    let cases = [
        (r#"{"id":"b","split":"eval","query":"q","evidence":[],"label":"MAYBE","metadata":{}}"#, "label"),
        (r#"{"id":"b","split":"eval","query":"q","evidence":[],"label":"FULL","metadata":{"hops":"2"}}"#, "dimension"),
        (r#"{"id":"b","split":"eval","query":"q","evidence":[],"label":"FULL","metadata":{"answer_type":"number"}}"#, "category"),
        (r#"{"id":"a","split":"eval","query":"q","evidence":[],"label":"FULL","metadata":{}}"#, "duplicate"),
        (r#"{"id":"b","split":"eval","query":"q","evidence":[],"label":"FULL","metadata":{},"extra":1}"#, "malformed"),
        (r#"{"id":"b","split":"test","query":"q","evidence":[],"label":"FULL","metadata":{}}"#, "malformed"),
        ("not json", "malformed"),
    ];
    for (bad, kind) in cases {
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, format!("{ok}\n{bad}\n{ok}\n")).unwrap();
        let err = ingest_dataset(&path, &schema).unwrap_err();
        let line = match &err {
            DataError::Malformed { line, .. }
            | DataError::UnknownLabel { line, .. }
            | DataError::UnknownDimension { line, .. }
            | DataError::UnknownCategory { line, .. }
            | DataError::DuplicateId { line, .. } => *line,
            other => panic!("{kind}: unexpected {other:?}"),
        };
        assert_eq!(line, 2, "{kind}: {err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }
    let missing = ingest_dataset(&dir.path().join("nope.jsonl"), &schema).unwrap_err();
    assert!(matches!(missing, DataError::Io { .. }));
}
