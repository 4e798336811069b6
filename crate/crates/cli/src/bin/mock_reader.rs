//! A deterministic external reader speaking the line protocol on stdin/stdout.

use std::collections::BTreeMap;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use evaudit_cli::mock::{MockReader, Policy};
use evaudit_core::bridge::serve;
use evaudit_core::data::{ingest_dataset, MetadataSchema};
use evaudit_core::readers::train_majority;

#[derive(Parser)]
#[command(name = "evaudit-mock-reader", about = "Mock reader for protocol tests")]
struct Args {
    /// constant, echo_metadata or evidence_keyword
    #[arg(long)]
    policy: Policy,
    /// Label for `constant`, fallback for `evidence_keyword`.
    #[arg(long)]
    label: Option<String>,
    /// Dataset whose train split builds the `echo_metadata` table.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON object mapping evidence tokens to labels.
    #[arg(long)]
    keywords: Option<PathBuf>,
    #[arg(long)]
    protocol_version: Option<u32>,
}

fn build(args: &Args) -> Result<MockReader> {
    let reader = match args.policy {
        Policy::Constant => MockReader::constant(args.label.clone()),
        Policy::EchoMetadata => {
            let train = args.train.as_ref().context("echo_metadata needs --train")?;
            let schema = args.schema.as_ref().context("echo_metadata needs --schema")?;
            let schema = MetadataSchema::load(schema)?;
            let dataset = ingest_dataset(train, &schema)?;
            MockReader::echo_metadata(train_majority(&dataset.train, &schema)?)
        }
        Policy::EvidenceKeyword => {
            let path = args.keywords.as_ref().context("evidence_keyword needs --keywords")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let table: BTreeMap<String, String> = serde_json::from_str(&text)
                .with_context(|| format!("invalid keyword table {}", path.display()))?;
            MockReader::evidence_keyword(table, args.label.clone())
        }
    };
    Ok(match args.protocol_version {
        Some(v) => reader.with_protocol_version(v),
        None => reader,
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = build(&args).and_then(|mut reader| {
        let stdin = io::stdin();
        let mut input = stdin.lock();
        let mut output = BufWriter::new(io::stdout().lock());
        serve(&mut reader, &mut input, &mut output).context("serving")
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evaudit-mock-reader: {e:#}");
            ExitCode::FAILURE
        }
    }
}
