use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use evaudit_core::audit::{
    classify_region, run_ablation_table, run_audit, run_reader_ablations, Diagnostics,
};
use evaudit_core::bridge::ExternalReader;
use evaudit_core::consequence::run_consequences;
use evaudit_core::data::{ingest_dataset, label_distribution, write_dataset, MetadataSchema};
use evaudit_core::readers::{InputView, Reader, ReaderSpec};
use evaudit_core::synthetic::{describe_generator, generate, GeneratorConfig, GeneratorDescription};

use crate::config::{AuditConfig, ReaderChoice};
use crate::packet::{
    recommendation, AuditPacket, DatasetSummary, Layer, Provenance, ReaderProvenance,
    PACKET_VERSION, TOOL,
};

pub const RECOMMENDED_K: usize = 20;

/// Where `cmd_audit` wrote its files.
#[derive(Debug, Clone)]
pub struct AuditOutputs {
    pub packet: PathBuf,
    pub runs: PathBuf,
    pub map: PathBuf,
}

fn open_reader(cfg: &AuditConfig, dataset: &evaudit_core::Dataset) -> Result<Box<dyn Reader>> {
    match &cfg.reader {
        ReaderChoice::Internal { view, hyper } => {
            let reader = ReaderSpec::for_view(*view, hyper)
                .train(&dataset.train, &dataset.schema)
                .context("training the audited reader")?;
            Ok(reader)
        }
        ReaderChoice::External {
            command,
            view,
            batch_size,
        } => {
            let (program, args) = command.split_first().context("empty reader command")?;
            let mut reader = ExternalReader::spawn(program, args, dataset.schema.labels())
                .context("starting the external reader")?
                .with_batch_size(*batch_size);
            if let Some(view) = view {
                reader = reader.with_view(*view)?;
            }
            Ok(Box::new(reader))
        }
    }
}

/// Runs the audit packet: schema and data, metadata screen and evidence
/// shuffles, input ablations, verdict, then the consequence analyses.
pub fn run_audit_packet(cfg: &AuditConfig) -> Result<AuditPacket> {
    cfg.validate().context("stage config")?;
    let schema = MetadataSchema::load(&cfg.schema).context("stage schema")?;
    let dataset = ingest_dataset(&cfg.dataset, &schema).context("stage ingest")?;
    dataset.require_splits().context("stage ingest")?;
    let generator: Option<GeneratorDescription> = match &cfg.generator {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("stage config: reading {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| {
                format!("stage config: invalid generator record {}", path.display())
            })?)
        }
    };

    let reader = open_reader(cfg, &dataset).context("stage reader")?;
    let external = cfg.reader.is_external();
    let layer = if external {
        Layer::Calibrated
    } else {
        Layer::Screening
    };

    let opts = cfg.options();
    let statistics = run_audit(&dataset, reader.as_ref(), &opts).context("stage audit")?;

    let ablations = if external {
        run_reader_ablations(&dataset, reader.as_ref(), &cfg.ablation_views)
    } else {
        run_ablation_table(&dataset, &cfg.ablation_views, &cfg.ablation_hyper)
    }
    .context("stage ablations")?;

    let skew = label_distribution(&dataset.eval).context("stage skew")?;
    let diag = Diagnostics {
        majority_fraction: skew.majority_fraction,
        query_only_accuracy: ablations.accuracy(InputView::QueryOnly),
        calibrated: external,
    };
    let verdict = classify_region(&statistics, &diag, &cfg.thresholds);

    let consequences = match &cfg.consequences {
        None => None,
        Some(specs) => {
            // the flip needs a reader that looks at metadata
            let flip_reader = (external && reader.consumes_metadata()).then_some(reader.as_ref());
            Some(run_consequences(&dataset, specs, flip_reader).context("stage consequences")?)
        }
    };

    let (command, protocol_version) = match &cfg.reader {
        ReaderChoice::External { command, .. } => (
            Some(command.clone()),
            Some(evaudit_core::bridge::PROTOCOL_VERSION),
        ),
        ReaderChoice::Internal { .. } => (None, None),
    };
    let provenance = Provenance {
        tool: TOOL.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        k: cfg.k,
        shuffle_seeds: opts.shuffle_seeds(),
        permutation: cfg.permutation,
        chance_policy: cfg.chance,
        thresholds: cfg.thresholds.clone(),
        reader: ReaderProvenance {
            info: reader.info(),
            command,
            protocol_version,
        },
        ablation_views: cfg.ablation_views.clone(),
        ablation_hyper: cfg.ablation_hyper.clone(),
        generator,
        dataset_path: cfg.dataset.display().to_string(),
        schema_path: cfg.schema.display().to_string(),
        evidence_order: "as supplied; passages are moved as a unit".into(),
    };
    drop(reader);

    Ok(AuditPacket {
        packet_version: PACKET_VERSION,
        case: cfg.case.clone().unwrap_or_else(|| dataset.name.clone()),
        layer,
        recommendation: recommendation(&verdict, layer),
        dataset: DatasetSummary {
            name: dataset.name.clone(),
            n_train: dataset.train.len(),
            n_eval: dataset.eval.len(),
            labels: schema.labels().to_vec(),
            dimensions: schema.dimensions().iter().map(|d| d.name.clone()).collect(),
        },
        statistics,
        verdict,
        ablations,
        skew,
        consequences,
        provenance,
    })
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_else(|| "NA".into())
}

pub fn runs_csv(packet: &AuditPacket) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case", "run", "seed", "accuracy"])?;
    for (i, run) in packet.statistics.runs.iter().enumerate() {
        w.write_record([
            packet.case.clone(),
            (i + 1).to_string(),
            run.permutation.seed.to_string(),
            fmt4(run.accuracy),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn map_csv(packets: &[AuditPacket]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case", "mpds", "delta_evi", "sigma_shuf", "region"])?;
    for p in packets {
        let s = &p.statistics;
        w.write_record([
            p.case.clone(),
            fmt_opt(s.mpds),
            fmt4(s.delta_evi),
            fmt4(s.sigma_shuf),
            p.verdict.region.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `audit`: writes `<case>.packet.json`, `<case>.runs.csv` and
/// `<case>.map.csv` into the output directory.
pub fn cmd_audit(cfg: &AuditConfig) -> Result<(AuditPacket, AuditOutputs)> {
    if cfg.k < RECOMMENDED_K {
        eprintln!(
            "note: K = {} shuffles; K >= {RECOMMENDED_K} is recommended for production audits",
            cfg.k
        );
    }
    let packet = run_audit_packet(cfg)?;
    let json = packet.to_json().context("stage packet")?;
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("stage output: creating {}", cfg.out.display()))?;
    let outputs = AuditOutputs {
        packet: cfg.out.join(format!("{}.packet.json", packet.case)),
        runs: cfg.out.join(format!("{}.runs.csv", packet.case)),
        map: cfg.out.join(format!("{}.map.csv", packet.case)),
    };
    let write = |path: &Path, text: &str| {
        std::fs::write(path, text)
            .with_context(|| format!("stage output: writing {}", path.display()))
    };
    write(&outputs.packet, &json)?;
    write(&outputs.runs, &runs_csv(&packet)?)?;
    write(&outputs.map, &map_csv(std::slice::from_ref(&packet))?)?;
    Ok((packet, outputs))
}

/// Where `cmd_gen` wrote its files.
#[derive(Debug, Clone)]
pub struct GenOutputs {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub generator: PathBuf,
}

/// `gen`: writes `<name>.jsonl`, `<name>.schema.json` and
/// `<name>.generator.json`.
pub fn cmd_gen(config: &GeneratorConfig, out: &Path, name: &str) -> Result<GenOutputs> {
    let dataset = generate(config)?;
    let description = describe_generator(config)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outputs = GenOutputs {
        dataset: out.join(format!("{name}.jsonl")),
        schema: out.join(format!("{name}.schema.json")),
        generator: out.join(format!("{name}.generator.json")),
    };
    let mut buf = Vec::new();
    write_dataset(&dataset, &mut buf)?;
    std::fs::write(&outputs.dataset, buf)?;
    let mut schema = serde_json::to_string_pretty(&dataset.schema)?;
    schema.push('\n');
    std::fs::write(&outputs.schema, schema)?;
    let mut desc = serde_json::to_string_pretty(&description)?;
    desc.push('\n');
    std::fs::write(&outputs.generator, desc)?;
    Ok(outputs)
}

/// One row of the decision table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub case: String,
    pub outcome: String,
    pub region: String,
}

impl ReportRow {
    pub fn from_packet(p: &AuditPacket) -> Self {
        let s = &p.statistics;
        ReportRow {
            case: p.case.clone(),
            outcome: format!("MPDS = {}, ΔEvi = {}", fmt_opt(s.mpds), fmt4(s.delta_evi)),
            region: p.verdict.region.to_string(),
        }
    }
}

pub struct Report {
    pub rows: Vec<ReportRow>,
    pub packets: Vec<AuditPacket>,
}

impl Report {
    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["case", "outcome", "region"])?;
        for r in &self.rows {
            w.write_record([&r.case, &r.outcome, &r.region])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn text(&self) -> String {
        let header = ReportRow {
            case: "case".into(),
            outcome: "outcome".into(),
            region: "region".into(),
        };
        let all: Vec<&ReportRow> = std::iter::once(&header).chain(&self.rows).collect();
        let width = |f: fn(&ReportRow) -> &str| {
            all.iter().map(|r| f(r).chars().count()).max().unwrap_or(0)
        };
        let wc = width(|r| &r.case);
        let wo = width(|r| &r.outcome);
        let mut out = String::new();
        for r in all {
            let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
            let _ = writeln!(out, "{}  {}  {}", pad(&r.case, wc), pad(&r.outcome, wo), r.region);
        }
        out
    }
}

/// `report`: the merged decision table over one or more packets.
pub fn cmd_report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        bail!("report needs at least one packet");
    }
    let packets = paths
        .iter()
        .map(|p| AuditPacket::load(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Report {
        rows: packets.iter().map(ReportRow::from_packet).collect(),
        packets,
    })
}
