use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evaudit_cli::commands::{cmd_audit, cmd_gen, cmd_report};
use evaudit_cli::config::{AuditConfig, ReaderChoice};
use evaudit_core::bridge::DEFAULT_BATCH_SIZE;
use evaudit_core::readers::{InputView, LrHyper};
use evaudit_core::synthetic::{Coupling, GeneratorConfig};

#[derive(Parser)]
#[command(name = "evaudit", version, about = "Evidence-intervention audits for benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit a dataset and write the packet, per-run CSV and map points.
    Audit(AuditArgs),
    /// Generate a synthetic benchmark with known coupling.
    Gen(GenArgs),
    /// Merge packets into a decision table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ReaderKindArg {
    Internal,
    External,
}

#[derive(Args)]
struct AuditArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Generator record to copy into provenance.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    reader: Option<ReaderKindArg>,
    /// External reader command line, split shell-style.
    #[arg(long)]
    reader_cmd: Option<String>,
    /// View for the audited reader.
    #[arg(long)]
    view: Option<InputView>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    coupling: Coupling,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 600)]
    n_eval: usize,
    #[arg(long)]
    mpds_target: Option<f64>,
    #[arg(long)]
    majority_fraction: Option<f64>,
    #[arg(long)]
    vocabulary_size: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// File stem; defaults to the coupling name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    packets: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the combined map points.
    #[arg(long)]
    map: Option<PathBuf>,
}

fn audit_config(a: AuditArgs) -> Result<AuditConfig> {
    let mut cfg = match (&a.config, &a.dataset, &a.schema) {
        (Some(path), _, _) => AuditConfig::load(path)?,
        (None, Some(d), Some(s)) => AuditConfig::new(d.clone(), s.clone()),
        _ => bail!("audit needs --config, or both --dataset and --schema"),
    };
    if a.config.is_some() {
        if let Some(d) = a.dataset {
            cfg.dataset = d;
        }
        if let Some(s) = a.schema {
            cfg.schema = s;
        }
    }
    if let Some(g) = a.generator {
        cfg.generator = Some(g);
    }
    if let Some(c) = a.case {
        cfg.case = Some(c);
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epsilon {
        cfg.thresholds.epsilon = e;
    }
    if let Some(out) = a.out {
        cfg.out = out;
    }
    let command = a
        .reader_cmd
        .as_deref()
        .map(|line| shlex::split(line).context("cannot parse --reader-cmd"))
        .transpose()?;
    let external = match a.reader {
        Some(ReaderKindArg::External) => true,
        Some(ReaderKindArg::Internal) => false,
        None => command.is_some() || cfg.reader.is_external(),
    };
    cfg.reader = match (external, cfg.reader.clone()) {
        (false, ReaderChoice::Internal { view, hyper }) => ReaderChoice::Internal {
            view: a.view.unwrap_or(view),
            hyper,
        },
        (false, ReaderChoice::External { .. }) => ReaderChoice::Internal {
            view: a.view.unwrap_or(InputView::Full),
            hyper: LrHyper::default(),
        },
        (true, ReaderChoice::External { command: c, view, batch_size }) => ReaderChoice::External {
            command: command.unwrap_or(c),
            view: a.view.or(view),
            batch_size,
        },
        (true, ReaderChoice::Internal { .. }) => ReaderChoice::External {
            command: command.context("--reader external needs --reader-cmd")?,
            view: a.view,
            batch_size: DEFAULT_BATCH_SIZE,
        },
    };
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Audit(a) => {
            let cfg = audit_config(a)?;
            let (packet, outputs) = cmd_audit(&cfg)?;
            println!(
                "{}: {} ({})",
                packet.case, packet.verdict.region, packet.recommendation
            );
            for line in &packet.verdict.rationale {
                println!("  {line}");
            }
            println!("packet: {}", outputs.packet.display());
        }
        Command::Gen(g) => {
            let mut cfg = GeneratorConfig::new(g.coupling, g.seed);
            cfg.n_train = g.n_train;
            cfg.n_eval = g.n_eval;
            if let Some(t) = g.mpds_target {
                cfg.latent_mpds_target = t;
            }
            if let Some(m) = g.majority_fraction {
                cfg.majority_fraction = m;
            }
            if let Some(v) = g.vocabulary_size {
                cfg.vocabulary_size = v;
            }
            let name = g.name.unwrap_or_else(|| g.coupling.as_str().to_string());
            let out = cmd_gen(&cfg, &g.out, &name)?;
            println!("{}", out.dataset.display());
            println!("{}", out.schema.display());
            println!("{}", out.generator.display());
        }
        Command::Report(r) => {
            let report = cmd_report(&r.packets)?;
            print!("{}", report.text());
            if let Some(path) = r.csv {
                std::fs::write(&path, report.csv()?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = r.map {
                std::fs::write(&path, evaudit_cli::commands::map_csv(&report.packets)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
