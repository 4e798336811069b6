#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evaudit_cli::config::AuditConfig;
use evaudit_cli::packet::AuditPacket;

pub const EVAUDIT: &str = env!("CARGO_BIN_EXE_evaudit");
pub const MOCK: &str = env!("CARGO_BIN_EXE_evaudit-mock-reader");

pub fn evaudit(args: &[&str]) -> Output {
    Command::new(EVAUDIT).args(args).output().expect("evaudit runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub struct Generated {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub generator: PathBuf,
}

/// Runs `evaudit gen` and returns the written paths.
pub fn gen(dir: &Path, coupling: &str, extra: &[&str]) -> Generated {
    let out = dir.join("data");
    let mut args = vec!["gen", "--coupling", coupling, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = evaudit(&args);
    assert!(o.status.success(), "gen failed: {}", stderr(&o));
    Generated {
        dataset: out.join(format!("{coupling}.jsonl")),
        schema: out.join(format!("{coupling}.schema.json")),
        generator: out.join(format!("{coupling}.generator.json")),
    }
}

pub fn config_for(g: &Generated, out: &Path) -> AuditConfig {
    let mut cfg = AuditConfig::new(g.dataset.clone(), g.schema.clone());
    cfg.generator = Some(g.generator.clone());
    cfg.out = out.to_path_buf();
    cfg
}

pub fn write_config(cfg: &AuditConfig, path: &Path) {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}

/// Runs `evaudit audit --config` and loads the resulting packet.
pub fn audit_with_config(cfg: &AuditConfig, config_path: &Path) -> (Output, Option<AuditPacket>) {
    write_config(cfg, config_path);
    let o = evaudit(&["audit", "--config", config_path.to_str().unwrap()]);
    let case = cfg.case.clone().unwrap_or_else(|| {
        cfg.dataset.file_stem().unwrap().to_string_lossy().into_owned()
    });
    let packet_path = cfg.out.join(format!("{case}.packet.json"));
    let packet = o
        .status
        .success()
        .then(|| AuditPacket::load(&packet_path).expect("packet loads"));
    (o, packet)
}
