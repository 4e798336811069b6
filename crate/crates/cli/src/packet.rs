//! The audit packet: statistics, verdict and everything needed to rerun it.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use evaudit_core::audit::{
    AblationTable, AuditStatistics, ChancePolicy, PermutationKind, Region, RegionVerdict,
    Thresholds,
};
use evaudit_core::consequence::ConsequenceReport;
use evaudit_core::data::LabelDistribution;
use evaudit_core::readers::{InputView, LrHyper, ReaderInfo, ReaderKind};
use evaudit_core::synthetic::GeneratorDescription;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PACKET_VERSION: u32 = 1;
pub const TOOL: &str = "evaudit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Screening,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSummary {
    pub name: String,
    pub n_train: usize,
    pub n_eval: usize,
    pub labels: Vec<String>,
    pub dimensions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderProvenance {
    #[serde(flatten)]
    pub info: ReaderInfo,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub command: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub protocol_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub seed: u64,
    pub k: usize,
    pub shuffle_seeds: Vec<u64>,
    pub permutation: PermutationKind,
    pub chance_policy: ChancePolicy,
    pub thresholds: Thresholds,
    pub reader: ReaderProvenance,
    pub ablation_views: Vec<InputView>,
    pub ablation_hyper: LrHyper,
    pub generator: Option<GeneratorDescription>,
    pub dataset_path: String,
    pub schema_path: String,
    pub evidence_order: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditPacket {
    pub packet_version: u32,
    pub case: String,
    pub layer: Layer,
    pub recommendation: String,
    pub dataset: DatasetSummary,
    pub statistics: AuditStatistics,
    pub verdict: RegionVerdict,
    pub ablations: AblationTable,
    pub skew: LabelDistribution,
    pub consequences: Option<ConsequenceReport>,
    pub provenance: Provenance,
}

/// The decision-rule reading of a verdict at a given layer.
pub fn recommendation(verdict: &RegionVerdict, layer: Layer) -> String {
    match (verdict.region, layer) {
        (Region::EvidenceSensitive, _) => "evidence invariance rejected".into(),
        (Region::Indeterminate, _) => {
            "inconclusive: increase K or rerun with a stronger reader".into()
        }
        (_, Layer::Screening) if verdict.near_zero => "calibration required".into(),
        (Region::WarningQuestionDominant, Layer::Calibrated) => {
            "persistent near-zero ΔEvi after calibration: warning region, question-side signal \
             or label skew explains the null"
                .into()
        }
        (_, Layer::Calibrated) => {
            "persistent near-zero ΔEvi after calibration: warning region, evidence invariance \
             not rejected"
                .into()
        }
        (_, Layer::Screening) => "calibration required".into(),
    }
}

const REQUIRED: &[&[&str]] = &[
    &["packet_version"],
    &["case"],
    &["layer"],
    &["statistics"],
    &["verdict"],
    &["skew"],
    &["provenance"],
    &["provenance", "tool_version"],
    &["provenance", "seed"],
    &["provenance", "k"],
    &["provenance", "shuffle_seeds"],
    &["provenance", "reader"],
    &["provenance", "thresholds"],
    &["provenance", "thresholds", "epsilon"],
    &["provenance", "thresholds", "epsilon_sd"],
    &["provenance", "thresholds", "delta_pos"],
    &["provenance", "thresholds", "mpds_direct"],
    &["provenance", "thresholds", "query_dominance"],
    &["provenance", "thresholds", "skew"],
];

impl AuditPacket {
    /// Parses and validates a packet, naming the first missing field.
    pub fn from_value(value: &Value) -> Result<Self> {
        for path in REQUIRED {
            let mut node = value;
            for key in *path {
                node = match node.get(key) {
                    Some(v) if !v.is_null() => v,
                    _ => bail!("packet is missing required field `{}`", path.join(".")),
                };
            }
        }
        let packet: AuditPacket =
            serde_json::from_value(value.clone()).context("packet does not match its schema")?;
        packet.validate()?;
        Ok(packet)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read packet {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("packet {} is not JSON", path.display()))?;
        Self::from_value(&value).with_context(|| format!("invalid packet {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.packet_version != PACKET_VERSION {
            bail!("unsupported packet_version {}", self.packet_version);
        }
        let p = &self.provenance;
        p.thresholds.validate()?;
        if p.k < 1 || p.k != self.statistics.k || p.k != self.statistics.runs.len() {
            bail!(
                "provenance k = {} disagrees with {} shuffle runs",
                p.k,
                self.statistics.runs.len()
            );
        }
        let run_seeds: Vec<u64> = self.statistics.runs.iter().map(|r| r.permutation.seed).collect();
        if p.shuffle_seeds != run_seeds {
            bail!("provenance shuffle_seeds do not match the recorded runs");
        }
        let external = p.reader.info.kind == ReaderKind::External;
        match (self.layer, external) {
            (Layer::Calibrated, false) => bail!("calibrated layer requires an external reader"),
            (Layer::Screening, true) => bail!("an external reader produces a calibrated packet"),
            _ => {}
        }
        if self.verdict.screening_only != (self.layer == Layer::Screening) {
            bail!("verdict screening flag disagrees with layer");
        }
        if self.recommendation != recommendation(&self.verdict, self.layer) {
            bail!("recommendation does not follow the decision rule");
        }
        let total: usize = self.skew.counts.values().sum();
        if total != self.dataset.n_eval {
            bail!("skew counts {} items, eval has {}", total, self.dataset.n_eval);
        }
        let s = &self.statistics;
        for (name, v) in [
            ("acc_meta", s.acc_meta),
            ("acc_full", s.acc_full),
            ("acc_shuf_mean", s.acc_shuf_mean),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bail!("statistics.{name} = {v} is not an accuracy");
            }
        }
        if (s.delta_evi - (s.acc_full - s.acc_shuf_mean)).abs() > 1e-12 {
            bail!("statistics.delta_evi is not acc_full - acc_shuf_mean");
        }
        Ok(())
    }

    /// Serializes after re-validating the packet from its own JSON.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Self::from_value(&value).map_err(|e| anyhow!("packet failed its self-check: {e:#}"))?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }
}
