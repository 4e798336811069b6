//! Evidence-intervention audits for weak-label, evidence-bearing benchmarks.
//!
//! The audit asks whether a benchmark's outputs depend on the evidence it
//! provides. It reports two statistics side by side:
//!
//! * **MPDS**, the accuracy of a metadata-majority predictor divided by the
//!   accuracy of the audited reader, and
//! * **ΔEvi**, the accuracy the audited reader loses when evidence is
//!   deranged across eval items with queries, labels and metadata fixed,
//!
//! and places the result on a diagnostic map (direct coupling, latent
//! coupling, evidence-sensitive, question-dominant warning).

pub mod audit;
pub mod bridge;
pub mod consequence;
pub mod data;
pub mod readers;
pub mod synthetic;

pub use audit::{
    classify_region, run_audit, AuditError, AuditOptions, AuditStatistics, Diagnostics, Region,
    RegionVerdict, Thresholds,
};
pub use data::{ingest_dataset, label_distribution, AuditItem, Dataset, MetadataSchema};
pub use readers::{InputView, LrHyper, Prediction, Reader, ReaderSpec};
pub use synthetic::{generate, Coupling, GeneratorConfig};
