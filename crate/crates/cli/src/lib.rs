//! Command-line front end: the `audit`, `gen` and `report` subcommands and
//! the mock readers used to exercise the external-reader protocol.

pub mod commands;
pub mod config;
pub mod mock;
pub mod packet;

pub use commands::{cmd_audit, cmd_gen, cmd_report, run_audit_packet};
pub use config::{AuditConfig, ReaderChoice};
pub use packet::{AuditPacket, Layer};
