//! Trace-driven simulator of a hybrid DRAM/NVM memory management unit.
//!
//! The HMMU sits between the host and two memory tiers, keeps a
//! host-to-internal page table, and migrates data between tiers at page or
//! block granularity. [`Simulator`] drives one configuration over a trace;
//! [`oracle`] is an independent, deliberately naive re-implementation used
//! to cross-check it.

pub mod cache;
pub mod config;
pub mod error;
pub mod meter;
pub mod migration;
pub mod oracle;
pub mod page_table;
pub mod policy;
pub mod recency;
pub mod sim;
pub mod trace;
pub mod types;

pub use config::{format_size, parse_size, AdaptiveParams, PolicyKind, RecencyMode, SimConfig};
pub use error::{Error, Result};
pub use meter::{FinalReport, MetadataCostReport, MetadataGeometry};
pub use sim::{MigrationAction, ServiceOutcome, Simulator};
pub use trace::{TraceRecord, WorkloadKind, WorkloadSpec};
pub use types::{AccessKind, MemoryRequest, Tier};
