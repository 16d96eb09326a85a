//! Campaign engine: seeding, batch generation, parallel target runs,
//! scoring, oracles and reports.

pub mod bench;
pub mod campaign;
pub mod config;
pub mod guidance;
pub mod inprocess;
pub mod oracle;
pub mod queue;
pub mod report;
pub mod runner;

pub use bench::{bench_pipeline, BenchResult};
pub use campaign::{identify_target_ifs, judge, valid_batch, Campaign, CampaignError, CampaignOptions, CampaignSummary};
pub use config::{load_targets, parse_output, OutputFormat, TargetConfig};
pub use guidance::Guidance;
pub use inprocess::{run_in_process, InProcessOptions, InProcessOutcome, InProcessTarget};
pub use oracle::{oracle_consistency, oracle_crash, oracle_integrity, oracle_stall, ExitState, Finding, OracleKind, TargetRun};
pub use queue::{seed_queue, Origin, Queue, QueueEntry};
pub use report::{replay, OracleReport, ReplayOutcome};
pub use runner::{run_all, run_target, SamplePlan};
