//! Finding reports on disk and their byte-exact replay.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::oracle::{Finding, OracleKind};
use crate::mutation_engine::Batch;
use crate::repo_builder::{build_repository, publish_trees, RepoConfig, RepoLayout, RepoSnapshot};
use crate::ObjectKind;

pub const REPORT_JSON: &str = "report.json";
pub const BATCH_JSON: &str = "batch.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub iteration: u64,
    pub kind: OracleKind,
    pub targets: Vec<String>,
    pub summary: String,
    pub details: Vec<String>,
    pub campaign_seed: u64,
    pub batch_seed: u64,
    pub object_kind: ObjectKind,
    pub batch_size: usize,
    pub serial: u64,
    /// Hash over every repository file, see `layout_hash`.
    pub repo_hash: String,
    pub runtimes: BTreeMap<String, f64>,
    pub snapshot: RepoConfig,
    /// Where the campaign cached its signing snapshot; replay reuses it
    /// when the configuration still matches.
    pub snapshot_cache: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("repository: {0}")]
    Repo(#[from] crate::repo_builder::RepoError),
    #[error("mutation replay: {0}")]
    Mutation(#[from] crate::mutation_engine::MutationError),
}

impl OracleReport {
    pub fn from_finding(f: &Finding, ctx: ReportContext<'_>) -> Self {
        OracleReport {
            iteration: ctx.iteration,
            kind: f.kind,
            targets: f.targets.clone(),
            summary: f.summary.clone(),
            details: f.details.clone(),
            campaign_seed: ctx.campaign_seed,
            batch_seed: ctx.batch.seed,
            object_kind: ctx.object_kind,
            batch_size: ctx.batch.entries.len(),
            serial: ctx.layout.serial,
            repo_hash: ctx.layout.hash.clone(),
            runtimes: ctx.runtimes.clone(),
            snapshot: ctx.snapshot.config.clone(),
            snapshot_cache: ctx.snapshot_cache.map(Path::to_path_buf),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} report, iteration {}", self.kind, self.iteration);
        let _ = writeln!(s, "{}", self.summary);
        let _ = writeln!(s, "targets: {}", self.targets.join(", "));
        let _ = writeln!(s, "campaign seed {} batch seed {} serial {}", self.campaign_seed, self.batch_seed, self.serial);
        let _ = writeln!(s, "batch: {} x {}", self.batch_size, self.object_kind.name());
        let _ = writeln!(s, "repository hash {}", self.repo_hash);
        for (t, r) in &self.runtimes {
            let _ = writeln!(s, "runtime {t}: {r:.3} s");
        }
        if !self.details.is_empty() {
            let _ = writeln!(s, "\ndetails:");
            for d in &self.details {
                let _ = writeln!(s, "  {d}");
            }
        }
        let _ = writeln!(s, "\nreproduce: batchfuzz replay <this directory> --out <dir>");
        s
    }

    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(dir.join(REPORT_JSON))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Format(format!("{REPORT_JSON}: {e}")))
    }
}

/// Campaign state needed to describe a finding.
#[derive(Clone, Copy)]
pub struct ReportContext<'a> {
    pub iteration: u64,
    pub campaign_seed: u64,
    pub object_kind: ObjectKind,
    pub batch: &'a Batch,
    pub layout: &'a RepoLayout,
    pub runtimes: &'a BTreeMap<String, f64>,
    pub snapshot: &'a RepoSnapshot,
    pub snapshot_cache: Option<&'a Path>,
}

/// Writes a report directory: report.txt, report.json, seed, batch.json,
/// mutations.log, per-target logs and a copy of the repository.
pub fn write_report(
    dir: &Path,
    report: &OracleReport,
    batch: &Batch,
    repo: &Path,
    target_logs: &BTreeMap<String, String>,
) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir.join("logs"))?;
    std::fs::write(dir.join("report.txt"), report.render())?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| ReportError::Format(e.to_string()))?;
    std::fs::write(dir.join(REPORT_JSON), json)?;
    std::fs::write(dir.join("seed"), format!("{}\n{}\n", report.campaign_seed, report.batch_seed))?;
    let batch_json = serde_json::to_vec(batch).map_err(|e| ReportError::Format(e.to_string()))?;
    std::fs::write(dir.join(BATCH_JSON), batch_json)?;
    let mut log = String::new();
    for (i, e) in batch.entries.iter().enumerate() {
        let name = crate::repo_builder::object_name(i, e.kind.extension());
        let parent = e.parent_id.map_or("generated".to_string(), |p| format!("parent {p}"));
        let _ = writeln!(log, "# {name} {parent}");
        for r in &e.log {
            let _ = writeln!(log, "{r}");
        }
    }
    std::fs::write(dir.join("mutations.log"), log)?;
    for (t, l) in target_logs {
        std::fs::write(dir.join("logs").join(format!("{t}.log")), l)?;
    }
    copy_dir(repo, &dir.join("repo"))?;
    Ok(())
}

pub fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        let dest = to.join(e.file_name());
        if e.file_type()?.is_dir() {
            copy_dir(&e.path(), &dest)?;
        } else {
            std::fs::copy(e.path(), dest)?;
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub layout: RepoLayout,
    pub expected: String,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.layout.hash == self.expected
    }
}

/// Loads the snapshot from the report's cache, or regenerates it from the
/// recorded configuration.
pub fn report_snapshot(report: &OracleReport) -> Result<RepoSnapshot, ReportError> {
    if let Some(p) = &report.snapshot_cache {
        match RepoSnapshot::load(p) {
            Ok(s) if s.config == report.snapshot => return Ok(s),
            _ => log::info!("snapshot cache {} unusable; regenerating keys", p.display()),
        }
    }
    Ok(RepoSnapshot::create(report.snapshot.clone())?)
}

/// Rebuilds the repository of a report from its batch and mutation logs.
pub fn replay(report_dir: &Path, out: &Path) -> Result<ReplayOutcome, ReportError> {
    let report = OracleReport::load(report_dir)?;
    let batch: Batch = serde_json::from_slice(&std::fs::read(report_dir.join(BATCH_JSON))?)
        .map_err(|e| ReportError::Format(format!("{BATCH_JSON}: {e}")))?;
    let snapshot = report_snapshot(&report)?;
    let mut trees = batch.entries.iter().map(|e| Ok((e.kind, e.replay()?))).collect::<Result<Vec<_>, ReportError>>()?;
    let objects = publish_trees(&snapshot, &mut trees, report.serial)?;
    let layout = build_repository(&snapshot, &objects, report.serial, out)?;
    Ok(ReplayOutcome { layout, expected: report.repo_hash })
}
