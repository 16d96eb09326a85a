//! The campaign loop against external target processes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TargetConfig;
use super::guidance::Guidance;
use super::oracle::{self, Finding, OracleKind, TargetRun};
use super::queue::seed_queue;
use super::report::{write_report, OracleReport, ReportContext, ReportError};
use super::runner::{run_all, run_target, LaunchError, RunResult, SamplePlan};
use crate::asn1_tree::TlvNode;
use crate::coverage_attribution::{
    identify_ifs, score_objects, IdentifyError, IfSet, KnownSet, SampleMode, DEFAULT_IF_SIZES, MAX_SCORE,
};
use crate::mutation_engine::{mutate_batch, MutationConfig, MutationError};
use crate::objects::generate;
use crate::repo_builder::{
    build_repository, build_repository_with, publish_trees_parallel, BuildOptions, RepoConfig, RepoError, RepoLayout,
    RepoSnapshot,
};
use crate::util::derive_seed;
use crate::ObjectKind;

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Launch(#[from] LaunchError),
    #[error("repository: {0}")]
    Repo(#[from] RepoError),
    #[error("mutation: {0}")]
    Mutation(#[from] MutationError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("target {target}: loop-head identification failed: {error}")]
    Identify { target: String, error: IdentifyError },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Setup(String),
}

#[derive(Clone, Debug)]
pub struct CampaignOptions {
    pub kind: ObjectKind,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    /// Feed scores into parent selection.
    pub guided: bool,
    pub mutation: MutationConfig,
    pub snapshot: RepoConfig,
    /// Valid batches timed before fuzzing to form the stall baseline.
    pub baseline_runs: usize,
    /// Keep every iteration's working directory, not only those with findings.
    pub keep_iterations: bool,
    /// Threads for repair and encoding.
    pub workers: usize,
}

impl CampaignOptions {
    pub fn new(kind: ObjectKind, out: impl Into<PathBuf>) -> Self {
        CampaignOptions {
            kind,
            batch_size: 1000,
            iterations: 10,
            seed: 0,
            corpus: None,
            out: out.into(),
            guided: true,
            mutation: MutationConfig::default(),
            snapshot: RepoConfig::default(),
            baseline_runs: 5,
            keep_iterations: false,
            workers: std::thread::available_parallelism().map_or(1, usize::from),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetState {
    pub config: TargetConfig,
    pub ifs: Option<Vec<usize>>,
    pub known: KnownSet,
    pub baseline: Option<f64>,
}

impl TargetState {
    fn plan(&self, batch_size: usize) -> Option<SamplePlan> {
        let ifs = self.ifs.clone().filter(|_| self.config.coverage)?;
        Some(SamplePlan { mode: SampleMode::Attribute { ifs, batch_size }, known: self.known.clone() })
    }
}

#[derive(Clone, Debug, Default)]
pub struct IterationSummary {
    pub iteration: u64,
    pub reports: Vec<(PathBuf, OracleReport)>,
    /// Per-object scores, absent when no target is coverage-guided.
    pub scores: Option<Vec<u8>>,
    pub runtimes: BTreeMap<String, f64>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub iterations: u64,
    pub reports: BTreeMap<String, usize>,
    pub report_dirs: Vec<PathBuf>,
    pub queue_len: usize,
    pub discarded: u64,
    pub coverage: BTreeMap<String, usize>,
    pub identification_functions: BTreeMap<String, Vec<usize>>,
    pub baselines: BTreeMap<String, f64>,
}

pub struct Campaign {
    pub opts: CampaignOptions,
    pub targets: Vec<TargetState>,
    pub guidance: Guidance,
    pub snapshot: RepoSnapshot,
    snapshot_cache: PathBuf,
    next_iteration: u64,
    summary: CampaignSummary,
}

impl Campaign {
    /// Loads or creates the signing snapshot and seeds the queue.
    pub fn new(targets: Vec<TargetConfig>, opts: CampaignOptions) -> Result<Self, CampaignError> {
        if targets.is_empty() {
            return Err(CampaignError::Setup("no targets configured".into()));
        }
        if opts.batch_size == 0 {
            return Err(CampaignError::Setup("batch size must be positive".into()));
        }
        std::fs::create_dir_all(&opts.out)?;
        let snapshot_cache = opts.out.join("snapshot.json");
        let snapshot = RepoSnapshot::load_or_create(&snapshot_cache, opts.snapshot.clone())?;
        let queue = seed_queue(opts.corpus.as_deref(), opts.kind, opts.batch_size, opts.seed);
        let guidance = Guidance::new(queue, opts.kind, opts.batch_size, opts.seed, opts.mutation.clone(), opts.guided);
        let targets = targets
            .into_iter()
            .map(|c| TargetState {
                ifs: c.identification_functions.clone(),
                baseline: c.baseline_runtime,
                known: KnownSet::new(),
                config: c,
            })
            .collect();
        Ok(Campaign { opts, targets, guidance, snapshot, snapshot_cache, next_iteration: 0, summary: CampaignSummary::default() })
    }

    fn configs(&self) -> Vec<TargetConfig> {
        self.targets.iter().map(|t| t.config.clone()).collect()
    }

    fn work_dir(&self, name: &str) -> PathBuf {
        self.opts.out.join("work").join(name)
    }

    /// Identifies missing loop heads and measures missing baselines.
    pub fn prepare(&mut self) -> Result<(), CampaignError> {
        for i in 0..self.targets.len() {
            let t = &self.targets[i];
            if t.config.coverage && t.ifs.is_none() {
                let dir = self.work_dir(&format!("identify-{}", t.config.name));
                let set = identify_target_ifs(&t.config, &self.snapshot, self.opts.kind, &DEFAULT_IF_SIZES, self.opts.seed, &dir)
                    .map_err(|error| CampaignError::Identify { target: t.config.name.clone(), error })?;
                log::info!("{}: loop heads {:?}", t.config.name, set.indices);
                self.targets[i].ifs = Some(set.indices);
                let _ = std::fs::remove_dir_all(&dir);
            }
        }
        if self.targets.iter().any(|t| t.baseline.is_none()) {
            let mut runtimes: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for k in 0..self.opts.baseline_runs {
                let dir = self.work_dir(&format!("baseline-{k}"));
                let mut trees = valid_batch(self.opts.kind, self.opts.batch_size, derive_seed(self.opts.seed, 0xba5e_0000 + k as u64));
                let objects = publish_trees_parallel(&self.snapshot, &mut trees, 1, self.opts.workers)?;
                let layout = build_repository(&self.snapshot, &objects, 1, &dir.join("repo"))?;
                let plans = self.targets.iter().map(|t| t.plan(self.opts.batch_size)).collect();
                for r in run_all(&self.configs(), &layout.root, &layout.tal_path, &dir, plans)? {
                    runtimes.entry(r.run.target.clone()).or_default().push(r.run.runtime_secs);
                }
                let _ = std::fs::remove_dir_all(&dir);
            }
            for t in self.targets.iter_mut().filter(|t| t.baseline.is_none()) {
                t.baseline = oracle::baseline(runtimes.get(&t.config.name).map_or(&[][..], Vec::as_slice));
                log::info!("{}: baseline {:?} s", t.config.name, t.baseline);
            }
        }
        for t in &self.targets {
            if let Some(ifs) = &t.ifs {
                self.summary.identification_functions.insert(t.config.name.clone(), ifs.clone());
            }
            if let Some(b) = t.baseline {
                self.summary.baselines.insert(t.config.name.clone(), b);
            }
        }
        Ok(())
    }

    /// One mutate, build, run, score and judge cycle.
    pub fn run_iteration(&mut self) -> Result<IterationSummary, CampaignError> {
        let it = self.next_iteration;
        self.next_iteration += 1;
        let batch = self.guidance.next_batch(it)?;
        let serial = it + 1;
        let dir = self.work_dir(&format!("iter-{it:06}"));
        let mut trees: Vec<(ObjectKind, TlvNode)> = batch.entries.iter().map(|e| (e.kind, e.tree.clone())).collect();
        let objects = publish_trees_parallel(&self.snapshot, &mut trees, serial, self.opts.workers)?;
        let layout = build_repository(&self.snapshot, &objects, serial, &dir.join("repo"))?;

        let cfgs = self.configs();
        let plans = self.targets.iter().map(|t| t.plan(batch.entries.len())).collect();
        let results = run_all(&cfgs, &layout.root, &layout.tal_path, &dir, plans)?;

        let mut summary = IterationSummary { iteration: it, ..Default::default() };
        let mut combined: Option<Vec<u8>> = None;
        for (t, r) in self.targets.iter_mut().zip(&results) {
            summary.runtimes.insert(t.config.name.clone(), r.run.runtime_secs);
            let Some(rep) = &r.sample else { continue };
            summary.diagnostics.extend(rep.diagnostics.iter().map(|d| format!("{}: {d}", t.config.name)));
            t.known = rep.known.clone();
            let s = score_objects(&rep.records, batch.entries.len());
            let acc = combined.get_or_insert_with(|| vec![0; s.len()]);
            for (a, b) in acc.iter_mut().zip(s) {
                *a = a.saturating_add(b).min(MAX_SCORE);
            }
        }
        self.guidance.feedback(&batch, combined.as_deref());
        summary.scores = combined;

        let findings = judge(&self.targets, &results, &layout);
        for (n, f) in findings.iter().enumerate() {
            let ctx = ReportContext {
                iteration: it,
                campaign_seed: self.opts.seed,
                object_kind: self.opts.kind,
                batch: &batch,
                layout: &layout,
                runtimes: &summary.runtimes,
                snapshot: &self.snapshot,
                snapshot_cache: Some(&self.snapshot_cache),
            };
            let report = OracleReport::from_finding(f, ctx);
            let rdir = self.opts.out.join("reports").join(format!("iter-{it:06}-{n}-{}", f.kind));
            let logs = results
                .iter()
                .filter(|r| f.targets.contains(&r.run.target))
                .map(|r| (r.run.target.clone(), r.run.log.clone()))
                .collect();
            write_report(&rdir, &report, &batch, &layout.root, &logs)?;
            log::warn!("iteration {it}: {}", report.summary);
            *self.summary.reports.entry(f.kind.to_string()).or_default() += 1;
            self.summary.report_dirs.push(rdir.clone());
            summary.reports.push((rdir, report));
        }
        if !self.opts.keep_iterations && findings.is_empty() {
            let _ = std::fs::remove_dir_all(&dir);
        }
        Ok(summary)
    }

    /// Prepares and runs the configured number of iterations, then writes
    /// summary.json to the output directory.
    pub fn run(&mut self) -> Result<CampaignSummary, CampaignError> {
        self.prepare()?;
        for _ in 0..self.opts.iterations {
            let s = self.run_iteration()?;
            log::info!(
                "iteration {}: {} reports, queue {}, runtimes {:?}",
                s.iteration,
                s.reports.len(),
                self.guidance.queue.len(),
                s.runtimes
            );
        }
        let summary = self.summary();
        std::fs::write(self.opts.out.join("summary.json"), serde_json::to_vec_pretty(&summary).expect("serializable"))?;
        Ok(summary)
    }

    pub fn summary(&self) -> CampaignSummary {
        CampaignSummary {
            iterations: self.next_iteration,
            queue_len: self.guidance.queue.len(),
            discarded: self.guidance.queue.discarded(),
            coverage: self.targets.iter().map(|t| (t.config.name.clone(), t.known.len())).collect(),
            ..self.summary.clone()
        }
    }
}

/// Applies every oracle to one iteration's runs.
pub fn judge(targets: &[TargetState], results: &[RunResult], layout: &RepoLayout) -> Vec<Finding> {
    let runs: Vec<TargetRun> = results.iter().map(|r| r.run.clone()).collect();
    let mut out = Vec::new();
    for (t, run) in targets.iter().zip(&runs) {
        out.extend(oracle::oracle_crash(run, &t.config));
        if let Some(b) = t.baseline {
            out.extend(oracle::oracle_stall(run, b));
        }
        out.extend(oracle::oracle_integrity(run, &t.config, &layout.test_roa));
    }
    let cfgs: Vec<TargetConfig> = targets.iter().map(|t| t.config.clone()).collect();
    out.extend(oracle::oracle_consistency(&oracle::parsed_outputs(&runs, &cfgs)));
    out.sort_by_key(|f| f.kind);
    out
}

/// `n` freshly generated, unmutated objects.
pub fn valid_batch(kind: ObjectKind, n: usize, seed: u64) -> Vec<(ObjectKind, TlvNode)> {
    (0..n)
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            generate(kind, &mut rng).ok().map(|t| (kind, t))
        })
        .collect()
}

/// Finds a target's loop heads from full-coverage runs over repositories
/// of each size in `sizes`. The integrity publication point is left out so
/// every processed object belongs to the batch.
pub fn identify_target_ifs(
    cfg: &TargetConfig,
    snapshot: &RepoSnapshot,
    kind: ObjectKind,
    sizes: &[usize],
    seed: u64,
    workdir: &Path,
) -> Result<IfSet, IdentifyError> {
    identify_ifs(sizes, |n| {
        let batch = mutate_batch(&[], n, kind, &MutationConfig::default(), derive_seed(seed, 0x1de0_0000 + n as u64))
            .map_err(|e| e.to_string())?;
        let mut trees: Vec<_> = batch.entries.into_iter().map(|e| (e.kind, e.tree)).collect();
        let objects = crate::repo_builder::publish_trees(snapshot, &mut trees, 1).map_err(|e| e.to_string())?;
        let dir = workdir.join(format!("n{n}"));
        let layout = build_repository_with(snapshot, &objects, 1, &dir.join("repo"), BuildOptions { include_integrity: false })
            .map_err(|e| e.to_string())?;
        let plan = SamplePlan { mode: SampleMode::Full, known: KnownSet::new() };
        let r = run_target(cfg, &layout.root, &layout.tal_path, &dir.join(&cfg.name), Some(plan)).map_err(|e| e.to_string())?;
        if !r.run.exit.is_clean() {
            let tail: Vec<&str> = r.run.log.lines().rev().take(5).collect();
            return Err(format!("target run failed ({}): {}", r.run.exit, tail.into_iter().rev().collect::<Vec<_>>().join(" | ")));
        }
        let rep = r.sample.ok_or("target has coverage disabled")?;
        for d in &rep.diagnostics {
            log::warn!("{}: {d}", cfg.name);
        }
        Ok(rep.run_counts())
    })
}

/// Kinds of findings of an iteration, for quick checks.
pub fn finding_kinds(s: &IterationSummary) -> Vec<OracleKind> {
    s.reports.iter().map(|(_, r)| r.kind).collect()
}

