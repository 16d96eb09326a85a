use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use batchfuzz::asn1_tree::{encode_der, parse_labeled};
use batchfuzz::coverage_attribution::DEFAULT_IF_SIZES;
use batchfuzz::fuzz_orchestrator::{
    bench_pipeline, identify_target_ifs, load_targets, replay, valid_batch, Campaign, CampaignOptions, TargetConfig,
};
use batchfuzz::mutation_engine::{mutate_tree, MutationConfig};
use batchfuzz::repair_signer::repair;
use batchfuzz::repo_builder::{
    build_repository_with, object_name, publish_trees, BuildOptions, RepoConfig, RepoSnapshot,
};
use batchfuzz::util::derive_seed;
use batchfuzz::ObjectKind;

#[derive(Parser)]
#[command(name = "batchfuzz", version, about = "Coverage-guided batch fuzzer for RPKI validators")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Find a target's loop-head counters.
    IdentifyIfs(IdentifyArgs),
    /// Build one repository of generated objects.
    BuildRepo(BuildArgs),
    /// Mutate and repair a single object.
    Mutate(MutateArgs),
    /// Regenerate the repository of a finding report.
    Replay(ReplayArgs),
    /// Measure mutate, repair and encode throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SnapshotArgs {
    /// Cache file for the signing snapshot.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    snapshot_seed: u64,
    /// One-off EE keys in the signing pool.
    #[arg(long, default_value_t = 64)]
    key_pool: usize,
}

impl SnapshotArgs {
    fn config(&self) -> RepoConfig {
        RepoConfig { seed: self.snapshot_seed, key_pool_size: self.key_pool.max(1), ..RepoConfig::default() }
    }

    fn load(&self) -> Result<RepoSnapshot> {
        Ok(match &self.snapshot {
            Some(p) => RepoSnapshot::load_or_create(p, self.config())?,
            None => RepoSnapshot::create(self.config())?,
        })
    }
}

#[derive(Args)]
struct FuzzArgs {
    /// Target config files, one JSON file per validator.
    #[arg(long, num_args = 1.., required = true)]
    targets: Vec<PathBuf>,
    #[arg(long, default_value = "roa")]
    kind: ObjectKind,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    /// Iterations after the seed evaluation; 0 only validates the configs.
    #[arg(long, default_value_t = 10)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "campaign")]
    out: PathBuf,
    /// Ignore coverage when choosing parents.
    #[arg(long)]
    no_guidance: bool,
    #[arg(long, default_value_t = 5)]
    baseline_runs: usize,
    #[arg(long)]
    keep_iterations: bool,
    #[arg(long, default_value_t = 0)]
    snapshot_seed: u64,
    #[arg(long, default_value_t = 64)]
    key_pool: usize,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "roa")]
    kind: ObjectKind,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_IF_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Working directory for the identification runs.
    #[arg(long, default_value = "identify")]
    out: PathBuf,
    #[command(flatten)]
    snapshot: SnapshotArgs,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, default_value = "roa")]
    kind: ObjectKind,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    serial: u64,
    #[arg(long)]
    out: PathBuf,
    /// Leave out the integrity publication point.
    #[arg(long)]
    no_integrity: bool,
    #[command(flatten)]
    snapshot: SnapshotArgs,
}

#[derive(Args)]
struct MutateArgs {
    /// DER object to mutate.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    kind: Option<ObjectKind>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    snapshot: SnapshotArgs,
}

#[derive(Args)]
struct ReplayArgs {
    /// Report directory.
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "roa")]
    kind: ObjectKind,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    snapshot: SnapshotArgs,
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn fuzz(a: FuzzArgs) -> Result<()> {
    let targets: Vec<TargetConfig> = load_targets(&a.targets)?;
    if a.iterations == 0 {
        println!("{} target config(s) valid: {}", targets.len(), targets.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", "));
        return Ok(());
    }
    let mut opts = CampaignOptions::new(a.kind, a.out);
    opts.batch_size = a.batch_size;
    opts.iterations = a.iterations;
    opts.seed = a.seed;
    opts.corpus = a.corpus;
    opts.guided = !a.no_guidance;
    opts.baseline_runs = a.baseline_runs;
    opts.keep_iterations = a.keep_iterations;
    opts.snapshot = RepoConfig { seed: a.snapshot_seed, key_pool_size: a.key_pool.max(1), ..RepoConfig::default() };
    let mut campaign = Campaign::new(targets, opts)?;
    let summary = campaign.run()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn identify(a: IdentifyArgs) -> Result<()> {
    let cfg = TargetConfig::load(&a.target)?;
    if !cfg.coverage {
        bail!("target {} has coverage disabled", cfg.name);
    }
    let snapshot = a.snapshot.load()?;
    let set = identify_target_ifs(&cfg, &snapshot, a.kind, &a.sizes, a.seed, &a.out)?;
    println!("{}", serde_json::to_string(&set)?);
    Ok(())
}

fn build_repo(a: BuildArgs) -> Result<()> {
    let snapshot = a.snapshot.load()?;
    let mut trees = valid_batch(a.kind, a.count, a.seed);
    let objects = publish_trees(&snapshot, &mut trees, a.serial)?;
    let opts = BuildOptions { include_integrity: !a.no_integrity };
    let layout = build_repository_with(&snapshot, &objects, a.serial, &a.out, opts)?;
    println!("repository {} ({} objects)", layout.root.display(), objects.len());
    println!("tal {}", layout.tal_path.display());
    println!("hash {}", layout.hash);
    Ok(())
}

fn mutate(a: MutateArgs) -> Result<()> {
    let bytes = std::fs::read(&a.input).with_context(|| a.input.display().to_string())?;
    let kind = match a.kind {
        Some(k) => k,
        None => {
            let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("");
            ObjectKind::from_extension(ext).with_context(|| format!("cannot tell the kind of {}; pass --kind", a.input.display()))?
        }
    };
    let snapshot = a.snapshot.load()?;
    let parent = parse_labeled(&bytes, kind).root;
    std::fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, i as u64));
        let mut tree = parent.clone();
        let log = mutate_tree(&mut tree, &[&parent], &MutationConfig::default(), &mut rng);
        let name = object_name(i, kind.extension());
        let diags = repair(&mut tree, kind, &snapshot.keys.pool.material(i), &snapshot.object_context(&name, 1));
        let der = encode_der(&tree)?;
        std::fs::write(a.out.join(&name), &der)?;
        let mut text: String = log.iter().map(|r| format!("{r}\n")).collect();
        for d in diags {
            text.push_str(&format!("# {d:?}\n"));
        }
        std::fs::write(a.out.join(format!("{name}.log")), text)?;
        println!("{name}: {} mutations, {} bytes", log.len(), der.len());
    }
    Ok(())
}

fn replay_cmd(a: ReplayArgs) -> Result<bool> {
    let r = replay(&a.report, &a.out)?;
    println!("expected {}", r.expected);
    println!("rebuilt  {}", r.layout.hash);
    println!("{}", if r.matches() { "match" } else { "MISMATCH" });
    Ok(r.matches())
}

fn bench(a: BenchArgs) -> Result<()> {
    let snapshot = a.snapshot.load()?;
    let r = bench_pipeline(&snapshot, a.kind, a.count, 16, a.seed, a.workers.unwrap_or_else(workers))?;
    println!("{} objects in {:.3} s: {:.0} objects/s ({} bytes)", r.objects, r.seconds, r.objects_per_sec, r.bytes);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Fuzz(a) => fuzz(a).map(|_| true),
        Cmd::IdentifyIfs(a) => identify(a).map(|_| true),
        Cmd::BuildRepo(a) => build_repo(a).map(|_| true),
        Cmd::Mutate(a) => mutate(a).map(|_| true),
        Cmd::Replay(a) => replay_cmd(a),
        Cmd::Bench(a) => bench(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
