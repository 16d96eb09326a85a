use std::path::Path;

use batchfuzz::coverage_attribution::{KnownSet, SampleMode};
use batchfuzz::fuzz_orchestrator::{
    identify_target_ifs, replay, run_target, valid_batch, Campaign, CampaignOptions, OracleKind, SamplePlan, TargetConfig,
};
use batchfuzz::objects::{roa_payload, roa_with_payload, RoaFamily};
use batchfuzz::repo_builder::{build_repository_with, publish_trees, BuildOptions, RepoConfig, RepoSnapshot};
use batchfuzz::sim_target::{BranchRule, Effect, GroundTruth, LoopSpec, PlantedBug, Predicate, SimConfig, DEFAULT_LOOP_HEADS};
use batchfuzz::ObjectKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn snapshot() -> RepoSnapshot {
    RepoSnapshot::create(RepoConfig { seed: 9, key_pool_size: 2, ..RepoConfig::default() }).unwrap()
}

fn sim_target(dir: &Path, sim: &SimConfig, extra: &[&str]) -> TargetConfig {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("sim.json");
    std::fs::write(&path, serde_json::to_vec(sim).unwrap()).unwrap();
    let mut args = vec!["--repo", "{repo}", "--tal", "{tal}", "--output", "{output}", "--config", path.to_str().unwrap()];
    args.extend(extra);
    serde_json::from_value(serde_json::json!({
        "name": "sim",
        "binary": env!("CARGO_BIN_EXE_sim-target"),
        "args": args,
        "output_format": "csv",
        "coverage": true,
        "crash_keywords": ["panic"],
    }))
    .unwrap()
}

#[test]
fn identification_finds_the_planted_loop_heads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_target(dir.path(), &SimConfig::default(), &[]);
    let set = identify_target_ifs(&cfg, &snapshot(), ObjectKind::Roa, &[5, 20, 40], 1, &dir.path().join("id")).unwrap();
    assert_eq!(set.indices, DEFAULT_LOOP_HEADS);
}

#[test]
fn new_branch_is_attributed_to_its_object() {
    const ASN: u32 = 64_999;
    let snap = snapshot();
    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig {
        loops: vec![LoopSpec { head: DEFAULT_LOOP_HEADS[0], work_us: 300 }, LoopSpec { head: DEFAULT_LOOP_HEADS[1], work_us: 0 }],
        branches: vec![BranchRule { phase: 0, when: Predicate::Asn { asn: ASN }, counters: vec![5000] }],
        ..SimConfig::default()
    };
    let truth = dir.path().join("truth.json");
    let cfg = sim_target(dir.path(), &sim, &["--ground-truth", truth.to_str().unwrap()]);

    let mut trees = valid_batch(ObjectKind::Roa, 40, 3);
    let fam = RoaFamily { afi: 1, entries: vec![("10.9.0.0/16".parse().unwrap(), None)] };
    let novel = roa_with_payload(&mut ChaCha8Rng::seed_from_u64(4), roa_payload(ASN, &[fam]));
    trees.insert(17, (ObjectKind::Roa, novel));
    let objects = publish_trees(&snap, &mut trees, 1).unwrap();
    let layout = build_repository_with(&snap, &objects, 1, &dir.path().join("repo"), BuildOptions { include_integrity: false }).unwrap();

    let plan = SamplePlan { mode: SampleMode::Attribute { ifs: DEFAULT_LOOP_HEADS.to_vec(), batch_size: 41 }, known: KnownSet::new() };
    let r = run_target(&cfg, &layout.root, &layout.tal_path, &dir.path().join("run"), Some(plan)).unwrap();
    assert!(r.run.exit.is_clean(), "{}", r.run.log);
    let rec = r.sample.unwrap().records.into_iter().find(|r| r.counter == 5000).expect("branch observed");
    assert_eq!(rec.object_index, 18);
    assert_eq!(GroundTruth::load(&truth).unwrap().first_object.get(&5000).copied(), Some(18));
}

#[test]
fn crash_is_reported_and_replays() {
    let snap = snapshot();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("campaign");
    std::fs::create_dir_all(&out).unwrap();
    snap.store(&out.join("snapshot.json")).unwrap();
    let sim = SimConfig {
        bugs: vec![PlantedBug { phase: 0, when: Predicate::Negative { label: "roa.version".into() }, effect: Effect::Crash }],
        ..SimConfig::default()
    };
    let mut cfg = sim_target(&dir.path().join("cfg"), &sim, &[]);
    cfg.identification_functions = Some(DEFAULT_LOOP_HEADS.to_vec());
    let mut opts = CampaignOptions::new(ObjectKind::Roa, &out);
    opts.batch_size = 100;
    opts.seed = 3;
    opts.baseline_runs = 2;
    opts.workers = 1;
    opts.snapshot = snap.config.clone();
    let mut campaign = Campaign::new(vec![cfg], opts).unwrap();
    campaign.prepare().unwrap();
    for _ in 0..20 {
        let s = campaign.run_iteration().unwrap();
        if let Some((report_dir, report)) = s.reports.first() {
            assert_eq!(report.kind, OracleKind::Crash);
            assert!(replay(report_dir, &dir.path().join("replay")).unwrap().matches());
            return;
        }
    }
    panic!("no crash found in 20 iterations");
}
