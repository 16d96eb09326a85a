#[path = "oracle/mod.rs"]
mod oracle;

use batchfuzz::asn1_tree::{encode_content, encode_der, find_by_label};
use batchfuzz::fuzz_orchestrator::valid_batch;
use batchfuzz::mutation_engine::mutate_bytes;
use batchfuzz::objects::generate;
use batchfuzz::repair_signer::repair;
use batchfuzz::repo_builder::{build_repository_with, publish_trees, BuildOptions, RepoConfig, RepoSnapshot};
use batchfuzz::ObjectKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn snapshot() -> RepoSnapshot {
    RepoSnapshot::create(RepoConfig { seed: 5, key_pool_size: 2, ..RepoConfig::default() }).unwrap()
}

/// Flips bytes below the eContent until its encoding changes, then
/// optionally corrupts the signature, and repairs.
fn mutated_roa(snap: &RepoSnapshot, seed: u64, corrupt_signature: bool) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = generate(ObjectKind::Roa, &mut rng).unwrap();
    let econtent = find_by_label(&tree, "roa.eContent").unwrap();
    let payload = find_by_label(&tree, "roa.payload").unwrap();
    let before = encode_content(tree.get(&econtent).unwrap()).unwrap();
    while encode_content(tree.get(&econtent).unwrap()).unwrap() == before {
        let _ = mutate_bytes(&mut tree, &payload, &mut rng);
    }
    if corrupt_signature {
        let sig = find_by_label(&tree, "roa.signature").unwrap();
        mutate_bytes(&mut tree, &sig, &mut rng).unwrap();
    }
    repair(&mut tree, ObjectKind::Roa, &snap.keys.pool.material(seed as usize), &snap.object_context("x.roa", 1));
    encode_der(&tree).unwrap()
}

#[test]
fn repaired_objects_verify_with_an_independent_verifier() {
    let snap = snapshot();
    let ca = oracle::spki_key(&snap.keys.pool.ca.spki_der()).unwrap();
    for seed in 0..20 {
        assert_eq!(oracle::verify_signed_object(&mutated_roa(&snap, seed, false), &ca), Ok(()), "seed {seed}");
    }
}

#[test]
fn protected_signatures_stay_broken() {
    let snap = snapshot();
    let ca = oracle::spki_key(&snap.keys.pool.ca.spki_der()).unwrap();
    for seed in 0..20 {
        let r = oracle::verify_signed_object(&mutated_roa(&snap, seed, true), &ca);
        assert_eq!(r, Err(oracle::SigFailure::EeSignature), "seed {seed}");
    }
}

#[test]
fn manifests_and_notification_match_published_files() {
    let snap = snapshot();
    let dir = tempfile::tempdir().unwrap();
    let mut trees = valid_batch(ObjectKind::Roa, 30, 1);
    let objects = publish_trees(&snap, &mut trees, 1).unwrap();
    let layout = build_repository_with(&snap, &objects, 1, dir.path(), BuildOptions::default()).unwrap();

    let fuzz = layout.root.join("rsync/fuzz-ca");
    let mft = std::fs::read_dir(&fuzz)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "mft"))
        .unwrap();
    let listed = oracle::manifest_files(&std::fs::read(&mft).unwrap()).unwrap();
    assert!(listed.len() >= 30);
    for (name, hash) in listed {
        assert_eq!(oracle::sha256(&std::fs::read(fuzz.join(&name)).unwrap()).to_vec(), hash, "{name}");
    }

    let note = std::fs::read_to_string(layout.notification_path()).unwrap();
    let uri = oracle::xml_attr(&note, "snapshot", "uri").unwrap();
    let hash = oracle::xml_attr(&note, "snapshot", "hash").unwrap();
    let rel = uri.strip_prefix(&snap.config.rrdp_base).unwrap();
    let xml = std::fs::read(layout.root.join("rrdp").join(rel)).unwrap();
    assert!(hex::encode(oracle::sha256(&xml)).eq_ignore_ascii_case(hash));
}
