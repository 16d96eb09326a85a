//! Publishes a batch of objects as a complete repository: TA, fuzzing CA
//! with fresh manifest and CRL, integrity CA with its test ROA, rsync tree,
//! RRDP documents and a TAL.
//!
//! ```text
//! <root>/rsync/ta/{ta.cer,ta.crl,ta.mft,fuzz-ca.cer,integrity-ca.cer}
//! <root>/rsync/fuzz-ca/{fuzz-ca.crl,fuzz-ca.mft,<batch objects>}
//! <root>/rsync/integrity-ca/{integrity-ca.crl,integrity-ca.mft,test.roa}
//! <root>/rrdp/notification.xml
//! <root>/rrdp/<session>/<serial>/snapshot.xml
//! <root>/ta.tal
//! ```

pub mod rrdp;
pub mod serve;
pub mod snapshot;
pub mod tal;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asn1_tree::{encode_der, TlvNode};
use crate::objects::Vrp;
use crate::repair_signer::repair;
use crate::ObjectKind;
use crate::repair_signer::{KeyError, KeyMaterial};
use crate::util::sha256;
pub use snapshot::{RepoConfig, RepoSnapshot, FUZZ_CA, INTEGRITY_CA, TA, TEST_ROA_FILE};

#[derive(Debug, thiserror::Error)]
pub enum RepoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("repository of {bytes} bytes exceeds limit {max}")]
    TooLarge { bytes: u64, max: u64 },
    #[error("invalid object name {0:?}")]
    BadName(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot skeleton lacks {0}")]
    Skeleton(&'static str),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Encode(#[from] crate::asn1_tree::EncodeError),
}

/// One encoded batch object and its file name under the fuzzing CA.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublishedObject {
    pub name: String,
    pub der: Vec<u8>,
}

/// File name of batch object `index` (0-based).
pub fn object_name(index: usize, ext: &str) -> String {
    format!("obj-{:06}.{ext}", index + 1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoLayout {
    pub root: PathBuf,
    pub serial: u64,
    pub session_id: String,
    /// Fuzzing-CA manifest entries in publication order.
    pub manifest: Vec<(String, String)>,
    /// Batch file names in batch order.
    pub payload_names: Vec<String>,
    pub notification_hash: String,
    pub tal_path: PathBuf,
    pub test_roa: Vrp,
    /// SHA-256 over every file path and its bytes, in path order.
    pub hash: String,
}

impl RepoLayout {
    pub fn rsync_dir(&self) -> PathBuf {
        self.root.join("rsync")
    }

    pub fn fuzz_ca_dir(&self) -> PathBuf {
        self.rsync_dir().join(FUZZ_CA)
    }

    pub fn notification_path(&self) -> PathBuf {
        self.root.join("rrdp/notification.xml")
    }
}

/// Hash of a set of files keyed by relative path.
pub fn layout_hash(files: &BTreeMap<String, Vec<u8>>) -> String {
    let mut acc = Vec::with_capacity(files.len() * 72);
    for (p, b) in files {
        acc.extend_from_slice(p.as_bytes());
        acc.push(0);
        acc.extend_from_slice(&sha256(b));
    }
    hex::encode(sha256(&acc))
}

/// Recomputes the layout hash of a repository on disk.
pub fn hash_directory(root: &Path) -> Result<String, RepoError> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
        for e in std::fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_dir() {
                walk(base, &p, out)?;
            } else {
                let rel = p.strip_prefix(base).expect("below base").to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p)?);
            }
        }
        Ok(())
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files)?;
    Ok(layout_hash(&files))
}

fn valid_name(n: &str) -> bool {
    !n.is_empty()
        && n.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
        && !n.starts_with('.')
        && n != format!("{FUZZ_CA}.crl")
        && n != format!("{FUZZ_CA}.mft")
}

fn swap_into(tmp: &Path, out: &Path) -> std::io::Result<()> {
    if out.exists() {
        let old = out.with_file_name(format!(
            ".{}.old-{}",
            out.file_name().and_then(|s| s.to_str()).unwrap_or("repo"),
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&old);
        std::fs::rename(out, &old)?;
        std::fs::rename(tmp, out)?;
        std::fs::remove_dir_all(old)
    } else {
        std::fs::rename(tmp, out)
    }
}

/// Assembles all repository files in memory. Keys are paths relative to the
/// repository root.
pub fn assemble(snapshot: &RepoSnapshot, objects: &[PublishedObject], serial: u64) -> Result<BTreeMap<String, Vec<u8>>, RepoError> {
    assemble_with(snapshot, objects, serial, BuildOptions::default())
}

/// Variations of the published layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    /// Publish the integrity CA's files. Loop-head identification runs
    /// leave them out so only batch objects pass through the object loops.
    pub include_integrity: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { include_integrity: true }
    }
}

pub fn assemble_with(
    snapshot: &RepoSnapshot,
    objects: &[PublishedObject],
    serial: u64,
    opts: BuildOptions,
) -> Result<BTreeMap<String, Vec<u8>>, RepoError> {
    let cfg = &snapshot.config;
    let integrity_prefix = format!("{INTEGRITY_CA}/");
    let statics = || snapshot.static_files.iter().filter(|f| opts.include_integrity || !f.path.starts_with(&integrity_prefix));
    let mut seen = std::collections::HashSet::new();
    let mut total: u64 = statics().map(|f| f.der.len() as u64).sum();
    for o in objects {
        if !valid_name(&o.name) || !seen.insert(o.name.as_str()) {
            return Err(RepoError::BadName(o.name.clone()));
        }
        total += o.der.len() as u64;
    }
    if total > cfg.max_repo_bytes {
        return Err(RepoError::TooLarge { bytes: total, max: cfg.max_repo_bytes });
    }

    let ca = &snapshot.keys.pool.ca;
    let crl_name = format!("{FUZZ_CA}.crl");
    let crl = snapshot::signed_crl(
        &snapshot.crl_skeleton,
        serial,
        KeyMaterial { ca, one_off: ca },
        &snapshot::context_for(cfg, FUZZ_CA, &crl_name, serial),
    )?;
    let mut entries: Vec<(String, [u8; 32])> = objects.iter().map(|o| (o.name.clone(), sha256(&o.der))).collect();
    entries.push((crl_name.clone(), sha256(&crl)));
    let mft_name = format!("{FUZZ_CA}.mft");
    let mft = snapshot::signed_manifest(
        &snapshot.manifest_skeleton,
        &entries,
        KeyMaterial { ca, one_off: &snapshot.keys.manifest_ee },
        &snapshot::context_for(cfg, FUZZ_CA, &mft_name, serial),
    )?;

    let mut rsync: BTreeMap<String, &[u8]> = BTreeMap::new();
    for f in statics() {
        rsync.insert(f.path.clone(), &f.der);
    }
    for o in objects {
        rsync.insert(format!("{FUZZ_CA}/{}", o.name), &o.der);
    }
    rsync.insert(format!("{FUZZ_CA}/{crl_name}"), &crl);
    rsync.insert(format!("{FUZZ_CA}/{mft_name}"), &mft);

    let snapshot_rel = format!("{}/{serial}/snapshot.xml", snapshot.session_id);
    let publishes: Vec<(String, &[u8])> = rsync.iter().map(|(p, b)| (cfg.rsync_uri(p), *b)).collect();
    let docs = rrdp::emit_rrdp(&snapshot.session_id, serial, &format!("{}{snapshot_rel}", cfg.rrdp_base), &publishes);

    let ta_rsync = cfg.rsync_uri(&format!("{TA}/{TA}.cer"));
    let ta_spki = crate::asn1_tree::encode_der(&snapshot.keys.ta.spki())?;
    let tal = tal::make_tal(&ta_spki, &[&cfg.ta_https_uri, &ta_rsync]);

    let mut files: BTreeMap<String, Vec<u8>> = rsync.into_iter().map(|(p, b)| (format!("rsync/{p}"), b.to_vec())).collect();
    files.insert("rrdp/notification.xml".into(), docs.notification);
    files.insert(format!("rrdp/{snapshot_rel}"), docs.snapshot);
    files.insert("ta.tal".into(), tal.into_bytes());
    Ok(files)
}

/// Writes the repository for `objects` to `out`, replacing any previous
/// content in one directory swap.
pub fn build_repository(
    snapshot: &RepoSnapshot,
    objects: &[PublishedObject],
    serial: u64,
    out: &Path,
) -> Result<RepoLayout, RepoError> {
    build_repository_with(snapshot, objects, serial, out, BuildOptions::default())
}

pub fn build_repository_with(
    snapshot: &RepoSnapshot,
    objects: &[PublishedObject],
    serial: u64,
    out: &Path,
    opts: BuildOptions,
) -> Result<RepoLayout, RepoError> {
    let files = assemble_with(snapshot, objects, serial, opts)?;
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        out.file_name().and_then(|s| s.to_str()).unwrap_or("repo"),
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&tmp);
    for (rel, bytes) in &files {
        let p = tmp.join(rel);
        std::fs::create_dir_all(p.parent().expect("file has parent"))?;
        std::fs::write(p, bytes)?;
    }
    swap_into(&tmp, out)?;

    let mft_prefix = format!("rsync/{FUZZ_CA}/");
    let mut manifest: Vec<(String, String)> =
        objects.iter().map(|o| (o.name.clone(), hex::encode(sha256(&o.der)))).collect();
    let crl_rel = format!("{mft_prefix}{FUZZ_CA}.crl");
    manifest.push((format!("{FUZZ_CA}.crl"), hex::encode(sha256(&files[&crl_rel]))));
    let notification_hash = hex::encode_upper(sha256(
        files.iter().find(|(k, _)| k.ends_with("/snapshot.xml")).map(|(_, v)| v.as_slice()).expect("snapshot present"),
    ));
    Ok(RepoLayout {
        root: out.to_path_buf(),
        serial,
        session_id: snapshot.session_id.clone(),
        manifest,
        payload_names: objects.iter().map(|o| o.name.clone()).collect(),
        notification_hash,
        tal_path: out.join("ta.tal"),
        test_roa: snapshot.test_roa.clone(),
        hash: layout_hash(&files),
    })
}

/// Repairs and encodes batch trees for publication under the fuzzing CA.
/// Object `i` is named by its position and signed with pool key `i`.
pub fn publish_trees(snapshot: &RepoSnapshot, trees: &mut [(ObjectKind, TlvNode)], serial: u64) -> Result<Vec<PublishedObject>, RepoError> {
    trees.iter_mut().enumerate().map(|(i, (kind, tree))| publish_one(snapshot, i, *kind, tree, serial)).collect()
}

/// `publish_trees` split over `workers` threads; the result is identical.
pub fn publish_trees_parallel(
    snapshot: &RepoSnapshot,
    trees: &mut [(ObjectKind, TlvNode)],
    serial: u64,
    workers: usize,
) -> Result<Vec<PublishedObject>, RepoError> {
    if workers <= 1 || trees.len() < 2 {
        return publish_trees(snapshot, trees, serial);
    }
    let (len, chunk) = (trees.len(), trees.len().div_ceil(workers));
    std::thread::scope(|s| {
        let handles: Vec<_> = trees
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter_mut()
                        .enumerate()
                        .map(|(j, (kind, tree))| publish_one(snapshot, c * chunk + j, *kind, tree, serial))
                        .collect::<Result<Vec<_>, RepoError>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(len);
        for h in handles {
            out.extend(h.join().expect("publish worker panicked")?);
        }
        Ok(out)
    })
}

fn publish_one(snapshot: &RepoSnapshot, i: usize, kind: ObjectKind, tree: &mut TlvNode, serial: u64) -> Result<PublishedObject, RepoError> {
    let name = object_name(i, kind.extension());
    let ctx = snapshot.object_context(&name, serial);
    repair(tree, kind, &snapshot.keys.pool.material(i), &ctx);
    Ok(PublishedObject { name, der: encode_der(tree)? })
}

/// Builds successive repositories of one campaign, bumping the RRDP serial.
pub struct RepoBuilder {
    pub snapshot: RepoSnapshot,
    next_serial: u64,
}

impl RepoBuilder {
    pub fn new(snapshot: RepoSnapshot) -> Self {
        RepoBuilder { snapshot, next_serial: 1 }
    }

    pub fn next_serial(&self) -> u64 {
        self.next_serial
    }

    pub fn build(&mut self, objects: &[PublishedObject], out: &Path) -> Result<RepoLayout, RepoError> {
        let layout = build_repository(&self.snapshot, objects, self.next_serial, out)?;
        self.next_serial += 1;
        Ok(layout)
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::{find_by_label, parse_labeled};
    use crate::kind::ObjectKind;

    fn objects(n: usize) -> Vec<PublishedObject> {
        (0..n).map(|i| PublishedObject { name: object_name(i, "roa"), der: vec![0x30, 0x01, i as u8] }).collect()
    }

    #[test]
    fn empty_batch_builds_auxiliary_repository() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("repo");
        let layout = build_repository(test_snapshot::snapshot(), &[], 1, &out).unwrap();
        assert_eq!(layout.manifest.len(), 1);
        assert!(out.join("rsync/integrity-ca/test.roa").exists());
        assert!(out.join("rsync/fuzz-ca/fuzz-ca.mft").exists());
        assert_eq!(hash_directory(&out).unwrap(), layout.hash);
    }

    #[test]
    fn rebuild_is_byte_identical_and_swaps() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("repo");
        let a = build_repository(test_snapshot::snapshot(), &objects(3), 7, &out).unwrap();
        let b = build_repository(test_snapshot::snapshot(), &objects(3), 7, &out).unwrap();
        assert_eq!(a.hash, b.hash);
        let c = build_repository(test_snapshot::snapshot(), &objects(2), 7, &out).unwrap();
        assert_ne!(a.hash, c.hash);
        assert!(!out.join("rsync/fuzz-ca/obj-000003.roa").exists());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn manifest_lists_every_payload_with_hash() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("repo");
        let objs = objects(5);
        build_repository(test_snapshot::snapshot(), &objs, 2, &out).unwrap();
        let mft = std::fs::read(out.join("rsync/fuzz-ca/fuzz-ca.mft")).unwrap();
        let t = parse_labeled(&mft, ObjectKind::Manifest).root;
        let list = t.get(&find_by_label(&t, "mft.fileList").unwrap()).unwrap();
        assert_eq!(list.children.len(), 6);
        for (entry, o) in list.children.iter().zip(&objs) {
            assert_eq!(entry.children[0].value, o.name.as_bytes());
            assert_eq!(entry.children[1].value[1..], sha256(&o.der));
        }
    }

    #[test]
    fn rejects_bad_names_and_oversize() {
        let dir = tempfile::tempdir().unwrap();
        let bad = vec![PublishedObject { name: "../x.roa".into(), der: vec![] }];
        assert!(matches!(
            build_repository(test_snapshot::snapshot(), &bad, 1, &dir.path().join("r")),
            Err(RepoError::BadName(_))
        ));
        let mut snap = test_snapshot::snapshot().clone();
        snap.config.max_repo_bytes = 10;
        assert!(matches!(build_repository(&snap, &objects(1), 1, &dir.path().join("r")), Err(RepoError::TooLarge { .. })));
    }

    #[test]
    fn serial_increments_per_build() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = RepoBuilder::new(test_snapshot::snapshot().clone());
        let l1 = b.build(&[], &dir.path().join("r")).unwrap();
        let l2 = b.build(&[], &dir.path().join("r")).unwrap();
        assert_eq!(l2.serial, l1.serial + 1);
        let n = rrdp::parse_notification(&std::fs::read(l2.notification_path()).unwrap()).unwrap();
        assert_eq!(n.serial, l2.serial);
    }

    #[test]
    fn snapshot_store_load_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.json");
        let s = test_snapshot::snapshot();
        s.store(&p).unwrap();
        let back = RepoSnapshot::load(&p).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(s).unwrap());
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        v["version"] = 999.into();
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(RepoSnapshot::load(&p).is_err());
    }
}
