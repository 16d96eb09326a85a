//! The static part of a fuzzing repository, built once per campaign and
//! cached on disk.

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::asn1_tree::{encode_der, label_tree, schema_for, oid, TlvNode};
use crate::kind::ObjectKind;
use crate::objects::{
    certificate, crl, econtent_der, manifest_payload, placeholder_spki, roa_payload, signed_object, AsResources,
    CertSpec, CrlSpec, IpPrefix, IpResources, RoaFamily, Vrp,
};
use crate::repair_signer::{repair, KeyMaterial, KeyPair, KeyPool, RepairContext};
use crate::util::{derive_seed, sha256};

use super::RepoError;

/// Bumped whenever the stored layout changes.
pub const SNAPSHOT_VERSION: u32 = 1;

pub const TA: &str = "ta";
pub const FUZZ_CA: &str = "fuzz-ca";
pub const INTEGRITY_CA: &str = "integrity-ca";
pub const TEST_ROA_FILE: &str = "test.roa";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoConfig {
    pub seed: u64,
    pub key_pool_size: usize,
    /// rsync URI of the repository root, ending in `/`.
    pub rsync_base: String,
    /// HTTP URI under which `<root>/rrdp` is served, ending in `/`.
    pub rrdp_base: String,
    /// HTTPS location of the TA certificate listed first in the TAL.
    pub ta_https_uri: String,
    /// Fixed clock, Unix seconds.
    pub clock_unix: i64,
    pub max_repo_bytes: u64,
}

impl Default for RepoConfig {
    fn default() -> Self {
        RepoConfig {
            seed: 0,
            key_pool_size: crate::repair_signer::keys::DEFAULT_POOL_SIZE,
            rsync_base: "rsync://localhost/repo/".into(),
            rrdp_base: "http://localhost:8080/rrdp/".into(),
            ta_https_uri: "https://localhost/ta/ta.cer".into(),
            clock_unix: crate::objects::default_clock().timestamp(),
            max_repo_bytes: 512 << 20,
        }
    }
}

impl RepoConfig {
    pub fn clock(&self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.clock_unix, 0).single().expect("valid timestamp")
    }

    pub fn rsync_uri(&self, rel: &str) -> String {
        format!("{}{rel}", self.rsync_base)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotKeys {
    pub ta: KeyPair,
    pub integrity_ca: KeyPair,
    pub integrity_ee: KeyPair,
    pub manifest_ee: KeyPair,
    /// `pool.ca` is the fuzzing CA.
    pub pool: KeyPool,
}

/// A file in the repository, path relative to the rsync root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticFile {
    pub path: String,
    #[serde(with = "crate::util::hex_bytes")]
    pub der: Vec<u8>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub version: u32,
    pub config: RepoConfig,
    pub keys: SnapshotKeys,
    pub session_id: String,
    /// Fully signed objects that never change: the TA publication point and
    /// the integrity CA with its test ROA.
    pub static_files: Vec<StaticFile>,
    /// Labeled, unsigned fuzzing-CA CRL and manifest; filled per build.
    pub crl_skeleton: TlvNode,
    pub manifest_skeleton: TlvNode,
    pub test_roa: Vrp,
}

fn ca_spec(cfg: &RepoConfig, issuer: &str, subject: &str, ip: IpResources, asn: AsResources, ta: bool) -> CertSpec {
    let clock = cfg.clock();
    let repo = cfg.rsync_uri(&format!("{subject}/"));
    CertSpec {
        serial: vec![1],
        issuer: issuer.into(),
        subject: subject.into(),
        not_before: clock - Duration::days(1),
        not_after: clock + Duration::days(3650),
        spki: placeholder_spki(),
        ski: vec![0; 20],
        aki: Some(vec![0; 20]),
        ca: true,
        crldp: (!ta).then(|| cfg.rsync_uri(&format!("{TA}/{TA}.crl"))),
        aia: (!ta).then(|| cfg.rsync_uri(&format!("{TA}/{TA}.cer"))),
        sia: vec![
            (oid::AD_CA_REPOSITORY, repo.clone()),
            (oid::AD_RPKI_MANIFEST, format!("{repo}{subject}.mft")),
            (oid::AD_RPKI_NOTIFY, format!("{}notification.xml", cfg.rrdp_base)),
        ],
        ip,
        asn: Some(asn),
    }
}

fn ee_spec(cfg: &RepoConfig, issuer: &str, object_uri: String) -> CertSpec {
    let clock = cfg.clock();
    CertSpec {
        serial: vec![1],
        issuer: issuer.into(),
        subject: format!("{issuer}-ee"),
        not_before: clock - Duration::days(1),
        not_after: clock + Duration::days(365),
        spki: placeholder_spki(),
        ski: vec![0; 20],
        aki: Some(vec![0; 20]),
        ca: false,
        crldp: Some(cfg.rsync_uri(&format!("{issuer}/{issuer}.crl"))),
        aia: Some(cfg.rsync_uri(&format!("{TA}/{issuer}.cer"))),
        sia: vec![(oid::AD_SIGNED_OBJECT, object_uri)],
        ip: IpResources::Inherit,
        asn: Some(AsResources::Inherit),
    }
}

/// Context for an object published by CA `ca` under file name `name`.
pub fn context_for(cfg: &RepoConfig, ca: &str, name: &str, serial: u64) -> RepairContext {
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    let issuer_cert = if ca == TA { format!("{TA}/{TA}.cer") } else { format!("{TA}/{ca}.cer") };
    let child_repo = cfg.rsync_uri(&format!("{stem}/"));
    RepairContext {
        clock: cfg.clock(),
        serial: serial.to_be_bytes().to_vec(),
        uris: Default::default(),
    }
    .with_uri("object", cfg.rsync_uri(&format!("{ca}/{name}")))
    .with_uri("crl", cfg.rsync_uri(&format!("{ca}/{ca}.crl")))
    .with_uri("issuer_cert", cfg.rsync_uri(&issuer_cert))
    .with_uri("manifest", format!("{child_repo}{stem}.mft"))
    .with_uri("ca_repository", child_repo)
}

fn finish(mut tree: TlvNode, kind: ObjectKind, keys: KeyMaterial<'_>, ctx: &RepairContext) -> Result<Vec<u8>, RepoError> {
    label_tree(&mut tree, schema_for(kind));
    repair(&mut tree, kind, &keys, ctx);
    Ok(encode_der(&tree)?)
}

/// Unsigned labeled manifest for CA `ca`.
pub fn manifest_skeleton(cfg: &RepoConfig, ca: &str) -> TlvNode {
    let clock = cfg.clock();
    let name = format!("{ca}.mft");
    let ee = certificate(&ee_spec(cfg, ca, cfg.rsync_uri(&format!("{ca}/{name}"))));
    let payload = manifest_payload(1, clock, clock + Duration::days(1), &[]);
    let mut t = signed_object(oid::CT_MANIFEST, econtent_der(payload), ee, &[0; 20], clock);
    label_tree(&mut t, schema_for(ObjectKind::Manifest));
    t
}

/// Unsigned labeled CRL for CA `ca`.
pub fn crl_skeleton(cfg: &RepoConfig, ca: &str) -> TlvNode {
    let clock = cfg.clock();
    let mut t = crl(&CrlSpec {
        issuer: ca.into(),
        this_update: clock,
        next_update: clock + Duration::days(1),
        revoked: Vec::new(),
        aki: vec![0; 20],
        number: 1,
    });
    label_tree(&mut t, schema_for(ObjectKind::Crl));
    t
}

/// Signs a manifest for `ca` listing `files` in order.
pub fn signed_manifest(
    skeleton: &TlvNode,
    files: &[(String, [u8; 32])],
    keys: KeyMaterial<'_>,
    ctx: &RepairContext,
) -> Result<Vec<u8>, RepoError> {
    let mut t = skeleton.clone();
    let path = crate::asn1_tree::find_by_label(&t, "mft.fileList").ok_or(RepoError::Skeleton("mft.fileList"))?;
    let list = t.get_mut(&path).expect("labeled path exists");
    list.children = files
        .iter()
        .map(|(n, h)| crate::asn1_tree::build::seq(vec![crate::asn1_tree::build::ia5(n), crate::asn1_tree::build::bits(0, h)]))
        .collect();
    crate::repair_signer::taint_path(&mut t, &path);
    repair(&mut t, ObjectKind::Manifest, &keys, ctx);
    Ok(encode_der(&t)?)
}

pub fn signed_crl(skeleton: &TlvNode, number: u64, keys: KeyMaterial<'_>, ctx: &RepairContext) -> Result<Vec<u8>, RepoError> {
    let mut t = skeleton.clone();
    if let Some(p) = crate::asn1_tree::find_by_label(&t, "crl.crlNumber") {
        let n = crate::asn1_tree::build::unsigned(&number.to_be_bytes());
        t.get_mut(&p).expect("labeled path exists").set_value(encode_der(&n)?);
        crate::repair_signer::taint_path(&mut t, &p);
    }
    repair(&mut t, ObjectKind::Crl, &keys, ctx);
    Ok(encode_der(&t)?)
}

fn session_id(seed: u64) -> String {
    let a = derive_seed(seed, 0x5e55).to_be_bytes();
    let b = derive_seed(seed, 0x5e56).to_be_bytes();
    let h = hex::encode([a, b].concat());
    format!("{}-{}-{}-{}-{}", &h[0..8], &h[8..12], &h[12..16], &h[16..20], &h[20..32])
}

impl RepoSnapshot {
    /// Generates keys and signs all static objects.
    pub fn create(config: RepoConfig) -> Result<Self, RepoError> {
        let seed = config.seed;
        let key = |stream| KeyPair::from_seed(derive_seed(seed, stream));
        let keys = SnapshotKeys {
            ta: key(0x7a_0001)?,
            integrity_ca: key(0x7a_0002)?,
            integrity_ee: key(0x7a_0003)?,
            manifest_ee: key(0x7a_0004)?,
            pool: KeyPool::generate(seed, config.key_pool_size)?,
        };
        let cfg = &config;
        let clock = cfg.clock();
        let all_ip = || {
            IpResources::Prefixes(vec!["0.0.0.0/0".parse().expect("literal"), "::/0".parse().expect("literal")])
        };
        let mut files = Vec::new();
        let mut push = |path: String, der: Vec<u8>| {
            let h = sha256(&der);
            files.push(StaticFile { path, der });
            h
        };

        let ta_ctx = |name: &str, serial| context_for(cfg, TA, name, serial);
        let ta_self = KeyMaterial { ca: &keys.ta, one_off: &keys.ta };
        let ta_cert = certificate(&ca_spec(cfg, TA, TA, all_ip(), AsResources::Range(0, u32::MAX), true));
        let mut ta_cert_ctx = ta_ctx("ta.cer", 1);
        ta_cert_ctx.uris.remove("crl");
        ta_cert_ctx.uris.remove("issuer_cert");
        let ta_der = finish(ta_cert, ObjectKind::CaCertificate, ta_self, &ta_cert_ctx)?;
        push(format!("{TA}/{TA}.cer"), ta_der);

        let fuzz_ca = certificate(&ca_spec(cfg, TA, FUZZ_CA, all_ip(), AsResources::Range(0, u32::MAX), false));
        let h_fuzz = push(
            format!("{TA}/{FUZZ_CA}.cer"),
            finish(fuzz_ca, ObjectKind::CaCertificate, KeyMaterial { ca: &keys.ta, one_off: &keys.pool.ca }, &ta_ctx("fuzz-ca.cer", 2))?,
        );
        let test_prefix: IpPrefix = "192.0.2.0/24".parse().expect("literal");
        let test_roa = Vrp { asn: 64496, prefix: test_prefix.clone(), max_len: 24 };
        let integrity = certificate(&ca_spec(
            cfg,
            TA,
            INTEGRITY_CA,
            IpResources::Prefixes(vec![test_prefix.clone()]),
            AsResources::Range(64496, 64496),
            false,
        ));
        let h_int = push(
            format!("{TA}/{INTEGRITY_CA}.cer"),
            finish(
                integrity,
                ObjectKind::CaCertificate,
                KeyMaterial { ca: &keys.ta, one_off: &keys.integrity_ca },
                &ta_ctx("integrity-ca.cer", 3),
            )?,
        );
        let ta_crl = signed_crl(&crl_skeleton(cfg, TA), 1, ta_self, &ta_ctx("ta.crl", 1))?;
        let h_ta_crl = push(format!("{TA}/{TA}.crl"), ta_crl);
        let ta_mft = signed_manifest(
            &manifest_skeleton(cfg, TA),
            &[("fuzz-ca.cer".into(), h_fuzz), ("integrity-ca.cer".into(), h_int), ("ta.crl".into(), h_ta_crl)],
            KeyMaterial { ca: &keys.ta, one_off: &keys.manifest_ee },
            &ta_ctx("ta.mft", 1),
        )?;
        push(format!("{TA}/{TA}.mft"), ta_mft);

        // Integrity CA publication point with the test ROA.
        let int_ctx = |name: &str| context_for(cfg, INTEGRITY_CA, name, 1);
        let int_keys = KeyMaterial { ca: &keys.integrity_ca, one_off: &keys.integrity_ee };
        let roa = signed_object(
            oid::CT_ROA,
            econtent_der(roa_payload(test_roa.asn, &[RoaFamily { afi: 1, entries: vec![(test_prefix, Some(24))] }])),
            certificate(&ee_spec(cfg, INTEGRITY_CA, cfg.rsync_uri(&format!("{INTEGRITY_CA}/{TEST_ROA_FILE}")))),
            &[0; 20],
            clock,
        );
        let h_roa = push(format!("{INTEGRITY_CA}/{TEST_ROA_FILE}"), finish(roa, ObjectKind::Roa, int_keys, &int_ctx(TEST_ROA_FILE))?);
        let int_crl = signed_crl(
            &crl_skeleton(cfg, INTEGRITY_CA),
            1,
            KeyMaterial { ca: &keys.integrity_ca, one_off: &keys.integrity_ca },
            &int_ctx("integrity-ca.crl"),
        )?;
        let h_int_crl = push(format!("{INTEGRITY_CA}/{INTEGRITY_CA}.crl"), int_crl);
        let int_mft = signed_manifest(
            &manifest_skeleton(cfg, INTEGRITY_CA),
            &[(TEST_ROA_FILE.into(), h_roa), ("integrity-ca.crl".into(), h_int_crl)],
            KeyMaterial { ca: &keys.integrity_ca, one_off: &keys.manifest_ee },
            &int_ctx("integrity-ca.mft"),
        )?;
        push(format!("{INTEGRITY_CA}/{INTEGRITY_CA}.mft"), int_mft);

        Ok(RepoSnapshot {
            version: SNAPSHOT_VERSION,
            session_id: session_id(seed),
            crl_skeleton: crl_skeleton(cfg, FUZZ_CA),
            manifest_skeleton: manifest_skeleton(cfg, FUZZ_CA),
            static_files: files,
            test_roa,
            keys,
            config,
        })
    }

    pub fn store(&self, path: &Path) -> Result<(), RepoError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self).map_err(|e| RepoError::Snapshot(e.to_string()))?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RepoError> {
        let bytes = std::fs::read(path)?;
        let snap: RepoSnapshot = serde_json::from_slice(&bytes).map_err(|e| RepoError::Snapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(RepoError::Snapshot(format!("version {} != {SNAPSHOT_VERSION}", snap.version)));
        }
        Ok(snap)
    }

    /// Loads the cached snapshot when it matches `config`; otherwise builds a
    /// fresh one and caches it.
    pub fn load_or_create(path: &Path, config: RepoConfig) -> Result<Self, RepoError> {
        match Self::load(path) {
            Ok(s) if s.config == config => return Ok(s),
            Ok(_) => log::warn!("snapshot {} has a different configuration; rebuilding", path.display()),
            Err(RepoError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => log::warn!("snapshot {} unusable ({e}); rebuilding", path.display()),
        }
        let s = Self::create(config)?;
        s.store(path)?;
        Ok(s)
    }

    pub fn ta_cert(&self) -> &[u8] {
        &self.static_files.iter().find(|f| f.path == format!("{TA}/{TA}.cer")).expect("TA certificate present").der
    }

    /// Repair context for a batch object published under the fuzzing CA.
    pub fn object_context(&self, name: &str, serial: u64) -> RepairContext {
        context_for(&self.config, FUZZ_CA, name, serial)
    }

    pub fn fuzz_ca_uri(&self) -> String {
        self.config.rsync_uri(&format!("{FUZZ_CA}/"))
    }
}
