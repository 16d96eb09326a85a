//! Repository loading and the object checks of the simulated validator.

use std::collections::HashMap;
use std::path::Path;

use crate::asn1_tree::{encode_content, encode_der, find_by_label, tags, TagClass, TlvNode};
use crate::objects::{IpPrefix, Vrp};
use crate::repair_signer::verify;
use crate::repo_builder::rrdp;
use crate::repo_builder::tal::parse_tal;
use crate::util::sha256;
use crate::ObjectKind;

/// Published files keyed by rsync URI.
#[derive(Debug, Default)]
pub struct RepoView {
    pub files: HashMap<String, Vec<u8>>,
    pub source: &'static str,
}

/// Trust anchor from a TAL: its rsync URI and SubjectPublicKeyInfo.
#[derive(Debug, Clone)]
pub struct TrustAnchor {
    pub uri: String,
    pub spki: Vec<u8>,
}

pub fn read_tal(path: &Path) -> Result<TrustAnchor, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("tal {}: {e}", path.display()))?;
    let (uris, spki) = parse_tal(&text).ok_or("malformed tal")?;
    let uri = uris.into_iter().find(|u| u.starts_with("rsync://")).ok_or("tal has no rsync uri")?;
    Ok(TrustAnchor { uri, spki })
}

/// Loads the RRDP snapshot if the repository has one, otherwise the rsync
/// tree. The rsync base is inferred from where the TA certificate sits.
pub fn load_repository(root: &Path, ta: &TrustAnchor) -> Result<RepoView, String> {
    let notif = root.join("rrdp/notification.xml");
    if notif.exists() {
        let n = rrdp::parse_notification(&std::fs::read(&notif).map_err(|e| e.to_string())?)
            .map_err(|e| format!("notification: {e}"))?;
        let tail: Vec<&str> = n.snapshot_uri.rsplit('/').take(3).collect();
        let rel = tail.iter().rev().copied().collect::<Vec<_>>().join("/");
        let bytes = std::fs::read(root.join("rrdp").join(&rel)).map_err(|e| format!("snapshot {rel}: {e}"))?;
        if !hex::encode(sha256(&bytes)).eq_ignore_ascii_case(&n.snapshot_hash) {
            return Err("snapshot hash does not match notification".into());
        }
        let snap = rrdp::parse_snapshot(&bytes).map_err(|e| format!("snapshot: {e}"))?;
        if snap.session_id != n.session_id || snap.serial != n.serial {
            return Err("snapshot session or serial differs from notification".into());
        }
        return Ok(RepoView { files: snap.publishes.into_iter().collect(), source: "rrdp" });
    }
    let rsync = root.join("rsync");
    let mut rels = Vec::new();
    collect_files(&rsync, &rsync, &mut rels).map_err(|e| format!("rsync dir: {e}"))?;
    let ta_rel = rels
        .iter()
        .filter(|r| ta.uri.ends_with(&format!("/{r}")))
        .max_by_key(|r| r.len())
        .ok_or("trust anchor certificate not found in rsync tree")?;
    let base = ta.uri[..ta.uri.len() - ta_rel.len()].to_string();
    let mut files = HashMap::new();
    for r in rels {
        let bytes = std::fs::read(rsync.join(&r)).map_err(|e| e.to_string())?;
        files.insert(format!("{base}{r}"), bytes);
    }
    Ok(RepoView { files, source: "rsync" })
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(base, &p, out)?;
        } else {
            out.push(p.strip_prefix(base).expect("below base").to_string_lossy().into_owned());
        }
    }
    Ok(())
}

/// Why an object was rejected. Each reason has its own branch counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reject {
    Missing,
    HashMismatch,
    Malformed,
    UnknownType,
    EeSignature,
    Digest,
    CmsSignature,
    ContentType,
    Payload,
    MaxLength,
    CertSignature,
    Policy,
    Poisoned,
}

impl Reject {
    pub const ALL: [Reject; 13] = [
        Reject::Missing,
        Reject::HashMismatch,
        Reject::Malformed,
        Reject::UnknownType,
        Reject::EeSignature,
        Reject::Digest,
        Reject::CmsSignature,
        Reject::ContentType,
        Reject::Payload,
        Reject::MaxLength,
        Reject::CertSignature,
        Reject::Policy,
        Reject::Poisoned,
    ];

    pub fn ordinal(self) -> usize {
        Reject::ALL.iter().position(|r| *r == self).expect("listed")
    }
}

/// RSA public key (modulus, exponent) held by a certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaKey {
    pub modulus: Vec<u8>,
    pub exponent: Vec<u8>,
}

impl RsaKey {
    /// From a SubjectPublicKeyInfo DER.
    pub fn from_spki_der(der: &[u8]) -> Option<Self> {
        let spki = crate::asn1_tree::parse_der_strict(der).ok()?;
        Self::from_spki(&spki)
    }

    pub fn from_spki(spki: &TlvNode) -> Option<Self> {
        Self::from_bit_string(spki.children.get(1)?)
    }

    /// From the subjectPublicKey BIT STRING holding an RSAPublicKey.
    pub fn from_bit_string(bits: &TlvNode) -> Option<Self> {
        if !bits.is_universal(tags::BIT_STRING) {
            return None;
        }
        let content = encode_content(bits).ok()?;
        let (&unused, der) = content.split_first()?;
        if unused != 0 {
            return None;
        }
        let rsa = crate::asn1_tree::parse_der_strict(der).ok()?;
        let [n, e] = &rsa.children[..] else { return None };
        if !rsa.is_universal(tags::SEQUENCE) || !n.is_universal(tags::INTEGER) || !e.is_universal(tags::INTEGER) {
            return None;
        }
        Some(RsaKey { modulus: n.value.clone(), exponent: e.value.clone() })
    }

    pub fn verify(&self, msg: &[u8], sig: &[u8]) -> bool {
        verify(&self.modulus, &self.exponent, msg, sig)
    }
}

fn labeled<'a>(root: &'a TlvNode, label: &str) -> Option<&'a TlvNode> {
    find_by_label(root, label).and_then(|p| root.get(&p))
}

/// Content of a BIT STRING without unused bits, past the unused-bits octet.
fn bit_string_bytes(node: &TlvNode) -> Option<Vec<u8>> {
    if !node.is_universal(tags::BIT_STRING) {
        return None;
    }
    let mut c = encode_content(node).ok()?;
    (c.first() == Some(&0)).then(|| c.split_off(1))
}

/// Checks `prefix.signature` over `prefix.tbs` with `issuer`; returns the
/// certificate's own key.
pub fn check_certificate(root: &TlvNode, prefix: &str, issuer: &RsaKey) -> Result<RsaKey, Reject> {
    let tbs = labeled(root, &format!("{prefix}.tbs")).ok_or(Reject::Malformed)?;
    let sig = labeled(root, &format!("{prefix}.signature")).and_then(bit_string_bytes).ok_or(Reject::Malformed)?;
    let tbs_der = encode_der(tbs).map_err(|_| Reject::Malformed)?;
    if !issuer.verify(&tbs_der, &sig) {
        return Err(Reject::CertSignature);
    }
    labeled(root, &format!("{prefix}.subjectPublicKey")).and_then(RsaKey::from_bit_string).ok_or(Reject::Malformed)
}

/// Checks a CMS signed object: EE certificate under `ca`, message digest,
/// and the signature over the signed attributes. Returns the eContent bytes.
pub fn check_signed_object(root: &TlvNode, kind: ObjectKind, ca: &RsaKey) -> Result<Vec<u8>, Reject> {
    let p = kind.label_prefix();
    let ee = check_certificate(root, &format!("{p}.eeCert"), ca).map_err(|r| match r {
        Reject::CertSignature => Reject::EeSignature,
        other => other,
    })?;
    let econtent = labeled(root, &format!("{p}.eContent")).ok_or(Reject::Malformed)?;
    let content = encode_content(econtent).map_err(|_| Reject::Malformed)?;
    let digest = labeled(root, &format!("{p}.messageDigest")).ok_or(Reject::Malformed)?;
    if encode_content(digest).ok().as_deref() != Some(&sha256(&content)[..]) {
        return Err(Reject::Digest);
    }
    let ctype = labeled(root, &format!("{p}.eContentType")).ok_or(Reject::Malformed)?;
    let attr_ctype = labeled(root, &format!("{p}.attrContentTypeValue")).ok_or(Reject::Malformed)?;
    if ctype.value != attr_ctype.value {
        return Err(Reject::ContentType);
    }
    let mut attrs = labeled(root, &format!("{p}.signedAttrs")).ok_or(Reject::Malformed)?.clone();
    attrs.tag_override = None;
    attrs.tag_class = TagClass::Universal;
    attrs.tag_number = tags::SET;
    attrs.constructed = true;
    let msg = encode_der(&attrs).map_err(|_| Reject::Malformed)?;
    let sig = labeled(root, &format!("{p}.signature")).ok_or(Reject::Malformed)?;
    let sig_bytes = encode_content(sig).map_err(|_| Reject::Malformed)?;
    if !sig.is_universal(tags::OCTET_STRING) || !ee.verify(&msg, &sig_bytes) {
        return Err(Reject::CmsSignature);
    }
    Ok(content)
}

/// Checks a CRL signature with the issuing CA key.
pub fn check_crl(root: &TlvNode, ca: &RsaKey) -> Result<(), Reject> {
    let tbs = labeled(root, "crl.tbs").ok_or(Reject::Malformed)?;
    let sig = labeled(root, "crl.signature").and_then(bit_string_bytes).ok_or(Reject::Malformed)?;
    let der = encode_der(tbs).map_err(|_| Reject::Malformed)?;
    ca.verify(&der, &sig).then_some(()).ok_or(Reject::CertSignature)
}

fn uint(node: &TlvNode) -> Option<u64> {
    if !node.is_universal(tags::INTEGER) || node.value.is_empty() || node.value.len() > 9 || node.value[0] & 0x80 != 0 {
        return None;
    }
    if node.value.len() > 1 && node.value[0] == 0 && node.value[1] & 0x80 == 0 {
        return None;
    }
    Some(node.value.iter().fold(0u64, |a, &b| (a << 8) | u64::from(b)))
}

/// The VRPs of a ROA eContent. `Err(MaxLength)` for inconsistent maxLength
/// values, `Err(Payload)` for anything else malformed.
pub fn roa_vrps(econtent: &[u8]) -> Result<Vec<Vrp>, Reject> {
    let payload = crate::asn1_tree::parse_der_strict(econtent).map_err(|_| Reject::Payload)?;
    let mut fields = payload.children.iter().peekable();
    if fields.peek().is_some_and(|f| f.tag_class == TagClass::Context && f.tag_number == 0) {
        let version = fields.next().and_then(|v| v.children.first()).and_then(uint);
        if version != Some(0) {
            return Err(Reject::Payload);
        }
    }
    let asn = fields.next().and_then(uint).filter(|&a| a <= u64::from(u32::MAX)).ok_or(Reject::Payload)? as u32;
    let blocks = fields.next().filter(|b| b.is_universal(tags::SEQUENCE)).ok_or(Reject::Payload)?;
    if fields.next().is_some() || blocks.children.is_empty() {
        return Err(Reject::Payload);
    }
    let mut out = Vec::new();
    for fam in &blocks.children {
        let [afi, addrs] = &fam.children[..] else { return Err(Reject::Payload) };
        let afi = match (afi.is_universal(tags::OCTET_STRING), afi.value.as_slice()) {
            (true, [0, 1]) => 1,
            (true, [0, 2]) => 2,
            _ => return Err(Reject::Payload),
        };
        if !addrs.is_universal(tags::SEQUENCE) || addrs.children.is_empty() {
            return Err(Reject::Payload);
        }
        for a in &addrs.children {
            let (bits, max) = match &a.children[..] {
                [b] => (b, None),
                [b, m] => (b, Some(uint(m).ok_or(Reject::Payload)?)),
                _ => return Err(Reject::Payload),
            };
            if !bits.is_universal(tags::BIT_STRING) {
                return Err(Reject::Payload);
            }
            let content = encode_content(bits).map_err(|_| Reject::Payload)?;
            let prefix = IpPrefix::from_bit_string(afi, &content).ok_or(Reject::Payload)?;
            let max_len = match max {
                None => prefix.len,
                Some(m) if m >= u64::from(prefix.len) && m <= u64::from(prefix.max_len()) => m as u8,
                Some(_) => return Err(Reject::MaxLength),
            };
            out.push(Vrp { asn, prefix, max_len });
        }
    }
    Ok(out)
}

/// Manifest file list: (name, sha256) in listed order.
pub fn manifest_entries(root: &TlvNode) -> Result<Vec<(String, Vec<u8>)>, Reject> {
    let list = labeled(root, "mft.fileList").ok_or(Reject::Malformed)?;
    list.children
        .iter()
        .map(|e| match &e.children[..] {
            [name, hash] if name.is_universal(tags::IA5_STRING) => {
                let h = bit_string_bytes(hash).ok_or(Reject::Payload)?;
                let n = String::from_utf8(name.value.clone()).map_err(|_| Reject::Payload)?;
                Ok((n, h))
            }
            _ => Err(Reject::Payload),
        })
        .collect()
}

/// URI of an access description in a certificate's SIA.
pub fn sia_uri(root: &TlvNode, prefix: &str, field: &str) -> Option<String> {
    labeled(root, &format!("{prefix}.sia.{field}")).and_then(|n| String::from_utf8(n.value.clone()).ok())
}
