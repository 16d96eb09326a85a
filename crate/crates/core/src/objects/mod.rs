//! Builders for well-formed RPKI objects and a random generator over them.
//!
//! Builders leave key-dependent fields (public keys, key identifiers,
//! digests, signatures) as placeholders; the repair step fills them in.

mod generate;
pub mod resources;

use chrono::{DateTime, TimeZone, Utc};

use crate::asn1_tree::build::*;
use crate::asn1_tree::oid;
use crate::asn1_tree::TlvNode;
pub use generate::{generate, random_tree, roa_with_payload, GenerateError};
pub use resources::{IpPrefix, Vrp};

pub const RSA_MODULUS_BYTES: usize = 256;

/// Fixed reference time used when no clock is configured.
pub fn default_clock() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).single().expect("valid date")
}

pub fn sha256_alg() -> TlvNode {
    seq(vec![oid(oid::SHA256)])
}

pub fn sha256_rsa_alg() -> TlvNode {
    seq(vec![oid(oid::SHA256_WITH_RSA), null()])
}

pub fn rsa_alg() -> TlvNode {
    seq(vec![oid(oid::RSA_ENCRYPTION), null()])
}

pub fn name(cn: &str) -> TlvNode {
    seq(vec![set(vec![seq(vec![oid(oid::COMMON_NAME), printable(cn)])])])
}

/// SubjectPublicKeyInfo with a placeholder modulus.
pub fn placeholder_spki() -> TlvNode {
    let mut modulus = vec![0u8; RSA_MODULUS_BYTES];
    modulus[0] = 0x80;
    rsa_spki(&modulus, &[1, 0, 1])
}

pub fn rsa_spki(modulus: &[u8], exponent: &[u8]) -> TlvNode {
    seq(vec![rsa_alg(), bits_wrapping(seq(vec![unsigned(modulus), unsigned(exponent)]))])
}

fn extension(id: &str, critical: bool, value: TlvNode) -> TlvNode {
    let mut children = vec![oid(id)];
    if critical {
        children.push(boolean(true));
    }
    children.push(value);
    seq(children)
}

fn uri(u: &str) -> TlvNode {
    implicit(6, u.as_bytes().to_vec())
}

/// IP resources of a certificate.
#[derive(Clone, Debug)]
pub enum IpResources {
    Inherit,
    Prefixes(Vec<IpPrefix>),
}

/// AS resources of a certificate.
#[derive(Clone, Debug)]
pub enum AsResources {
    Inherit,
    Range(u32, u32),
}

#[derive(Clone, Debug)]
pub struct CertSpec {
    pub serial: Vec<u8>,
    pub issuer: String,
    pub subject: String,
    pub not_before: DateTime<Utc>,
    pub not_after: DateTime<Utc>,
    pub spki: TlvNode,
    pub ski: Vec<u8>,
    pub aki: Option<Vec<u8>>,
    pub ca: bool,
    pub crldp: Option<String>,
    pub aia: Option<String>,
    /// (access method OID, URI) pairs.
    pub sia: Vec<(&'static str, String)>,
    pub ip: IpResources,
    pub asn: Option<AsResources>,
}

fn ip_blocks(ip: &IpResources) -> TlvNode {
    match ip {
        IpResources::Inherit => seq(vec![
            seq(vec![octets(IpPrefix::family_octets(1)), null()]),
            seq(vec![octets(IpPrefix::family_octets(2)), null()]),
        ]),
        IpResources::Prefixes(prefixes) => {
            let mut fams = Vec::new();
            for afi in [1u8, 2] {
                let mut ps: Vec<&IpPrefix> = prefixes.iter().filter(|p| p.afi == afi).collect();
                if ps.is_empty() {
                    continue;
                }
                ps.sort();
                let addrs = ps.iter().map(|p| universal(3, p.to_bit_string())).collect();
                fams.push(seq(vec![octets(IpPrefix::family_octets(afi)), seq(addrs)]));
            }
            seq(fams)
        }
    }
}

fn as_identifiers(a: &AsResources) -> TlvNode {
    let choice = match a {
        AsResources::Inherit => null(),
        AsResources::Range(lo, hi) if lo == hi => seq(vec![integer(i64::from(*lo))]),
        AsResources::Range(lo, hi) => seq(vec![seq(vec![integer(i64::from(*lo)), integer(i64::from(*hi))])]),
    };
    seq(vec![explicit(0, vec![choice])])
}

pub fn certificate(spec: &CertSpec) -> TlvNode {
    let mut exts = Vec::new();
    if spec.ca {
        exts.push(extension(oid::EXT_BASIC_CONSTRAINTS, true, octets_wrapping(seq(vec![boolean(true)]))));
    }
    exts.push(extension(oid::EXT_SUBJECT_KEY_ID, false, octets(octet_string_der(&spec.ski))));
    if let Some(aki) = &spec.aki {
        exts.push(extension(oid::EXT_AUTHORITY_KEY_ID, false, octets_wrapping(seq(vec![implicit(0, aki.clone())]))));
    }
    let key_usage = if spec.ca { vec![0x01, 0x06] } else { vec![0x07, 0x80] };
    exts.push(extension(oid::EXT_KEY_USAGE, true, octets(der_of(&universal(3, key_usage)))));
    if let Some(crldp) = &spec.crldp {
        let dp = seq(vec![seq(vec![explicit(0, vec![explicit(0, vec![uri(crldp)])])])]);
        exts.push(extension(oid::EXT_CRL_DISTRIBUTION_POINTS, false, octets_wrapping(dp)));
    }
    if let Some(aia) = &spec.aia {
        let ad = seq(vec![seq(vec![oid(oid::AD_CA_ISSUERS), uri(aia)])]);
        exts.push(extension(oid::EXT_AUTHORITY_INFO_ACCESS, false, octets_wrapping(ad)));
    }
    if !spec.sia.is_empty() {
        let ads = spec.sia.iter().map(|(m, u)| seq(vec![oid(m), uri(u)])).collect();
        exts.push(extension(oid::EXT_SUBJECT_INFO_ACCESS, false, octets_wrapping(seq(ads))));
    }
    exts.push(extension(
        oid::EXT_CERTIFICATE_POLICIES,
        true,
        octets_wrapping(seq(vec![seq(vec![oid(oid::POLICY_RPKI)])])),
    ));
    exts.push(extension(oid::EXT_IP_ADDR_BLOCKS, true, octets_wrapping(ip_blocks(&spec.ip))));
    if let Some(a) = &spec.asn {
        exts.push(extension(oid::EXT_AS_IDENTIFIERS, true, octets_wrapping(as_identifiers(a))));
    }
    let tbs = seq(vec![
        explicit(0, vec![integer(2)]),
        unsigned(&spec.serial),
        sha256_rsa_alg(),
        name(&spec.issuer),
        seq(vec![x509_time(spec.not_before), x509_time(spec.not_after)]),
        name(&spec.subject),
        spec.spki.clone(),
        explicit(3, vec![seq(exts)]),
    ]);
    seq(vec![tbs, sha256_rsa_alg(), bits(0, &[0u8; RSA_MODULUS_BYTES])])
}

#[derive(Clone, Debug)]
pub struct CrlSpec {
    pub issuer: String,
    pub this_update: DateTime<Utc>,
    pub next_update: DateTime<Utc>,
    pub revoked: Vec<(Vec<u8>, DateTime<Utc>)>,
    pub aki: Vec<u8>,
    pub number: u64,
}

pub fn crl(spec: &CrlSpec) -> TlvNode {
    let mut tbs = vec![
        integer(1),
        sha256_rsa_alg(),
        name(&spec.issuer),
        x509_time(spec.this_update),
        x509_time(spec.next_update),
    ];
    if !spec.revoked.is_empty() {
        tbs.push(seq(spec.revoked.iter().map(|(s, t)| seq(vec![unsigned(s), x509_time(*t)])).collect()));
    }
    tbs.push(explicit(
        0,
        vec![seq(vec![
            extension(oid::EXT_AUTHORITY_KEY_ID, false, octets_wrapping(seq(vec![implicit(0, spec.aki.clone())]))),
            extension(oid::EXT_CRL_NUMBER, false, octets(der_of(&unsigned(&spec.number.to_be_bytes())))),
        ])],
    ));
    seq(vec![seq(tbs), sha256_rsa_alg(), bits(0, &[0u8; RSA_MODULUS_BYTES])])
}

/// `eContent` carrying a DER payload.
pub fn econtent_der(payload: TlvNode) -> TlvNode {
    octets_wrapping(payload)
}

/// CMS SignedData around an eContent and its EE certificate. The signed
/// attributes are emitted in DER SET OF order.
pub fn signed_object(
    content_type: &str,
    econtent: TlvNode,
    ee_cert: TlvNode,
    sid: &[u8],
    signing_time: DateTime<Utc>,
) -> TlvNode {
    let attrs = explicit(
        0,
        vec![
            seq(vec![oid(oid::ATTR_CONTENT_TYPE), set(vec![oid(content_type)])]),
            seq(vec![oid(oid::ATTR_SIGNING_TIME), set(vec![x509_time(signing_time)])]),
            seq(vec![oid(oid::ATTR_MESSAGE_DIGEST), set(vec![octets(vec![0; 32])])]),
        ],
    );
    let signer = seq(vec![
        integer(3),
        implicit(0, sid.to_vec()),
        sha256_alg(),
        attrs,
        rsa_alg(),
        octets(vec![0; RSA_MODULUS_BYTES]),
    ]);
    let signed_data = seq(vec![
        integer(3),
        set(vec![sha256_alg()]),
        seq(vec![oid(content_type), explicit(0, vec![econtent])]),
        explicit(0, vec![ee_cert]),
        set(vec![signer]),
    ]);
    seq(vec![oid(oid::SIGNED_DATA), explicit(0, vec![signed_data])])
}

/// One address family of a ROA: prefixes with optional maximum lengths.
#[derive(Clone, Debug)]
pub struct RoaFamily {
    pub afi: u8,
    pub entries: Vec<(IpPrefix, Option<u8>)>,
}

pub fn roa_payload(asid: u32, families: &[RoaFamily]) -> TlvNode {
    let fams = families
        .iter()
        .map(|f| {
            let addrs = f
                .entries
                .iter()
                .map(|(p, max)| {
                    let mut c = vec![universal(3, p.to_bit_string())];
                    if let Some(m) = max {
                        c.push(integer(i64::from(*m)));
                    }
                    seq(c)
                })
                .collect();
            seq(vec![octets(IpPrefix::family_octets(f.afi)), seq(addrs)])
        })
        .collect();
    seq(vec![integer(i64::from(asid)), seq(fams)])
}

pub fn manifest_payload(
    number: u64,
    this_update: DateTime<Utc>,
    next_update: DateTime<Utc>,
    files: &[(String, [u8; 32])],
) -> TlvNode {
    let entries = files.iter().map(|(name, hash)| seq(vec![ia5(name), bits(0, hash)])).collect();
    seq(vec![
        unsigned(&number.to_be_bytes()),
        generalized_time(this_update),
        generalized_time(next_update),
        oid(oid::SHA256),
        seq(entries),
    ])
}

pub fn aspa_payload(customer: u32, providers: &[u32]) -> TlvNode {
    let mut ps: Vec<u32> = providers.to_vec();
    ps.sort_unstable();
    ps.dedup();
    seq(vec![
        explicit(0, vec![integer(1)]),
        integer(i64::from(customer)),
        seq(ps.into_iter().map(|p| integer(i64::from(p))).collect()),
    ])
}

pub fn gbr_econtent(vcard: &str) -> TlvNode {
    octets(vcard.as_bytes().to_vec())
}

/// DER encoding of `OCTET STRING { bytes }`, used for SKI extension values.
pub fn octet_string_der(bytes: &[u8]) -> Vec<u8> {
    der_of(&octets(bytes.to_vec()))
}

fn der_of(n: &TlvNode) -> Vec<u8> {
    crate::asn1_tree::encode_der(n).expect("builder nodes encode")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::{encode_der, parse_der};

    fn spec() -> CertSpec {
        CertSpec {
            serial: vec![1],
            issuer: "issuer".into(),
            subject: "subject".into(),
            not_before: default_clock(),
            not_after: default_clock(),
            spki: placeholder_spki(),
            ski: vec![1; 20],
            aki: Some(vec![2; 20]),
            ca: false,
            crldp: Some("rsync://h/a.crl".into()),
            aia: Some("rsync://h/a.cer".into()),
            sia: vec![(oid::AD_SIGNED_OBJECT, "rsync://h/x.roa".into())],
            ip: IpResources::Inherit,
            asn: None,
        }
    }

    #[test]
    fn certificate_reparses_identically() {
        let cert = certificate(&spec());
        let der = encode_der(&cert).unwrap();
        let p = parse_der(&der);
        assert!(p.is_clean());
        assert!(p.root.structurally_eq(&cert));
        assert_eq!(encode_der(&p.root).unwrap(), der);
    }

    #[test]
    fn signed_attrs_in_der_order() {
        let so = signed_object(oid::CT_ROA, econtent_der(roa_payload(1, &[])), certificate(&spec()), &[3; 20], default_clock());
        let attrs = &so.children[1].children[0].children[4].children[0].children[3];
        let encs: Vec<Vec<u8>> = attrs.children.iter().map(|a| encode_der(a).unwrap()).collect();
        let mut sorted = encs.clone();
        sorted.sort();
        assert_eq!(encs, sorted);
    }

    #[test]
    fn crl_encodes() {
        let c = crl(&CrlSpec {
            issuer: "ca".into(),
            this_update: default_clock(),
            next_update: default_clock(),
            revoked: vec![(vec![5], default_clock())],
            aki: vec![1; 20],
            number: 7,
        });
        let der = encode_der(&c).unwrap();
        assert!(parse_der(&der).is_clean());
    }
}
