use chrono::Duration;
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::asn1_tree::{label_tree, schema_for, TagClass};
use crate::kind::ObjectKind;

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("no generator for {0} objects")]
    Unsupported(ObjectKind),
}

const PLACEHOLDER_BASE: &str = "rsync://localhost/repo/fuzz-ca/";

fn random_len_bytes(rng: &mut impl Rng, range: std::ops::Range<usize>) -> Vec<u8> {
    let n = rng.gen_range(range);
    random_bytes(rng, n)
}

fn random_bytes(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill(&mut v[..]);
    v
}

fn random_name(rng: &mut impl Rng) -> String {
    hex::encode(random_bytes(rng, 8))
}

fn random_prefix(rng: &mut impl Rng, afi: u8) -> IpPrefix {
    if afi == 1 {
        let len = rng.gen_range(8..=24);
        IpPrefix::new(1, &random_bytes(rng, 4), len)
    } else {
        let mut addr = random_bytes(rng, 16);
        addr[0] = 0x20;
        let len = rng.gen_range(16..=48);
        IpPrefix::new(2, &addr, len)
    }
}

fn ee_cert(rng: &mut impl Rng, file: &str) -> TlvNode {
    let clock = default_clock();
    certificate(&CertSpec {
        serial: random_bytes(rng, 8),
        issuer: "fuzz-ca".into(),
        subject: random_name(rng),
        not_before: clock - Duration::days(1),
        not_after: clock + Duration::days(rng.gen_range(30..3650)),
        spki: placeholder_spki(),
        ski: random_bytes(rng, 20),
        aki: Some(random_bytes(rng, 20)),
        ca: false,
        crldp: Some(format!("{PLACEHOLDER_BASE}fuzz-ca.crl")),
        aia: Some("rsync://localhost/repo/ta/fuzz-ca.cer".into()),
        sia: vec![(oid::AD_SIGNED_OBJECT, format!("{PLACEHOLDER_BASE}{file}"))],
        ip: IpResources::Inherit,
        asn: Some(AsResources::Inherit),
    })
}

fn wrap(rng: &mut impl Rng, content_type: &str, econtent: TlvNode, ext: &str) -> TlvNode {
    let file = format!("{}.{ext}", random_name(rng));
    let ee = ee_cert(rng, &file);
    let sid = random_bytes(rng, 20);
    signed_object(content_type, econtent, ee, &sid, default_clock())
}

pub fn random_roa_payload(rng: &mut impl Rng) -> TlvNode {
    let mut families = Vec::new();
    for afi in [1u8, 2] {
        if afi == 2 && !families.is_empty() && rng.gen_bool(0.5) {
            continue;
        }
        let n = rng.gen_range(1..=4);
        let entries = (0..n)
            .map(|_| {
                let p = random_prefix(rng, afi);
                let max = rng.gen_bool(0.6).then(|| rng.gen_range(p.len..=p.max_len().min(p.len + 8)));
                (p, max)
            })
            .collect();
        families.push(RoaFamily { afi, entries });
    }
    let asid = if rng.gen_bool(0.5) { rng.gen_range(64512..=65534) } else { rng.gen() };
    roa_payload(asid, &families)
}

/// A labeled, unsigned ROA carrying `payload` (see [`roa_payload`]).
pub fn roa_with_payload(rng: &mut impl Rng, payload: TlvNode) -> TlvNode {
    let mut tree = wrap(rng, oid::CT_ROA, econtent_der(payload), "roa");
    label_tree(&mut tree, schema_for(ObjectKind::Roa));
    tree
}

/// A fresh, labeled, unsigned object of the given kind.
pub fn generate(kind: ObjectKind, rng: &mut impl Rng) -> Result<TlvNode, GenerateError> {
    let clock = default_clock();
    let mut tree = match kind {
        ObjectKind::Roa => {
            let payload = random_roa_payload(rng);
            wrap(rng, oid::CT_ROA, econtent_der(payload), "roa")
        }
        ObjectKind::Manifest => {
            let files: Vec<(String, [u8; 32])> = (0..rng.gen_range(1..=6))
                .map(|_| {
                    let ext = ["roa", "crl", "cer", "asa"].choose(rng).copied().unwrap_or("roa");
                    (format!("{}.{ext}", random_name(rng)), rng.gen())
                })
                .collect();
            let payload = manifest_payload(rng.gen_range(1..1_000_000), clock, clock + Duration::days(1), &files);
            wrap(rng, oid::CT_MANIFEST, econtent_der(payload), "mft")
        }
        ObjectKind::Aspa => {
            let providers: Vec<u32> = (0..rng.gen_range(1..=5)).map(|_| rng.gen()).collect();
            let customer = rng.gen();
            wrap(rng, oid::CT_ASPA, econtent_der(aspa_payload(customer, &providers)), "asa")
        }
        ObjectKind::Gbr => {
            let vcard = format!(
                "BEGIN:VCARD\r\nVERSION:4.0\r\nFN:{}\r\nEMAIL:noc@example.net\r\nEND:VCARD\r\n",
                random_name(rng)
            );
            wrap(rng, oid::CT_GBR, gbr_econtent(&vcard), "gbr")
        }
        ObjectKind::Crl => {
            let revoked = (0..rng.gen_range(0..=3)).map(|_| (random_bytes(rng, 8), clock)).collect();
            crl(&CrlSpec {
                issuer: "fuzz-ca".into(),
                this_update: clock,
                next_update: clock + Duration::days(1),
                revoked,
                aki: random_bytes(rng, 20),
                number: rng.gen_range(1..1_000_000),
            })
        }
        ObjectKind::CaCertificate => {
            let name = random_name(rng);
            let repo = format!("{PLACEHOLDER_BASE}{name}/");
            certificate(&CertSpec {
                serial: random_bytes(rng, 8),
                issuer: "fuzz-ca".into(),
                subject: name.clone(),
                not_before: clock - Duration::days(1),
                not_after: clock + Duration::days(365),
                spki: placeholder_spki(),
                ski: random_bytes(rng, 20),
                aki: Some(random_bytes(rng, 20)),
                ca: true,
                crldp: Some(format!("{PLACEHOLDER_BASE}fuzz-ca.crl")),
                aia: Some("rsync://localhost/repo/ta/fuzz-ca.cer".into()),
                sia: vec![
                    (oid::AD_CA_REPOSITORY, repo.clone()),
                    (oid::AD_RPKI_MANIFEST, format!("{repo}{name}.mft")),
                ],
                ip: IpResources::Prefixes(vec![random_prefix(rng, 1)]),
                asn: Some(AsResources::Range(64512, 65534)),
            })
        }
        ObjectKind::EeCertificate => {
            let file = format!("{}.cer", random_name(rng));
            ee_cert(rng, &file)
        }
        ObjectKind::Generic => random_tree(rng, 5),
        ObjectKind::Tal => return Err(GenerateError::Unsupported(kind)),
    };
    label_tree(&mut tree, schema_for(kind));
    Ok(tree)
}

/// A random canonical DER tree of bounded depth, for schema-free testing.
pub fn random_tree(rng: &mut impl Rng, depth: usize) -> TlvNode {
    if depth == 0 || rng.gen_bool(0.35) {
        return random_primitive(rng);
    }
    let n = rng.gen_range(0..=5);
    let children = (0..n).map(|_| random_tree(rng, depth - 1)).collect();
    match rng.gen_range(0..4) {
        0 => set(children),
        1 => explicit(rng.gen_range(0..4), children),
        2 => TlvNode::constructed(TagClass::Application, rng.gen_range(0..40), children),
        _ => seq(children),
    }
}

fn random_primitive(rng: &mut impl Rng) -> TlvNode {
    match rng.gen_range(0..10) {
        0 => boolean(rng.gen()),
        1 => integer(rng.gen()),
        2 => bits(rng.gen_range(0..8), &random_len_bytes(rng, 1..40)),
        3 => octets(random_len_bytes(rng, 0..300)),
        4 => null(),
        5 => oid(oid::KNOWN.choose(rng).expect("non-empty")),
        6 => printable(&random_name(rng)),
        7 => utc_time(default_clock() + Duration::seconds(rng.gen_range(0..1_000_000_000))),
        8 => implicit(rng.gen_range(0..100), random_len_bytes(rng, 0..20)),
        _ => ia5(&format!("rsync://{}.example/", random_name(rng))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::{encode_der, find_by_label, parse_der};
    use rand::SeedableRng;

    #[test]
    fn generated_objects_round_trip_and_label() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for kind in ObjectKind::ALL {
            if kind == ObjectKind::Tal {
                assert!(generate(kind, &mut rng).is_err());
                continue;
            }
            for _ in 0..20 {
                let t = generate(kind, &mut rng).unwrap();
                let der = encode_der(&t).unwrap();
                let p = parse_der(&der);
                assert!(p.is_clean(), "{kind}: {:?}", p.anomalies);
                assert!(p.root.structurally_eq(&t), "{kind}");
            }
        }
        let roa = generate(ObjectKind::Roa, &mut rng).unwrap();
        for label in ["roa.eContent", "roa.eeCert.subjectPublicKeyInfo", "roa.signature", "roa.messageDigest", "roa.asID"] {
            assert!(find_by_label(&roa, label).is_some(), "{label}");
        }
    }
}
