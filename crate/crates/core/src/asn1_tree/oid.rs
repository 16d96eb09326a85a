//! Dotted-decimal object identifiers and the ones RPKI objects use.

use super::encode::push_base128;

pub const RSA_ENCRYPTION: &str = "1.2.840.113549.1.1.1";
pub const SHA256_WITH_RSA: &str = "1.2.840.113549.1.1.11";
pub const SHA256: &str = "2.16.840.1.101.3.4.2.1";
pub const SIGNED_DATA: &str = "1.2.840.113549.1.7.2";
pub const ATTR_CONTENT_TYPE: &str = "1.2.840.113549.1.9.3";
pub const ATTR_MESSAGE_DIGEST: &str = "1.2.840.113549.1.9.4";
pub const ATTR_SIGNING_TIME: &str = "1.2.840.113549.1.9.5";
pub const CT_ROA: &str = "1.2.840.113549.1.9.16.1.24";
pub const CT_MANIFEST: &str = "1.2.840.113549.1.9.16.1.26";
pub const CT_GBR: &str = "1.2.840.113549.1.9.16.1.35";
pub const CT_ASPA: &str = "1.2.840.113549.1.9.16.1.49";
pub const COMMON_NAME: &str = "2.5.4.3";
pub const EXT_SUBJECT_KEY_ID: &str = "2.5.29.14";
pub const EXT_KEY_USAGE: &str = "2.5.29.15";
pub const EXT_BASIC_CONSTRAINTS: &str = "2.5.29.19";
pub const EXT_CRL_NUMBER: &str = "2.5.29.20";
pub const EXT_CRL_DISTRIBUTION_POINTS: &str = "2.5.29.31";
pub const EXT_CERTIFICATE_POLICIES: &str = "2.5.29.32";
pub const EXT_AUTHORITY_KEY_ID: &str = "2.5.29.35";
pub const EXT_AUTHORITY_INFO_ACCESS: &str = "1.3.6.1.5.5.7.1.1";
pub const EXT_IP_ADDR_BLOCKS: &str = "1.3.6.1.5.5.7.1.7";
pub const EXT_AS_IDENTIFIERS: &str = "1.3.6.1.5.5.7.1.8";
pub const EXT_SUBJECT_INFO_ACCESS: &str = "1.3.6.1.5.5.7.1.11";
pub const POLICY_RPKI: &str = "1.3.6.1.5.5.7.14.2";
pub const AD_CA_ISSUERS: &str = "1.3.6.1.5.5.7.48.2";
pub const AD_CA_REPOSITORY: &str = "1.3.6.1.5.5.7.48.5";
pub const AD_RPKI_MANIFEST: &str = "1.3.6.1.5.5.7.48.10";
pub const AD_SIGNED_OBJECT: &str = "1.3.6.1.5.5.7.48.11";
pub const AD_RPKI_NOTIFY: &str = "1.3.6.1.5.5.7.48.13";

/// OIDs a validator is likely to special-case; used as replacement values.
pub const KNOWN: &[&str] = &[
    RSA_ENCRYPTION,
    SHA256_WITH_RSA,
    SHA256,
    SIGNED_DATA,
    ATTR_CONTENT_TYPE,
    ATTR_MESSAGE_DIGEST,
    ATTR_SIGNING_TIME,
    CT_ROA,
    CT_MANIFEST,
    CT_GBR,
    CT_ASPA,
    COMMON_NAME,
    EXT_SUBJECT_KEY_ID,
    EXT_KEY_USAGE,
    EXT_BASIC_CONSTRAINTS,
    EXT_CRL_NUMBER,
    EXT_CRL_DISTRIBUTION_POINTS,
    EXT_CERTIFICATE_POLICIES,
    EXT_AUTHORITY_KEY_ID,
    EXT_AUTHORITY_INFO_ACCESS,
    EXT_IP_ADDR_BLOCKS,
    EXT_AS_IDENTIFIERS,
    EXT_SUBJECT_INFO_ACCESS,
    POLICY_RPKI,
    AD_SIGNED_OBJECT,
    AD_RPKI_MANIFEST,
];

/// Content octets of an OID. Panics on malformed dotted text, which only
/// appears as compile-time constants.
pub fn encode(dotted: &str) -> Vec<u8> {
    try_encode(dotted).unwrap_or_else(|| panic!("malformed OID {dotted}"))
}

pub fn try_encode(dotted: &str) -> Option<Vec<u8>> {
    let arcs: Vec<u64> = dotted.split('.').map(|a| a.parse().ok()).collect::<Option<_>>()?;
    if arcs.len() < 2 || arcs[0] > 2 || (arcs[0] < 2 && arcs[1] > 39) {
        return None;
    }
    let mut out = Vec::new();
    push_base128(&mut out, arcs[0].checked_mul(40)?.checked_add(arcs[1])?);
    for &a in &arcs[2..] {
        push_base128(&mut out, a);
    }
    Some(out)
}

/// Dotted text of OID content octets, or `None` if malformed or an arc does
/// not fit in 64 bits.
pub fn decode(bytes: &[u8]) -> Option<String> {
    if bytes.is_empty() || *bytes.last()? & 0x80 != 0 {
        return None;
    }
    let mut arcs = Vec::new();
    let mut acc: u64 = 0;
    let mut fresh = true;
    for &b in bytes {
        if fresh && b == 0x80 {
            return None;
        }
        if acc > u64::MAX >> 7 {
            return None;
        }
        acc = (acc << 7) | u64::from(b & 0x7F);
        fresh = b & 0x80 == 0;
        if fresh {
            arcs.push(acc);
            acc = 0;
        }
    }
    let first = arcs[0];
    let (a, b) = if first < 80 { (first / 40, first % 40) } else { (2, first - 80) };
    let mut s = format!("{a}.{b}");
    for arc in &arcs[1..] {
        s.push('.');
        s.push_str(&arc.to_string());
    }
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_with_rsa() {
        assert_eq!(encode(SHA256_WITH_RSA), hex::decode("2a864886f70d01010b").unwrap());
        assert_eq!(decode(&encode(CT_ROA)).unwrap(), CT_ROA);
    }

    #[test]
    fn known_round_trip() {
        for k in KNOWN {
            assert_eq!(decode(&encode(k)).as_deref(), Some(*k));
        }
    }

    #[test]
    fn malformed() {
        assert_eq!(decode(&[]), None);
        assert_eq!(decode(&[0x2A, 0x86]), None);
        assert_eq!(decode(&[0x2A, 0x80, 0x01]), None);
        assert!(try_encode("3.1").is_none());
        assert!(try_encode("1").is_none());
    }
}
