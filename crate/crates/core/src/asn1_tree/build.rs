//! Constructors for well-formed nodes and readers for common primitive values.

use chrono::{DateTime, Datelike, Utc};

use super::node::{tags, NodeForm, TagClass, TlvNode};
use super::oid;

pub fn seq(children: Vec<TlvNode>) -> TlvNode {
    TlvNode::constructed(TagClass::Universal, tags::SEQUENCE, children)
}

pub fn set(children: Vec<TlvNode>) -> TlvNode {
    TlvNode::constructed(TagClass::Universal, tags::SET, children)
}

/// Context-specific constructed node, e.g. `[0] EXPLICIT`.
pub fn explicit(number: u64, children: Vec<TlvNode>) -> TlvNode {
    TlvNode::constructed(TagClass::Context, number, children)
}

/// Context-specific primitive node, e.g. `[6] IMPLICIT IA5String`.
pub fn implicit(number: u64, value: Vec<u8>) -> TlvNode {
    TlvNode::primitive(TagClass::Context, number, value)
}

pub fn universal(number: u64, value: Vec<u8>) -> TlvNode {
    TlvNode::primitive(TagClass::Universal, number, value)
}

pub fn oid(dotted: &str) -> TlvNode {
    universal(tags::OID, oid::encode(dotted))
}

pub fn null() -> TlvNode {
    universal(tags::NULL, Vec::new())
}

pub fn boolean(v: bool) -> TlvNode {
    universal(tags::BOOLEAN, vec![if v { 0xFF } else { 0x00 }])
}

pub fn integer(v: i64) -> TlvNode {
    universal(tags::INTEGER, int_bytes(v))
}

/// Non-negative INTEGER from big-endian magnitude bytes.
pub fn unsigned(magnitude: &[u8]) -> TlvNode {
    universal(tags::INTEGER, unsigned_bytes(magnitude))
}

pub fn octets(v: Vec<u8>) -> TlvNode {
    universal(tags::OCTET_STRING, v)
}

/// OCTET STRING wrapping one element, marked as encapsulating.
pub fn octets_wrapping(inner: TlvNode) -> TlvNode {
    TlvNode { form: NodeForm::Encapsulating, children: vec![inner], ..octets(Vec::new()) }
}

pub fn bits(unused: u8, data: &[u8]) -> TlvNode {
    let mut v = Vec::with_capacity(data.len() + 1);
    v.push(unused);
    v.extend_from_slice(data);
    universal(tags::BIT_STRING, v)
}

/// BIT STRING wrapping one element, marked as encapsulating.
pub fn bits_wrapping(inner: TlvNode) -> TlvNode {
    TlvNode { form: NodeForm::Encapsulating, children: vec![inner], ..universal(tags::BIT_STRING, vec![0]) }
}

pub fn printable(s: &str) -> TlvNode {
    universal(tags::PRINTABLE_STRING, s.as_bytes().to_vec())
}

pub fn ia5(s: &str) -> TlvNode {
    universal(tags::IA5_STRING, s.as_bytes().to_vec())
}

pub fn utf8(s: &str) -> TlvNode {
    universal(tags::UTF8_STRING, s.as_bytes().to_vec())
}

pub fn utc_time(t: DateTime<Utc>) -> TlvNode {
    universal(tags::UTC_TIME, t.format("%y%m%d%H%M%SZ").to_string().into_bytes())
}

pub fn generalized_time(t: DateTime<Utc>) -> TlvNode {
    universal(tags::GENERALIZED_TIME, t.format("%Y%m%d%H%M%SZ").to_string().into_bytes())
}

/// X.509 `Time`: UTCTime through 2049, GeneralizedTime afterwards.
pub fn x509_time(t: DateTime<Utc>) -> TlvNode {
    if t.year() < 2050 {
        utc_time(t)
    } else {
        generalized_time(t)
    }
}

/// Minimal two's-complement encoding.
pub fn int_bytes(v: i64) -> Vec<u8> {
    let bytes = v.to_be_bytes();
    let mut start = 0;
    while start < 7 {
        let (b, next) = (bytes[start], bytes[start + 1]);
        if (b == 0x00 && next & 0x80 == 0) || (b == 0xFF && next & 0x80 != 0) {
            start += 1;
        } else {
            break;
        }
    }
    bytes[start..].to_vec()
}

pub fn unsigned_bytes(magnitude: &[u8]) -> Vec<u8> {
    let trimmed: &[u8] = match magnitude.iter().position(|&b| b != 0) {
        Some(i) => &magnitude[i..],
        None => &[0],
    };
    let mut out = Vec::with_capacity(trimmed.len() + 1);
    if trimmed[0] & 0x80 != 0 {
        out.push(0);
    }
    out.extend_from_slice(trimmed);
    out
}

/// Reads INTEGER content as i64 when it fits.
pub fn read_i64(content: &[u8]) -> Option<i64> {
    if content.is_empty() || content.len() > 8 {
        return None;
    }
    let negative = content[0] & 0x80 != 0;
    let mut buf = if negative { [0xFF; 8] } else { [0; 8] };
    buf[8 - content.len()..].copy_from_slice(content);
    Some(i64::from_be_bytes(buf))
}

/// Reads non-negative INTEGER content as u64 when it fits.
pub fn read_u64(content: &[u8]) -> Option<u64> {
    if content.is_empty() || content[0] & 0x80 != 0 {
        return None;
    }
    let trimmed = if content[0] == 0 { &content[1..] } else { content };
    if trimmed.len() > 8 {
        return None;
    }
    Some(trimmed.iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::encode::encode_der;

    #[test]
    fn integers() {
        assert_eq!(int_bytes(0), [0]);
        assert_eq!(int_bytes(127), [0x7F]);
        assert_eq!(int_bytes(128), [0x00, 0x80]);
        assert_eq!(int_bytes(-1), [0xFF]);
        assert_eq!(int_bytes(-129), [0xFF, 0x7F]);
        assert_eq!(int_bytes(i64::MIN), [0x80, 0, 0, 0, 0, 0, 0, 0]);
        for v in [0, 1, -1, 255, -256, i64::MAX, i64::MIN, 65536] {
            assert_eq!(read_i64(&int_bytes(v)), Some(v));
        }
        assert_eq!(unsigned_bytes(&[0, 0, 0x80]), [0x00, 0x80]);
        assert_eq!(read_u64(&[0x00, 0xFF]), Some(255));
    }

    #[test]
    fn times() {
        let t = DateTime::parse_from_rfc3339("2025-01-01T00:00:00Z").unwrap().with_timezone(&Utc);
        assert_eq!(utc_time(t).value, b"250101000000Z");
        assert_eq!(generalized_time(t).value, b"20250101000000Z");
        let late = DateTime::parse_from_rfc3339("2051-01-01T00:00:00Z").unwrap().with_timezone(&Utc);
        assert_eq!(x509_time(late).tag_number, tags::GENERALIZED_TIME);
    }

    #[test]
    fn wrapping_encodes_inline() {
        let n = bits_wrapping(seq(vec![integer(7)]));
        assert_eq!(encode_der(&n).unwrap(), [0x03, 0x06, 0x00, 0x30, 0x03, 0x02, 0x01, 0x07]);
    }
}
