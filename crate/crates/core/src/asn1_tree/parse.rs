use std::fmt;

use super::node::{tags, LengthOverride, NodeForm, TagClass, TlvNode};

/// Nesting beyond this depth is kept as opaque bytes.
pub const MAX_DEPTH: usize = 64;
/// Inputs larger than this are kept as a single opaque node.
pub const MAX_INPUT: usize = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    EmptyInput,
    TruncatedHeader,
    LengthExceedsContent,
    IndefiniteLength,
    ReservedLength,
    LengthTooLarge,
    TagNumberTooLarge,
    NonMinimalLength,
    NonMinimalTag,
    DepthLimit,
    SizeLimit,
    TrailingBytes,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::EmptyInput => "empty input",
            AnomalyKind::TruncatedHeader => "truncated header",
            AnomalyKind::LengthExceedsContent => "length exceeds available content",
            AnomalyKind::IndefiniteLength => "indefinite length",
            AnomalyKind::ReservedLength => "reserved length octet",
            AnomalyKind::LengthTooLarge => "length field too large",
            AnomalyKind::TagNumberTooLarge => "tag number too large",
            AnomalyKind::NonMinimalLength => "non-minimal length encoding",
            AnomalyKind::NonMinimalTag => "non-minimal tag encoding",
            AnomalyKind::DepthLimit => "nesting depth limit",
            AnomalyKind::SizeLimit => "input size limit",
            AnomalyKind::TrailingBytes => "trailing bytes after root element",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Anomaly {
    pub offset: usize,
    pub kind: AnomalyKind,
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.kind, self.offset)
    }
}

#[derive(Clone, Debug)]
pub struct Parsed {
    pub root: TlvNode,
    pub anomalies: Vec<Anomaly>,
}

impl Parsed {
    pub fn is_clean(&self) -> bool {
        self.anomalies.is_empty()
    }
}

/// Parses arbitrary bytes into a tree. Never fails: malformed regions become
/// opaque nodes and are reported as anomalies. Bytes after the root element
/// are reported and dropped.
pub fn parse_der(input: &[u8]) -> Parsed {
    let mut p = Parser { input, anomalies: Vec::new() };
    if input.is_empty() {
        p.flag(0, AnomalyKind::EmptyInput);
        return Parsed { root: TlvNode::opaque(Vec::new()), anomalies: p.anomalies };
    }
    if input.len() > MAX_INPUT {
        p.flag(0, AnomalyKind::SizeLimit);
        return Parsed { root: TlvNode::opaque(input.to_vec()), anomalies: p.anomalies };
    }
    let (root, end) = p.element(0, input.len(), 0);
    if end < input.len() {
        p.flag(end, AnomalyKind::TrailingBytes);
    }
    Parsed { root, anomalies: p.anomalies }
}

/// Parses and rejects any anomaly.
pub fn parse_der_strict(input: &[u8]) -> Result<TlvNode, Anomaly> {
    let parsed = parse_der(input);
    match parsed.anomalies.into_iter().next() {
        Some(a) => Err(a),
        None => Ok(parsed.root),
    }
}

struct Header {
    class: TagClass,
    constructed: bool,
    number: u64,
    tag_raw: Option<Vec<u8>>,
    len_raw: Option<Vec<u8>>,
    content_start: usize,
    content_len: usize,
}

struct Parser<'a> {
    input: &'a [u8],
    anomalies: Vec<Anomaly>,
}

impl Parser<'_> {
    fn flag(&mut self, offset: usize, kind: AnomalyKind) {
        self.anomalies.push(Anomaly { offset, kind });
    }

    fn header(&mut self, pos: usize, end: usize) -> Result<Header, AnomalyKind> {
        let buf = self.input;
        let first = buf[pos];
        let class = TagClass::from_bits(first >> 6);
        let constructed = first & 0x20 != 0;
        let mut i = pos + 1;
        let mut number = u64::from(first & 0x1F);
        let mut tag_raw = None;
        if number == 0x1F {
            number = 0;
            loop {
                if i >= end {
                    return Err(AnomalyKind::TruncatedHeader);
                }
                let c = buf[i];
                if number > u64::MAX >> 7 {
                    return Err(AnomalyKind::TagNumberTooLarge);
                }
                number = (number << 7) | u64::from(c & 0x7F);
                i += 1;
                if c & 0x80 == 0 {
                    break;
                }
            }
            // Canonical high tags re-encode identically; only non-minimal
            // forms need to be carried verbatim.
            if buf[pos + 1] == 0x80 || number < 0x1F {
                self.flag(pos, AnomalyKind::NonMinimalTag);
                tag_raw = Some(buf[pos..i].to_vec());
            }
        }
        if i >= end {
            return Err(AnomalyKind::TruncatedHeader);
        }
        let l = buf[i];
        i += 1;
        let mut len_raw = None;
        let content_len = match l {
            0x00..=0x7F => usize::from(l),
            0x80 => return Err(AnomalyKind::IndefiniteLength),
            0xFF => return Err(AnomalyKind::ReservedLength),
            _ => {
                let n = usize::from(l & 0x7F);
                if n > 8 {
                    return Err(AnomalyKind::LengthTooLarge);
                }
                if i + n > end {
                    return Err(AnomalyKind::TruncatedHeader);
                }
                let v = buf[i..i + n].iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b));
                if buf[i] == 0 || v < 0x80 {
                    self.flag(pos, AnomalyKind::NonMinimalLength);
                    len_raw = Some(buf[i - 1..i + n].to_vec());
                }
                i += n;
                usize::try_from(v).map_err(|_| AnomalyKind::LengthExceedsContent)?
            }
        };
        if content_len > end - i {
            return Err(AnomalyKind::LengthExceedsContent);
        }
        Ok(Header { class, constructed, number, tag_raw, len_raw, content_start: i, content_len })
    }

    /// Parses one element in `[pos, end)`, returning it and the offset after it.
    fn element(&mut self, pos: usize, end: usize, depth: usize) -> (TlvNode, usize) {
        let h = match self.header(pos, end) {
            Ok(h) => h,
            Err(kind) => {
                self.flag(pos, kind);
                return (TlvNode::opaque(self.input[pos..end].to_vec()), end);
            }
        };
        let content_end = h.content_start + h.content_len;
        if depth >= MAX_DEPTH {
            self.flag(pos, AnomalyKind::DepthLimit);
            return (TlvNode::opaque(self.input[pos..content_end].to_vec()), content_end);
        }
        let breaking = h.tag_raw.is_some() || h.len_raw.is_some();
        let mut node = TlvNode {
            tag_override: h.tag_raw,
            length_override: h.len_raw.map(LengthOverride::Raw),
            breaking,
            ..TlvNode::primitive(h.class, h.number, Vec::new())
        };
        node.constructed = h.constructed;
        if h.constructed {
            let mut p = h.content_start;
            while p < content_end {
                let (child, next) = self.element(p, content_end, depth + 1);
                node.children.push(child);
                p = next;
            }
        } else {
            let content = &self.input[h.content_start..content_end];
            if let Some((prefix, inner)) = self.encapsulated(&node, content, depth) {
                node.value = prefix;
                node.children.push(inner);
                node.form = NodeForm::Encapsulating;
            } else {
                node.value = content.to_vec();
            }
        }
        (node, content_end)
    }

    /// Detects an OCTET STRING or BIT STRING whose content is exactly one
    /// clean universal SEQUENCE or SET.
    fn encapsulated(&self, node: &TlvNode, content: &[u8], depth: usize) -> Option<(Vec<u8>, TlvNode)> {
        if node.tag_class != TagClass::Universal || node.tag_override.is_some() {
            return None;
        }
        let prefix_len = match node.tag_number {
            tags::OCTET_STRING => 0,
            tags::BIT_STRING if content.first() == Some(&0) => 1,
            _ => return None,
        };
        let body = &content[prefix_len..];
        if body.len() < 2 || !matches!(body[0], 0x30 | 0x31) {
            return None;
        }
        let mut sub = Parser { input: body, anomalies: Vec::new() };
        let (inner, end) = sub.element(0, body.len(), depth + 1);
        if end != body.len() || !sub.anomalies.is_empty() || has_tag_override(&inner) {
            return None;
        }
        Some((content[..prefix_len].to_vec(), inner))
    }
}

fn has_tag_override(n: &TlvNode) -> bool {
    n.tag_override.is_some() || n.children.iter().any(has_tag_override)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::encode::encode_der;

    #[test]
    fn simple_sequence() {
        let p = parse_der(&[0x30, 0x03, 0x02, 0x01, 0x05]);
        assert!(p.is_clean());
        assert!(p.root.constructed);
        assert_eq!(p.root.tag_number, 16);
        assert_eq!(p.root.children.len(), 1);
        assert_eq!(p.root.children[0].value, vec![5]);
    }

    #[test]
    fn overlong_length_becomes_opaque() {
        let input = [0x30, 0x05, 0x02, 0x01, 0x05];
        let p = parse_der(&input);
        assert!(p.root.is_opaque());
        assert_eq!(p.root.value, input);
        assert_eq!(p.anomalies[0].kind, AnomalyKind::LengthExceedsContent);
        assert_eq!(p.anomalies[0].kind.to_string(), "length exceeds available content");
        assert_eq!(encode_der(&p.root).unwrap(), input);
    }

    #[test]
    fn empty_input() {
        let p = parse_der(&[]);
        assert!(p.root.is_opaque());
        assert_eq!(p.anomalies[0].kind, AnomalyKind::EmptyInput);
        assert!(encode_der(&p.root).unwrap().is_empty());
    }

    #[test]
    fn non_minimal_length_kept_raw() {
        let input = [0x04, 0x81, 0x02, 0xAA, 0xBB];
        let p = parse_der(&input);
        assert_eq!(p.anomalies[0].kind, AnomalyKind::NonMinimalLength);
        assert_eq!(p.root.length_override, Some(LengthOverride::Raw(vec![0x81, 0x02])));
        assert!(p.root.breaking);
        assert_eq!(encode_der(&p.root).unwrap(), input);
    }

    #[test]
    fn high_tag_kept_verbatim() {
        let input = [0x1F, 0x02, 0x01, 0x2A];
        let p = parse_der(&input);
        assert_eq!(p.root.tag_number, 2);
        assert_eq!(p.root.tag_override.as_deref(), Some(&[0x1F, 0x02][..]));
        assert_eq!(encode_der(&p.root).unwrap(), input);
        let big = [0x9F, 0x81, 0x00, 0x00];
        let p = parse_der(&big);
        assert!(p.is_clean());
        assert_eq!(p.root.tag_number, 128);
        assert_eq!(p.root.tag_class, TagClass::Context);
    }

    #[test]
    fn indefinite_length_is_opaque() {
        let input = [0x30, 0x80, 0x02, 0x01, 0x01, 0x00, 0x00];
        let p = parse_der(&input);
        assert!(p.root.is_opaque());
        assert_eq!(p.anomalies[0].kind, AnomalyKind::IndefiniteLength);
        assert_eq!(encode_der(&p.root).unwrap(), input);
    }

    #[test]
    fn bad_child_degrades_only_the_rest_of_its_parent() {
        let input = [0x30, 0x06, 0x02, 0x01, 0x05, 0x04, 0x09, 0xAA];
        let p = parse_der(&input);
        assert_eq!(p.root.children.len(), 2);
        assert!(!p.root.children[0].is_opaque());
        assert!(p.root.children[1].is_opaque());
        assert_eq!(encode_der(&p.root).unwrap(), input);
    }

    #[test]
    fn encapsulated_octet_and_bit_strings() {
        let octets = [0x04, 0x05, 0x30, 0x03, 0x02, 0x01, 0x07];
        let p = parse_der(&octets);
        assert_eq!(p.root.form, NodeForm::Encapsulating);
        assert_eq!(p.root.children[0].children[0].value, vec![7]);
        assert_eq!(encode_der(&p.root).unwrap(), octets);

        let bits = [0x03, 0x06, 0x00, 0x30, 0x03, 0x02, 0x01, 0x07];
        let p = parse_der(&bits);
        assert_eq!(p.root.form, NodeForm::Encapsulating);
        assert_eq!(p.root.value, vec![0]);
        assert_eq!(encode_der(&p.root).unwrap(), bits);

        // Almost-DER content stays a plain value.
        let near = [0x04, 0x05, 0x30, 0x04, 0x02, 0x01, 0x07];
        let p = parse_der(&near);
        assert_eq!(p.root.form, NodeForm::Plain);
        assert_eq!(encode_der(&p.root).unwrap(), near);
    }

    #[test]
    fn depth_limit() {
        let mut input = vec![0x05, 0x00];
        for _ in 0..100 {
            let mut outer = vec![0x30];
            crate::asn1_tree::encode::push_length(&mut outer, input.len() as u64);
            outer.extend_from_slice(&input);
            input = outer;
        }
        let p = parse_der(&input);
        assert!(p.anomalies.iter().any(|a| a.kind == AnomalyKind::DepthLimit));
        assert_eq!(p.root.depth(), MAX_DEPTH + 1);
        assert_eq!(encode_der(&p.root).unwrap(), input);
    }

    #[test]
    fn trailing_bytes_reported() {
        let p = parse_der(&[0x05, 0x00, 0xFF]);
        assert_eq!(p.anomalies[0].kind, AnomalyKind::TrailingBytes);
        assert_eq!(encode_der(&p.root).unwrap(), [0x05, 0x00]);
    }
}
