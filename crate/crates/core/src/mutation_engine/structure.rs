//! Header-level operators. They never touch content; they replace the tag or
//! length octets of one node through its overrides.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::asn1_tree::encode::{length_bytes, push_base128};
use crate::asn1_tree::{LengthOverride, TagClass, TlvNode};

pub const INTERESTING_TAGS: &[u8] = &[
    0x00, 0x1F, 0x05, 0x30, 0x31, 0xA0, 0xA3, 0x04, 0x02, 0x03, 0x06, 0x0C, 0x13, 0x17, 0x18, 0x80, 0x86, 0xFF, 0x3F,
];

/// Replacement header produced by a structure operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeaderChange {
    Tag(Vec<u8>),
    Length(LengthOverride),
}

impl HeaderChange {
    pub fn apply(&self, node: &mut TlvNode) {
        match self {
            HeaderChange::Tag(t) => node.tag_override = Some(t.clone()),
            HeaderChange::Length(l) => node.length_override = Some(l.clone()),
        }
    }

    /// Log encoding: a kind octet followed by the override bytes.
    pub fn to_parameters(&self) -> Vec<u8> {
        match self {
            HeaderChange::Tag(t) => [&[0u8][..], t].concat(),
            HeaderChange::Length(LengthOverride::Value(v)) => [&[1u8][..], &v.to_be_bytes()].concat(),
            HeaderChange::Length(LengthOverride::Raw(r)) => [&[2u8][..], r].concat(),
        }
    }

    pub fn from_parameters(p: &[u8]) -> Option<Self> {
        let (&k, rest) = p.split_first()?;
        match k {
            0 if !rest.is_empty() => Some(HeaderChange::Tag(rest.to_vec())),
            1 => Some(HeaderChange::Length(LengthOverride::Value(u64::from_be_bytes(rest.try_into().ok()?)))),
            2 if !rest.is_empty() => Some(HeaderChange::Length(LengthOverride::Raw(rest.to_vec()))),
            _ => None,
        }
    }
}

fn identifier(class: TagClass, constructed: bool, number: u64) -> Vec<u8> {
    let mut out = Vec::new();
    let low = if number < 0x1F { number as u8 } else { 0x1F };
    out.push((class.bits() << 6) | if constructed { 0x20 } else { 0 } | low);
    if number >= 0x1F {
        push_base128(&mut out, number);
    }
    out
}

pub fn tag_interesting(rng: &mut dyn rand::RngCore) -> HeaderChange {
    HeaderChange::Tag(vec![*INTERESTING_TAGS.choose(rng).expect("non-empty")])
}

/// The node's own tag in the multi-octet form a minimal encoder would never
/// use, e.g. INTEGER as `1F 02`.
pub fn tag_high_form(node: &TlvNode) -> HeaderChange {
    let first = (node.tag_class.bits() << 6) | if node.constructed { 0x20 } else { 0 } | 0x1F;
    let mut out = vec![first];
    if node.tag_number < 0x1F {
        out.push(node.tag_number as u8);
    } else {
        out.push(0x80);
        push_base128(&mut out, node.tag_number);
    }
    HeaderChange::Tag(out)
}

pub fn tag_class_flip(node: &TlvNode, rng: &mut dyn rand::RngCore) -> HeaderChange {
    let shift = rng.gen_range(1..4u8);
    let class = TagClass::from_bits(node.tag_class.bits().wrapping_add(shift));
    HeaderChange::Tag(identifier(class, node.constructed, node.tag_number))
}

pub fn len_zero() -> HeaderChange {
    HeaderChange::Length(LengthOverride::Value(0))
}

pub fn len_overlong_by(content_len: usize, claimed: u64) -> HeaderChange {
    HeaderChange::Length(LengthOverride::Value(claimed.max(content_len as u64 + 1)))
}

pub fn len_overlong(content_len: usize, rng: &mut dyn rand::RngCore) -> HeaderChange {
    let c = content_len as u64;
    let claimed = *[c + 1, c + 2, 0x80, 0xFF, 0x100, 0xFFFF, 0x10000, 0x7FFF_FFFF, 0xFFFF_FFFF]
        .choose(rng)
        .expect("non-empty");
    len_overlong_by(content_len, claimed)
}

pub fn len_underlong(content_len: usize, rng: &mut dyn rand::RngCore) -> HeaderChange {
    let c = content_len as u64;
    let claimed = if c == 0 { 0 } else { rng.gen_range(0..c) };
    HeaderChange::Length(LengthOverride::Value(claimed))
}

pub fn len_indefinite() -> HeaderChange {
    HeaderChange::Length(LengthOverride::Raw(vec![0x80]))
}

/// The true length in a longer-than-necessary long form.
pub fn len_nonminimal(content_len: usize, extra: usize) -> HeaderChange {
    let minimal = length_bytes(content_len as u64);
    let short = minimal[0] & 0x80 == 0;
    let mag: &[u8] = if short { &minimal[..] } else { &minimal[1..] };
    // Any long form of a short length is already non-minimal.
    let n = (mag.len() + extra.max(1) - usize::from(short)).min(8);
    let mut out = vec![0x80 | n as u8];
    out.extend(std::iter::repeat_n(0u8, n - mag.len()));
    out.extend_from_slice(mag);
    HeaderChange::Length(LengthOverride::Raw(out))
}
