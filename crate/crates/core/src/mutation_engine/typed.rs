//! Type-aware operators. Each one produces new content for a node of a known
//! ASN.1 type without changing its tag, so the element stays well framed.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::asn1_tree::build::int_bytes;
use crate::asn1_tree::{oid, tags, TagClass, TlvNode};

/// Content type of a node as far as typed operators care.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Boolean,
    Integer,
    BitString,
    OctetString,
    Oid,
    String,
    UtcTime,
    GeneralizedTime,
    Collection,
}

impl ValueKind {
    pub fn of(node: &TlvNode) -> Option<ValueKind> {
        if node.is_opaque() || node.tag_class != TagClass::Universal {
            return None;
        }
        if node.constructed {
            return node.is_collection().then_some(ValueKind::Collection);
        }
        Some(match node.tag_number {
            tags::BOOLEAN => ValueKind::Boolean,
            tags::INTEGER | 10 => ValueKind::Integer,
            tags::BIT_STRING => ValueKind::BitString,
            tags::OCTET_STRING => ValueKind::OctetString,
            tags::OID => ValueKind::Oid,
            12 | 18 | 19 | 20 | 22 | 26 | 27 | 28 | 30 => ValueKind::String,
            tags::UTC_TIME => ValueKind::UtcTime,
            tags::GENERALIZED_TIME => ValueKind::GeneralizedTime,
            _ => return None,
        })
    }
}

macro_rules! typed_ops {
    ($($variant:ident => ($id:literal, $kind:ident)),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum TypedOp { $($variant),* }

        impl TypedOp {
            pub const ALL: &'static [TypedOp] = &[$(TypedOp::$variant),*];

            pub fn id(self) -> &'static str {
                match self { $(TypedOp::$variant => $id),* }
            }

            pub fn kind(self) -> ValueKind {
                match self { $(TypedOp::$variant => ValueKind::$kind),* }
            }
        }
    };
}

typed_ops! {
    IntZero => ("int_zero", Integer),
    IntMinusOne => ("int_minus_one", Integer),
    IntMax64 => ("int_i64_max", Integer),
    IntMin64 => ("int_i64_min", Integer),
    IntPow63 => ("int_2_pow_63", Integer),
    IntIncrement => ("int_increment", Integer),
    IntDecrement => ("int_decrement", Integer),
    IntNegate => ("int_negate", Integer),
    BoolNonDer => ("bool_non_der", Boolean),
    BoolFlip => ("bool_flip", Boolean),
    BitsUnusedOverflow => ("bits_unused_overflow", BitString),
    BitsUnusedGarbage => ("bits_unused_garbage", BitString),
    BitsUnusedNoData => ("bits_unused_no_data", BitString),
    OctetsEmpty => ("octets_empty", OctetString),
    OctetsEmbedDer => ("octets_embed_der", OctetString),
    OidArcOverflow => ("oid_arc_overflow", Oid),
    OidAppendArc => ("oid_append_arc", Oid),
    OidTruncate => ("oid_truncate", Oid),
    OidSwapKnown => ("oid_swap_known", Oid),
    StrRandomCase => ("str_random_case", String),
    StrInsertNull => ("str_insert_null", String),
    StrOverlongUtf8 => ("str_overlong_utf8", String),
    StrFormatChars => ("str_format_chars", String),
    StrInvalidCharset => ("str_invalid_charset", String),
    StrEmpty => ("str_empty", String),
    StrLong => ("str_long", String),
    TimeInvalidCalendar => ("time_invalid_calendar", UtcTime),
    TimeUnderflow => ("time_underflow", UtcTime),
    TimeOverflow => ("time_overflow", UtcTime),
    TimeDropZulu => ("time_drop_zulu", UtcTime),
    TimeFraction => ("time_fraction", UtcTime),
    TimeYearShift => ("time_year_shift", UtcTime),
    SeqDeleteChild => ("seq_delete_child", Collection),
    SeqDuplicateChild => ("seq_duplicate_child", Collection),
    SeqSwapChildren => ("seq_swap_children", Collection),
    SeqClear => ("seq_clear", Collection),
}

impl TypedOp {
    /// Whether the operator applies to a node of kind `k`. Time operators
    /// serve both time types.
    pub fn applies_to(self, k: ValueKind) -> bool {
        match self.kind() {
            ValueKind::UtcTime => matches!(k, ValueKind::UtcTime | ValueKind::GeneralizedTime),
            own => own == k,
        }
    }

    pub fn for_kind(k: ValueKind) -> Vec<TypedOp> {
        TypedOp::ALL.iter().copied().filter(|op| op.applies_to(k)).collect()
    }
}

// ---- integers --------------------------------------------------------------

/// Sign-extends to one extra octet, applies `f`, and re-minimizes.
fn twos_complement(value: &[u8], f: impl FnOnce(&mut [u8])) -> Vec<u8> {
    let negative = value.first().is_some_and(|b| b & 0x80 != 0);
    let mut wide = Vec::with_capacity(value.len() + 1);
    wide.push(if negative { 0xFF } else { 0x00 });
    wide.extend_from_slice(value);
    f(&mut wide);
    minimize(&wide)
}

fn minimize(v: &[u8]) -> Vec<u8> {
    let mut start = 0;
    while start + 1 < v.len() {
        let (b, next) = (v[start], v[start + 1]);
        if (b == 0x00 && next & 0x80 == 0) || (b == 0xFF && next & 0x80 != 0) {
            start += 1;
        } else {
            break;
        }
    }
    if v.is_empty() {
        vec![0]
    } else {
        v[start..].to_vec()
    }
}

fn add_one(v: &mut [u8]) {
    for b in v.iter_mut().rev() {
        let (r, carry) = b.overflowing_add(1);
        *b = r;
        if !carry {
            break;
        }
    }
}

fn sub_one(v: &mut [u8]) {
    for b in v.iter_mut().rev() {
        let (r, borrow) = b.overflowing_sub(1);
        *b = r;
        if !borrow {
            break;
        }
    }
}

pub fn int_increment(value: &[u8]) -> Vec<u8> {
    twos_complement(value, add_one)
}

pub fn int_decrement(value: &[u8]) -> Vec<u8> {
    twos_complement(value, sub_one)
}

pub fn int_negate(value: &[u8]) -> Vec<u8> {
    twos_complement(value, |v| {
        v.iter_mut().for_each(|b| *b = !*b);
        add_one(v);
    })
}

pub fn int_pow63() -> Vec<u8> {
    let mut v = vec![0u8; 9];
    v[1] = 0x80;
    v
}

// ---- strings ---------------------------------------------------------------

/// Toggles the case of the ASCII letter at byte `idx`.
pub fn toggle_case_at(value: &[u8], idx: usize) -> Vec<u8> {
    let mut v = value.to_vec();
    if let Some(b) = v.get_mut(idx) {
        if b.is_ascii_lowercase() {
            *b = b.to_ascii_uppercase();
        } else if b.is_ascii_uppercase() {
            *b = b.to_ascii_lowercase();
        }
    }
    v
}

pub fn insert_at(value: &[u8], pos: usize, bytes: &[u8]) -> Vec<u8> {
    let pos = pos.min(value.len());
    [&value[..pos], bytes, &value[pos..]].concat()
}

const OVERLONG_UTF8: &[&[u8]] = &[&[0xC0, 0xAF], &[0xE0, 0x80, 0xAF], &[0xC0, 0x80], &[0xF0, 0x80, 0x80, 0xAF]];
const FORMAT_CHARS: &[&[u8]] = &[b"%s", b"%n", b"%x%x%x%x", b"%p", b"%99999999s", b"{}", b"../"];
const BAD_CHARSET: &[&[u8]] = &[b"@", b"*", b"_", b"&", &[0x80], &[0xFF], &[0xC3], &[0x1B]];

// ---- times -----------------------------------------------------------------

/// Calendar-invalid YYMMDDhhmmss values.
pub const INVALID_CALENDAR: &[&str] = &[
    "990230000000",
    "250231120000",
    "251301000000",
    "250001000000",
    "250100000000",
    "250132000000",
    "250101240000",
    "250101006000",
    "250101000060",
    "230229000000",
];

fn is_generalized(value: &[u8]) -> bool {
    value.len() >= 15 && value[..14].iter().all(u8::is_ascii_digit)
}

/// Replaces the date with table entry `idx` of [`INVALID_CALENDAR`].
pub fn time_invalid_calendar(value: &[u8], idx: usize) -> Vec<u8> {
    let entry = INVALID_CALENDAR[idx % INVALID_CALENDAR.len()];
    if is_generalized(value) {
        format!("20{entry}Z").into_bytes()
    } else {
        format!("{entry}Z").into_bytes()
    }
}

pub fn time_drop_zulu(value: &[u8]) -> Vec<u8> {
    match value.last() {
        Some(b'Z') => value[..value.len() - 1].to_vec(),
        _ => value.to_vec(),
    }
}

pub fn time_fraction(value: &[u8]) -> Vec<u8> {
    let pos = if value.last() == Some(&b'Z') { value.len() - 1 } else { value.len() };
    insert_at(value, pos, b".000")
}

fn time_year_shift(value: &[u8], rng: &mut dyn rand::RngCore) -> Vec<u8> {
    let mut v = value.to_vec();
    if is_generalized(value) {
        let y = format!("{:04}", rng.gen_range(0..10000));
        v[..4].copy_from_slice(y.as_bytes());
    } else if v.len() >= 2 {
        let y = format!("{:02}", rng.gen_range(0..100));
        v[..2].copy_from_slice(y.as_bytes());
    }
    v
}

// ---- dispatch --------------------------------------------------------------

const EMBEDDED_DER: &[&[u8]] = &[
    &[0x30, 0x00],
    &[0x02, 0x01, 0xFF],
    &[0x30, 0x03, 0x02, 0x01, 0x00],
    &[0x04, 0x00],
    &[0x06, 0x03, 0x55, 0x1D, 0x0E],
    &[0x30, 0x80, 0x00, 0x00],
    &[0x31, 0x05, 0x30, 0x03, 0x06, 0x01, 0x00],
];

/// New content for a primitive node. `value` is the node's current content.
pub fn apply_value_op(op: TypedOp, value: &[u8], rng: &mut dyn rand::RngCore) -> Vec<u8> {
    use TypedOp::*;
    match op {
        IntZero => vec![0],
        IntMinusOne => vec![0xFF],
        IntMax64 => int_bytes(i64::MAX),
        IntMin64 => int_bytes(i64::MIN),
        IntPow63 => int_pow63(),
        IntIncrement => int_increment(value),
        IntDecrement => int_decrement(value),
        IntNegate => int_negate(value),
        BoolNonDer => vec![rng.gen_range(0x01..=0xFE)],
        BoolFlip => vec![if value == [0] { 0xFF } else { 0x00 }],
        BitsUnusedOverflow => {
            let mut v = if value.is_empty() { vec![0] } else { value.to_vec() };
            v[0] = rng.gen_range(8..=0xFF);
            v
        }
        BitsUnusedGarbage => {
            let unused = rng.gen_range(1..=7u8);
            let mut v = if value.len() < 2 { vec![0, 0] } else { value.to_vec() };
            v[0] = unused;
            let last = v.len() - 1;
            v[last] |= (1u8 << unused) - 1;
            v
        }
        BitsUnusedNoData => vec![rng.gen_range(1..=7)],
        OctetsEmpty | StrEmpty => Vec::new(),
        OctetsEmbedDer => EMBEDDED_DER.choose(rng).expect("non-empty").to_vec(),
        OidArcOverflow => {
            let mut v = value.to_vec();
            v.push(0x82);
            v.extend(std::iter::repeat_n(0x80, 9));
            v.push(0x00);
            v
        }
        OidAppendArc => {
            let arc = *[0u64, 1, 127, 128, 1 << 32, u64::from(rng.gen::<u32>())].choose(rng).expect("non-empty");
            let mut v = value.to_vec();
            crate::asn1_tree::encode::push_base128(&mut v, arc);
            v
        }
        OidTruncate => {
            // Drop the final arc: cut after the previous terminating octet.
            let body = value.strip_suffix(&[*value.last().unwrap_or(&0)]).unwrap_or(&[]);
            let cut = body.iter().rposition(|b| b & 0x80 == 0).map_or(0, |i| i + 1);
            value[..cut].to_vec()
        }
        OidSwapKnown => {
            let others: Vec<&&str> = oid::KNOWN.iter().filter(|k| oid::encode(k) != value).collect();
            oid::encode(others.choose(rng).expect("non-empty"))
        }
        StrRandomCase => {
            let letters: Vec<usize> =
                value.iter().enumerate().filter(|(_, b)| b.is_ascii_alphabetic()).map(|(i, _)| i).collect();
            match letters.choose(rng) {
                Some(&i) => toggle_case_at(value, i),
                None => insert_at(value, 0, b"A"),
            }
        }
        StrInsertNull => insert_at(value, rng.gen_range(0..=value.len()), &[0]),
        StrOverlongUtf8 => insert_at(value, rng.gen_range(0..=value.len()), OVERLONG_UTF8.choose(rng).expect("non-empty")),
        StrFormatChars => insert_at(value, rng.gen_range(0..=value.len()), FORMAT_CHARS.choose(rng).expect("non-empty")),
        StrInvalidCharset => insert_at(value, rng.gen_range(0..=value.len()), BAD_CHARSET.choose(rng).expect("non-empty")),
        StrLong => {
            let target = *[128usize, 256, 1024, 4096].choose(rng).expect("non-empty");
            let unit: &[u8] = if value.is_empty() { b"A" } else { value };
            unit.iter().copied().cycle().take(target.max(value.len() + 1)).collect()
        }
        TimeInvalidCalendar => time_invalid_calendar(value, rng.gen_range(0..INVALID_CALENDAR.len())),
        TimeUnderflow => {
            let table: &[&str] = if is_generalized(value) {
                &["00000101000000Z", "19691231235959Z", "16010101000000Z"]
            } else {
                &["500101000000Z", "700101000000Z", "000101000000Z"]
            };
            table.choose(rng).expect("non-empty").as_bytes().to_vec()
        }
        TimeOverflow => {
            let table: &[&str] = if is_generalized(value) {
                &["99991231235959Z", "20380119031408Z", "21060207062816Z"]
            } else {
                &["491231235959Z", "380119031408Z", "991231235959Z"]
            };
            table.choose(rng).expect("non-empty").as_bytes().to_vec()
        }
        TimeDropZulu => time_drop_zulu(value),
        TimeFraction => time_fraction(value),
        TimeYearShift => time_year_shift(value, rng),
        SeqDeleteChild | SeqDuplicateChild | SeqSwapChildren | SeqClear => value.to_vec(),
    }
}

/// Whether a collection operator can act on a node with `n` children.
pub fn collection_op_applies(op: TypedOp, n: usize) -> bool {
    match op {
        TypedOp::SeqDeleteChild | TypedOp::SeqDuplicateChild | TypedOp::SeqClear => n >= 1,
        TypedOp::SeqSwapChildren => n >= 2,
        _ => false,
    }
}

/// Applies a collection operator to a node's children.
pub fn apply_collection_op(op: TypedOp, node: &mut TlvNode, rng: &mut dyn rand::RngCore) {
    let n = node.children.len();
    match op {
        TypedOp::SeqDeleteChild if n > 0 => {
            node.children.remove(rng.gen_range(0..n));
        }
        TypedOp::SeqDuplicateChild if n > 0 => {
            let i = rng.gen_range(0..n);
            let mut copy = node.children[i].clone();
            copy.clear_labels();
            node.children.insert(i + 1, copy);
        }
        TypedOp::SeqSwapChildren if n > 1 => {
            let i = rng.gen_range(0..n);
            let j = (i + rng.gen_range(1..n)) % n;
            node.children.swap(i, j);
        }
        TypedOp::SeqClear => node.children.clear(),
        _ => {}
    }
}
