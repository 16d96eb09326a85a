//! Content-agnostic byte operators in the style of AFL havoc stages.

use rand::seq::SliceRandom;
use rand::Rng;

macro_rules! byte_ops {
    ($($variant:ident => $id:literal),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum ByteOp { $($variant),* }

        impl ByteOp {
            pub const ALL: &'static [ByteOp] = &[$(ByteOp::$variant),*];

            pub fn id(self) -> &'static str {
                match self { $(ByteOp::$variant => $id),* }
            }
        }
    };
}

byte_ops! {
    BitFlip => "byte_bit_flip",
    InsertRandom => "byte_insert_random",
    DeleteRange => "byte_delete_range",
    DuplicateRange => "byte_duplicate_range",
    ZeroFill => "byte_zero_fill",
    OnesFill => "byte_ff_fill",
    ShuffleRange => "byte_shuffle_range",
    Truncate => "byte_truncate",
    ExtendRandom => "byte_extend_random",
    RepeatValue => "byte_repeat_value",
    SwapHalves => "byte_swap_halves",
    InterestingByte => "byte_interesting_8",
    InterestingWord => "byte_interesting_16",
    InterestingDword => "byte_interesting_32",
    IncrementByte => "byte_increment",
}

const INTERESTING_8: &[u8] = &[0x00, 0x01, 0x7F, 0x80, 0xFF, 0x10, 0x20, 0x40, 0x64];
const INTERESTING_16: &[u16] = &[0x0000, 0x0080, 0x00FF, 0x0100, 0x7FFF, 0x8000, 0xFFFF, 0x0400, 0x1000];
const INTERESTING_32: &[u32] = &[0, 0x7FFF_FFFF, 0x8000_0000, 0xFFFF_FFFF, 0x0001_0000, 0x0000_FFFF, 0x00FF_FFFF];

/// Flips bit `bit` of byte `index`; bit 0 is the most significant.
pub fn flip_bit(value: &[u8], index: usize, bit: u8) -> Vec<u8> {
    let mut v = value.to_vec();
    if let Some(b) = v.get_mut(index) {
        *b ^= 0x80 >> (bit & 7);
    }
    v
}

fn range(rng: &mut dyn rand::RngCore, len: usize) -> (usize, usize) {
    let start = rng.gen_range(0..len);
    let max = (len - start).min(32);
    (start, start + rng.gen_range(1..=max))
}

fn random_bytes(rng: &mut dyn rand::RngCore, n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    rng.fill_bytes(&mut v);
    v
}

fn put(v: &mut [u8], at: usize, bytes: &[u8]) {
    let n = bytes.len().min(v.len() - at);
    v[at..at + n].copy_from_slice(&bytes[..n]);
}

/// Applies a byte operator. Operators that need existing bytes insert random
/// bytes into empty values instead.
pub fn apply_byte_op(op: ByteOp, value: &[u8], rng: &mut dyn rand::RngCore) -> Vec<u8> {
    use ByteOp::*;
    let len = value.len();
    if len == 0 && !matches!(op, InsertRandom | ExtendRandom) {
        let n = rng.gen_range(1..=4);
        return random_bytes(rng, n);
    }
    let mut v = value.to_vec();
    match op {
        BitFlip => flip_bit(value, rng.gen_range(0..len), rng.gen_range(0..8)),
        InsertRandom => {
            let pos = rng.gen_range(0..=len);
            let n = rng.gen_range(1..=8);
            let bytes = random_bytes(rng, n);
            v.splice(pos..pos, bytes);
            v
        }
        DeleteRange => {
            let (a, b) = range(rng, len);
            v.drain(a..b);
            v
        }
        DuplicateRange => {
            let (a, b) = range(rng, len);
            let chunk = v[a..b].to_vec();
            v.splice(b..b, chunk);
            v
        }
        ZeroFill | OnesFill => {
            let (a, b) = range(rng, len);
            v[a..b].fill(if op == ZeroFill { 0x00 } else { 0xFF });
            v
        }
        ShuffleRange => {
            let (a, b) = range(rng, len);
            v[a..b].shuffle(rng);
            v
        }
        Truncate => {
            v.truncate(rng.gen_range(0..len));
            v
        }
        ExtendRandom => {
            let n = rng.gen_range(1..=64);
            v.extend(random_bytes(rng, n));
            v
        }
        RepeatValue => {
            let times = rng.gen_range(2..=4);
            value.repeat(times)
        }
        SwapHalves => {
            v.rotate_left(len / 2);
            v
        }
        InterestingByte => {
            let at = rng.gen_range(0..len);
            v[at] = *INTERESTING_8.choose(rng).expect("non-empty");
            v
        }
        InterestingWord => {
            let at = rng.gen_range(0..len);
            let w = INTERESTING_16.choose(rng).expect("non-empty");
            let bytes = if rng.gen_bool(0.5) { w.to_be_bytes() } else { w.to_le_bytes() };
            put(&mut v, at, &bytes);
            v
        }
        InterestingDword => {
            let at = rng.gen_range(0..len);
            let d = INTERESTING_32.choose(rng).expect("non-empty");
            let bytes = if rng.gen_bool(0.5) { d.to_be_bytes() } else { d.to_le_bytes() };
            put(&mut v, at, &bytes);
            v
        }
        IncrementByte => {
            let at = rng.gen_range(0..len);
            v[at] = v[at].wrapping_add(if rng.gen_bool(0.5) { 1 } else { 0xFF });
            v
        }
    }
}
