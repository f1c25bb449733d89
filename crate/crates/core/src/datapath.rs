//! Functional and bit-level models of the extended multiplier datapath.
//!
//! The bank holds four signed 17x17-bit multipliers feeding a 34-bit
//! accumulator. One `nn_mac` occupies one core cycle, which the multi-pumped
//! ALU splits into two fast cycles.
//!
//! Lane `k` of a packed word occupies bits `[k*w, (k+1)*w)`; lane 0 sits in
//! the least-significant bits. Weights are signed lanes and activations are
//! unsigned lanes. One instruction pairs lanes `0..P` of both operands with
//! `P = 32 / max(weight_bits, activation_bits)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{BitWidth, PrecisionConfig};

/// Multipliers in the extended bank (three baseline units plus one added).
pub const NUM_MULTIPLIERS: usize = 4;
/// Operand width of each multiplier.
pub const MULTIPLIER_BITS: u32 = 17;
/// Internal accumulator width.
pub const ACCUMULATOR_BITS: u32 = 34;
/// Fast cycles per core cycle.
pub const FAST_CYCLES: usize = 2;

/// Width of an int2 x int8 product.
pub const SOFT_SIMD_PRODUCT_BITS: u32 = 10;
/// Products sharing one accumulator field in soft-SIMD mode.
pub const SOFT_SIMD_ACCUMULATIONS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatapathError {
    #[error("value {value} does not fit a {bits}-bit {signedness:?} lane")]
    LaneOverflow { value: i64, bits: u32, signedness: Signedness },
    #[error("{count} values exceed the {lanes} lanes of a word")]
    TooManyValues { count: usize, lanes: usize },
    #[error("packed operand widths w{weight}/a{activation} disagree with {cfg}")]
    ConfigMismatch { cfg: PrecisionConfig, weight: u32, activation: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signedness {
    Signed,
    Unsigned,
}

/// Inclusive value range of a lane.
pub fn lane_range(width: BitWidth, signedness: Signedness) -> (i32, i32) {
    let bits = width.bits();
    match signedness {
        Signedness::Signed => (-(1 << (bits - 1)), (1 << (bits - 1)) - 1),
        Signedness::Unsigned => (0, (1 << bits) - 1),
    }
}

/// A 32-bit register image holding 4, 8 or 16 lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PackedWord {
    pub raw: u32,
    pub width: BitWidth,
    pub signedness: Signedness,
}

impl PackedWord {
    pub fn new(raw: u32, width: BitWidth, signedness: Signedness) -> Self {
        Self { raw, width, signedness }
    }

    pub fn lanes(&self) -> usize {
        self.width.lanes()
    }

    pub fn lane(&self, k: usize) -> i32 {
        let bits = self.width.bits();
        let field = (self.raw >> (k as u32 * bits)) & ((1 << bits) - 1);
        match self.signedness {
            Signedness::Unsigned => field as i32,
            Signedness::Signed => {
                let shift = 32 - bits;
                ((field << shift) as i32) >> shift
            }
        }
    }

    pub fn unpack(&self) -> Vec<i32> {
        (0..self.lanes()).map(|k| self.lane(k)).collect()
    }
}

/// Packs values into lanes, lane 0 first. Missing lanes are zero.
pub fn pack(values: &[i32], width: BitWidth, signedness: Signedness) -> Result<PackedWord, DatapathError> {
    let lanes = width.lanes();
    if values.len() > lanes {
        return Err(DatapathError::TooManyValues { count: values.len(), lanes });
    }
    let (lo, hi) = lane_range(width, signedness);
    let bits = width.bits();
    let mask = (1u32 << bits) - 1;
    let mut raw = 0u32;
    for (k, &v) in values.iter().enumerate() {
        if v < lo || v > hi {
            return Err(DatapathError::LaneOverflow { value: v as i64, bits, signedness });
        }
        raw |= ((v as u32) & mask) << (k as u32 * bits);
    }
    Ok(PackedWord::new(raw, width, signedness))
}

pub fn unpack(word: PackedWord) -> Vec<i32> {
    word.unpack()
}

fn fits_signed(value: i64, bits: u32) -> bool {
    let lim = 1i64 << (bits - 1);
    (-lim..lim).contains(&value)
}

/// One signed 17x17-bit multiplier producing a 34-bit product.
pub fn mul17(a: i64, b: i64) -> i64 {
    debug_assert!(fits_signed(a, MULTIPLIER_BITS), "operand {a} exceeds 17 bits");
    debug_assert!(fits_signed(b, MULTIPLIER_BITS), "operand {b} exceeds 17 bits");
    let p = a * b;
    debug_assert!(fits_signed(p, ACCUMULATOR_BITS));
    p
}

/// 32x32 -> low 32 bits through three 17-bit partial products.
///
/// The operands are split into 16-bit halves zero-extended to 17 bits. The
/// high-high product only affects bits above 31 and is not formed.
pub fn mul32_partial_products(a: u32, b: u32) -> u32 {
    let (a_lo, a_hi) = ((a & 0xffff) as i64, (a >> 16) as i64);
    let (b_lo, b_hi) = ((b & 0xffff) as i64, (b >> 16) as i64);
    let p_ll = mul17(a_lo, b_lo) as u64;
    let p_lh = mul17(a_lo, b_hi) as u64;
    let p_hl = mul17(a_hi, b_lo) as u64;
    p_ll.wrapping_add(p_lh << 16).wrapping_add(p_hl << 16) as u32
}

fn check_operands(
    cfg: PrecisionConfig,
    weights: &PackedWord,
    activations: &PackedWord,
) -> Result<(), DatapathError> {
    if weights.width != cfg.weight || activations.width != cfg.activation {
        return Err(DatapathError::ConfigMismatch {
            cfg,
            weight: weights.width.bits(),
            activation: activations.width.bits(),
        });
    }
    Ok(())
}

/// Architectural result of `nn_mac`: `acc + sum(w_k * a_k)` over the paired
/// lanes, wrapping at 32 bits.
pub fn nn_mac_functional(
    acc: i32,
    weights: PackedWord,
    activations: PackedWord,
    cfg: PrecisionConfig,
) -> Result<i32, DatapathError> {
    check_operands(cfg, &weights, &activations)?;
    let sum = (0..cfg.products_per_instruction())
        .fold(0i32, |s, k| s.wrapping_add(weights.lane(k).wrapping_mul(activations.lane(k))));
    Ok(acc.wrapping_add(sum))
}

/// Extra accumulator bits needed to sum `k` values of `n` bits: `ceil(log2 k)`.
pub fn guard_bits(_n: u32, k: u32) -> u32 {
    assert!(k >= 1, "accumulation count must be positive");
    u32::BITS - (k - 1).leading_zeros()
}

/// Bit offset of the upper product field in soft-SIMD mode (product width
/// plus guard bits).
pub fn soft_simd_shift() -> u32 {
    SOFT_SIMD_PRODUCT_BITS + guard_bits(SOFT_SIMD_PRODUCT_BITS, SOFT_SIMD_ACCUMULATIONS)
}

/// Splits `value = hi * 2^shift + lo` with `lo` a signed `shift`-bit field.
/// A negative low field borrows one from the upper part, which is added back.
fn split_field(value: i64, shift: u32) -> (i64, i64) {
    let mask = (1i64 << shift) - 1;
    let field = value & mask;
    let lo = if field >> (shift - 1) != 0 { field - (1 << shift) } else { field };
    let hi = (value >> shift) + i64::from(lo < 0);
    (lo, hi)
}

/// One multiplication of an activation against two 2-bit weights packed as
/// `w_hi * 2^12 + w_lo`; returns `(a * w_lo, a * w_hi)`.
pub fn soft_simd_product(a: u32, w_lo: i32, w_hi: i32) -> (i32, i32) {
    debug_assert!(a <= 255);
    debug_assert!((-2..=1).contains(&w_lo) && (-2..=1).contains(&w_hi));
    let shift = soft_simd_shift();
    let composite = ((w_hi as i64) << shift) + w_lo as i64;
    let product = mul17(a as i64, composite);
    let (lo, hi) = split_field(product, shift);
    (lo as i32, hi as i32)
}

/// Two lane products with distinct activations in one multiplication.
///
/// `(a_lo + a_hi * 2^12) * (w_hi + w_lo * 2^12)` places
/// `a_lo*w_lo + a_hi*w_hi` in the middle 12-bit field. Activations must be at
/// most 4 bits wide so the composite operand fits 17 bits.
pub fn soft_simd_dot(a_lo: u32, a_hi: u32, w_lo: i32, w_hi: i32) -> i32 {
    debug_assert!(a_lo <= 15 && a_hi <= 15);
    debug_assert!((-2..=1).contains(&w_lo) && (-2..=1).contains(&w_hi));
    let shift = soft_simd_shift();
    let act = a_lo as i64 + ((a_hi as i64) << shift);
    let wgt = w_hi as i64 + ((w_lo as i64) << shift);
    let product = mul17(act, wgt);
    let (_cross, rest) = split_field(product, shift);
    let (dot, _) = split_field(rest, shift);
    dot as i32
}

/// Lane indices processed together on one multiplier; the weight lane and
/// activation lane always coincide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplierSlot {
    pub multiplier: usize,
    pub lanes: Vec<usize>,
}

/// Lane-to-multiplier mapping for the two fast cycles of one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastCycleSchedule {
    pub cfg: PrecisionConfig,
    pub cycles: [Vec<MultiplierSlot>; FAST_CYCLES],
}

impl FastCycleSchedule {
    pub fn products(&self) -> usize {
        self.cycles.iter().flatten().map(|s| s.lanes.len()).sum()
    }

    pub fn multipliers_per_cycle(&self) -> usize {
        self.cycles[0].len()
    }

    pub fn lanes_per_multiplier(&self) -> usize {
        self.cycles[0].first().map_or(0, |s| s.lanes.len())
    }
}

pub fn schedule(cfg: PrecisionConfig) -> FastCycleSchedule {
    let products = cfg.products_per_instruction();
    // Four products fill two units; eight fill all four; sixteen need two
    // lanes per unit.
    let (units, per_unit) = match products {
        4 => (2, 1),
        8 => (NUM_MULTIPLIERS, 1),
        _ => (NUM_MULTIPLIERS, 2),
    };
    let per_cycle = units * per_unit;
    let cycles = std::array::from_fn(|c| {
        (0..units)
            .map(|m| {
                let first = c * per_cycle + m * per_unit;
                MultiplierSlot { multiplier: m, lanes: (first..first + per_unit).collect() }
            })
            .collect()
    });
    FastCycleSchedule { cfg, cycles }
}

/// Result of the bit-level path with the widest intermediate it produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitLevelResult {
    pub acc: i32,
    pub max_intermediate_bits: u32,
    pub multiplications: usize,
}

fn signed_bits(v: i64) -> u32 {
    if v >= 0 {
        65 - v.leading_zeros()
    } else {
        65 - (!v).leading_zeros()
    }
}

/// Executes `nn_mac` through the fast-cycle schedule and the 17-bit units.
pub fn nn_mac_bitlevel(
    acc: i32,
    weights: PackedWord,
    activations: PackedWord,
    cfg: PrecisionConfig,
) -> Result<BitLevelResult, DatapathError> {
    check_operands(cfg, &weights, &activations)?;
    let sched = schedule(cfg);
    let mut internal = acc as i64;
    let mut widest = signed_bits(internal);
    let mut multiplications = 0;
    for cycle in &sched.cycles {
        for slot in cycle {
            let term = match slot.lanes.as_slice() {
                [k] => mul17(weights.lane(*k) as i64, activations.lane(*k) as i64),
                [lo, hi] => soft_simd_dot(
                    activations.lane(*lo) as u32,
                    activations.lane(*hi) as u32,
                    weights.lane(*lo),
                    weights.lane(*hi),
                ) as i64,
                _ => unreachable!("slot carries one or two lanes"),
            };
            multiplications += 1;
            widest = widest.max(signed_bits(term));
            internal += term;
            widest = widest.max(signed_bits(internal));
        }
    }
    debug_assert!(widest <= ACCUMULATOR_BITS);
    Ok(BitLevelResult { acc: internal as i32, max_intermediate_bits: widest, multiplications })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(w: u32, a: u32) -> PrecisionConfig {
        PrecisionConfig::from_bits(w, a).unwrap()
    }

    #[test]
    fn pack_examples() {
        let w = pack(&[1, 2, 3, 4], BitWidth::B8, Signedness::Unsigned).unwrap();
        assert_eq!(w.raw, 0x0403_0201);
        let w = pack(&[-2, 1], BitWidth::B2, Signedness::Signed).unwrap();
        assert_eq!(w.raw, 0x0000_0006);
        assert!(matches!(
            pack(&[300], BitWidth::B8, Signedness::Unsigned),
            Err(DatapathError::LaneOverflow { value: 300, .. })
        ));
        assert!(matches!(
            pack(&[0; 5], BitWidth::B8, Signedness::Unsigned),
            Err(DatapathError::TooManyValues { count: 5, lanes: 4 })
        ));
    }

    #[test]
    fn unpack_examples() {
        let w = PackedWord::new(0x0403_0201, BitWidth::B8, Signedness::Unsigned);
        assert_eq!(unpack(w), vec![1, 2, 3, 4]);
        let w = PackedWord::new(6, BitWidth::B2, Signedness::Signed);
        let mut expected = vec![0; 16];
        expected[0] = -2;
        expected[1] = 1;
        assert_eq!(unpack(w), expected);
    }

    #[test]
    fn mul32_examples() {
        assert_eq!(mul32_partial_products(0xFFFF_FFFF, 0xFFFF_FFFF), 1);
        assert_eq!(mul32_partial_products(0x0001_2345, 3), 0x0003_69CF);
        assert_eq!(mul32_partial_products(0xDEAD_BEEF, 0), 0);
    }

    #[test]
    fn nn_mac_examples() {
        let w = pack(&[1, 2, 3, 4], BitWidth::B8, Signedness::Signed).unwrap();
        let a = pack(&[10, 20, 30, 40], BitWidth::B8, Signedness::Unsigned).unwrap();
        assert_eq!(nn_mac_functional(0, w, a, cfg(8, 8)).unwrap(), 300);

        let weights: Vec<i32> = (0..16).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect();
        let w = pack(&weights, BitWidth::B2, Signedness::Signed).unwrap();
        let a = pack(&[5, 6, 7, 8], BitWidth::B8, Signedness::Unsigned).unwrap();
        assert_eq!(nn_mac_functional(0, w, a, cfg(2, 8)).unwrap(), -2);

        assert!(matches!(
            nn_mac_functional(0, w, a, cfg(4, 8)),
            Err(DatapathError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn accumulator_wraps() {
        let w = pack(&[127], BitWidth::B8, Signedness::Signed).unwrap();
        let a = pack(&[255], BitWidth::B8, Signedness::Unsigned).unwrap();
        let r = nn_mac_functional(i32::MAX, w, a, cfg(8, 8)).unwrap();
        assert_eq!(r, i32::MAX.wrapping_add(127 * 255));
        assert_eq!(nn_mac_bitlevel(i32::MAX, w, a, cfg(8, 8)).unwrap().acc, r);
    }

    #[test]
    fn soft_simd_examples() {
        assert_eq!(soft_simd_product(100, 1, 0), (100, 0));
        assert_eq!(soft_simd_product(255, -2, 1), (-510, 255));
    }

    #[test]
    fn soft_simd_exhaustive() {
        for a in 0..=255u32 {
            for w_lo in -2..=1 {
                for w_hi in -2..=1 {
                    let a_i = a as i32;
                    assert_eq!(soft_simd_product(a, w_lo, w_hi), (a_i * w_lo, a_i * w_hi));
                }
            }
        }
    }

    #[test]
    fn soft_simd_dot_exhaustive() {
        for a_lo in 0..=15u32 {
            for a_hi in 0..=15u32 {
                for w_lo in -2..=1 {
                    for w_hi in -2..=1 {
                        let expected = a_lo as i32 * w_lo + a_hi as i32 * w_hi;
                        assert_eq!(soft_simd_dot(a_lo, a_hi, w_lo, w_hi), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn guard_bit_examples() {
        assert_eq!(guard_bits(10, 4), 2);
        assert_eq!(soft_simd_shift(), 12);
        assert_eq!(guard_bits(7, 1), 0);
        assert_eq!(guard_bits(16, 9), 4);
        assert_eq!(guard_bits(8, 2), 1);
    }

    #[test]
    fn schedule_shapes() {
        let s = schedule(cfg(8, 8));
        assert_eq!((s.multipliers_per_cycle(), s.lanes_per_multiplier(), s.products()), (2, 1, 4));
        let s = schedule(cfg(4, 4));
        assert_eq!((s.multipliers_per_cycle(), s.lanes_per_multiplier(), s.products()), (4, 1, 8));
        let s = schedule(cfg(2, 2));
        assert_eq!((s.multipliers_per_cycle(), s.lanes_per_multiplier(), s.products()), (4, 2, 16));
        for c in PrecisionConfig::all() {
            let s = schedule(c);
            assert_eq!(s.products(), c.products_per_instruction());
            let mut lanes: Vec<usize> = s.cycles.iter().flatten().flat_map(|x| x.lanes.clone()).collect();
            lanes.sort_unstable();
            assert_eq!(lanes, (0..c.products_per_instruction()).collect::<Vec<_>>());
            assert!(s.cycles.iter().all(|c| c.len() <= NUM_MULTIPLIERS));
        }
    }

    fn packed_strategy(width: BitWidth, signedness: Signedness) -> impl Strategy<Value = PackedWord> {
        any::<u32>().prop_map(move |raw| PackedWord::new(raw, width, signedness))
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(raw in any::<u32>(), w in 0usize..3, signed in any::<bool>()) {
            let width = BitWidth::ALL[w];
            let s = if signed { Signedness::Signed } else { Signedness::Unsigned };
            let word = PackedWord::new(raw, width, s);
            prop_assert_eq!(pack(&word.unpack(), width, s).unwrap(), word);
        }

        #[test]
        fn mul32_matches_native(a in any::<u32>(), b in any::<u32>()) {
            prop_assert_eq!(mul32_partial_products(a, b), a.wrapping_mul(b));
        }

        #[test]
        fn bitlevel_matches_functional_w2a2(
            acc in any::<i32>(),
            w in packed_strategy(BitWidth::B2, Signedness::Signed),
            a in packed_strategy(BitWidth::B2, Signedness::Unsigned),
        ) {
            let c = cfg(2, 2);
            let bit = nn_mac_bitlevel(acc, w, a, c).unwrap();
            prop_assert_eq!(bit.acc, nn_mac_functional(acc, w, a, c).unwrap());
            prop_assert!(bit.max_intermediate_bits <= ACCUMULATOR_BITS);
        }
    }
}
