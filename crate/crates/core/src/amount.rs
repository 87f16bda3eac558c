//! Integer amount types.
//!
//! Every balance and impurity value is an exact unsigned integer in base units.
//! The ledger is generic over the width so small synthetic chains can run on
//! `u64` while Wei-scale chains use 256-bit values.

use std::fmt::{Debug, Display};
use std::hash::Hash;

use num_bigint::BigUint;
use num_traits::{FromPrimitive, PrimInt, ToPrimitive, Unsigned};
use ruint::aliases::{U256, U512};
use ruint::UintTryTo;

/// Width of the fixed big-endian encoding used on disk, whatever the in-memory width.
pub const WORD_BYTES: usize = 32;

/// Unsigned integer usable as a balance or impurity amount.
pub trait Amount:
    PrimInt + Unsigned + FromPrimitive + Hash + Debug + Display + Default + Send + Sync + 'static
{
    /// `ceil(self * num / den)` computed without intermediate overflow.
    ///
    /// Panics when `den` is zero or the result does not fit `Self`; the ledger
    /// only calls it with `num <= den`, where the result is at most `self`.
    fn mul_div_ceil(self, num: Self, den: Self) -> Self;

    fn to_biguint(&self) -> BigUint;

    fn from_biguint(value: &BigUint) -> Option<Self>;

    /// Parses a plain base-10 string (digits only, no sign or prefix).
    fn parse_decimal(s: &str) -> Option<Self> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        BigUint::parse_bytes(s.as_bytes(), 10).and_then(|v| Self::from_biguint(&v))
    }

    fn to_word(&self) -> [u8; WORD_BYTES] {
        let bytes = self.to_biguint().to_bytes_be();
        let mut word = [0u8; WORD_BYTES];
        word[WORD_BYTES - bytes.len()..].copy_from_slice(&bytes);
        word
    }

    fn from_word(word: &[u8; WORD_BYTES]) -> Option<Self> {
        Self::from_biguint(&BigUint::from_bytes_be(word))
    }

    /// Lossy conversion for presentation and timing summaries only.
    fn to_f64_lossy(&self) -> f64 {
        self.to_biguint().to_f64().unwrap_or(f64::INFINITY)
    }

    fn from_units(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("u64 fits every amount width")
    }
}

/// Base units per coin.
pub const COIN_DECIMALS: u32 = 18;

/// Parses a decimal coin amount such as `12`, `0.5` or `7500.25` into base units.
pub fn parse_coins<A: Amount>(s: &str) -> Option<A> {
    let s = s.trim();
    let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
    if int_part.is_empty() && frac_part.is_empty() || frac_part.len() > COIN_DECIMALS as usize {
        return None;
    }
    let digits = format!("{int_part}{frac_part:0<width$}", width = COIN_DECIMALS as usize);
    A::parse_decimal(digits.trim_start_matches('0')).or_else(|| digits.bytes().all(|b| b == b'0').then(A::zero))
}

/// Renders base units as coins with trailing zeros trimmed.
pub fn format_coins<A: Amount>(v: &A) -> String {
    let digits = v.to_string();
    let d = COIN_DECIMALS as usize;
    let padded = format!("{digits:0>width$}", width = d + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - d);
    let frac = frac_part.trim_end_matches('0');
    if frac.is_empty() {
        int_part.to_string()
    } else {
        format!("{int_part}.{frac}")
    }
}

impl Amount for u64 {
    fn mul_div_ceil(self, num: Self, den: Self) -> Self {
        assert!(den != 0, "mul_div_ceil by zero");
        let q = (self as u128 * num as u128).div_ceil(den as u128);
        u64::try_from(q).expect("mul_div_ceil overflow")
    }

    fn to_biguint(&self) -> BigUint {
        BigUint::from(*self)
    }

    fn from_biguint(value: &BigUint) -> Option<Self> {
        value.to_u64()
    }

    fn to_word(&self) -> [u8; WORD_BYTES] {
        let mut word = [0u8; WORD_BYTES];
        word[WORD_BYTES - 8..].copy_from_slice(&self.to_be_bytes());
        word
    }

    fn from_word(word: &[u8; WORD_BYTES]) -> Option<Self> {
        if word[..WORD_BYTES - 8].iter().any(|&b| b != 0) {
            return None;
        }
        Some(u64::from_be_bytes(word[WORD_BYTES - 8..].try_into().unwrap()))
    }
}

impl Amount for u128 {
    fn mul_div_ceil(self, num: Self, den: Self) -> Self {
        assert!(den != 0, "mul_div_ceil by zero");
        let wide: U256 = U256::from(self) * U256::from(num);
        let q = wide.div_ceil(U256::from(den));
        u128::try_from(q).expect("mul_div_ceil overflow")
    }

    fn to_biguint(&self) -> BigUint {
        BigUint::from(*self)
    }

    fn from_biguint(value: &BigUint) -> Option<Self> {
        value.to_u128()
    }
}

impl Amount for U256 {
    fn mul_div_ceil(self, num: Self, den: Self) -> Self {
        assert!(!den.is_zero(), "mul_div_ceil by zero");
        let wide: U512 = self.widening_mul(num);
        let q = wide.div_ceil(U512::from(den));
        q.uint_try_to().expect("mul_div_ceil overflow")
    }

    fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.to_be_bytes::<32>())
    }

    fn from_biguint(value: &BigUint) -> Option<Self> {
        let bytes = value.to_bytes_be();
        if bytes.len() > 32 {
            return None;
        }
        U256::try_from_be_slice(&bytes)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        U256::from_str_radix(s, 10).ok()
    }

    fn to_word(&self) -> [u8; WORD_BYTES] {
        self.to_be_bytes::<32>()
    }

    fn from_word(word: &[u8; WORD_BYTES]) -> Option<Self> {
        Some(U256::from_be_bytes(*word))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ceiling_rounds_up() {
        assert_eq!(1u64.mul_div_ceil(1, 3), 1);
        assert_eq!(10u64.mul_div_ceil(50, 100), 5);
        assert_eq!(0u64.mul_div_ceil(7, 9), 0);
        assert_eq!(U256::from(10).mul_div_ceil(U256::from(1), U256::from(3)), U256::from(4));
    }

    #[test]
    fn wide_products_do_not_overflow() {
        let big = U256::MAX;
        assert_eq!(big.mul_div_ceil(big, big), big);
        assert_eq!(u64::MAX.mul_div_ceil(u64::MAX, u64::MAX), u64::MAX);
        assert_eq!(u128::MAX.mul_div_ceil(u128::MAX - 1, u128::MAX), u128::MAX - 1);
    }

    #[test]
    fn decimal_parsing_is_strict() {
        assert_eq!(u64::parse_decimal("42"), Some(42));
        assert_eq!(u64::parse_decimal("18446744073709551616"), None);
        assert_eq!(u64::parse_decimal("-1"), None);
        assert_eq!(U256::parse_decimal("0x10"), None);
        assert_eq!(U256::parse_decimal(""), None);
        assert_eq!(
            U256::parse_decimal("1000000000000000000000000000000"),
            Some(U256::from(10u8).pow(U256::from(30u8)))
        );
    }

    #[test]
    fn coin_strings() {
        let one: U256 = parse_coins("1").unwrap();
        assert_eq!(one, U256::from(10u8).pow(U256::from(18u8)));
        assert_eq!(parse_coins::<u128>("0.5"), Some(500_000_000_000_000_000));
        assert_eq!(parse_coins::<u128>("0"), Some(0));
        assert_eq!(parse_coins::<u128>("1.0000000000000000001"), None);
        assert_eq!(parse_coins::<u128>("x"), None);
        assert_eq!(format_coins(&parse_coins::<u128>("7500.25").unwrap()), "7500.25");
        assert_eq!(format_coins(&1u128), "0.000000000000000001");
        assert_eq!(format_coins(&0u128), "0");
    }

    proptest! {
        #[test]
        fn mul_div_ceil_matches_bigint(a: u64, n: u64, d in 1u64..) {
            let expect = (BigUint::from(a) * BigUint::from(n) + BigUint::from(d) - 1u32) / BigUint::from(d);
            if let Some(e) = expect.to_u64() {
                prop_assert_eq!(a.mul_div_ceil(n, d), e);
                let w = U256::from(a).mul_div_ceil(U256::from(n), U256::from(d));
                prop_assert_eq!(w.to_biguint(), expect);
            }
        }

        #[test]
        fn word_encoding_roundtrips(v: u128) {
            prop_assert_eq!(u128::from_word(&v.to_word()), Some(v));
            let w = U256::from(v);
            prop_assert_eq!(U256::from_word(&w.to_word()), Some(w));
            prop_assert_eq!(w.to_word(), v.to_word());
        }
    }
}
