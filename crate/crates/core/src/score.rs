//! Exact impurity scores and score thresholds.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::amount::Amount;
use crate::error::Error;

/// The score `impurity / balance`, held as the exact pair. Zero when the balance is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Score<A> {
    pub impurity: A,
    pub balance: A,
}

impl<A: Amount> Score<A> {
    pub fn new(impurity: A, balance: A) -> Self {
        Score { impurity, balance }
    }

    pub fn is_zero(&self) -> bool {
        self.balance.is_zero() || self.impurity.is_zero()
    }

    pub fn is_one(&self) -> bool {
        !self.balance.is_zero() && self.impurity == self.balance
    }

    pub fn to_ratio(&self) -> Ratio<BigUint> {
        if self.balance.is_zero() {
            Ratio::from_integer(BigUint::zero())
        } else {
            Ratio::new(self.impurity.to_biguint(), self.balance.to_biguint())
        }
    }

    /// `score >= threshold`, decided exactly.
    pub fn at_least(&self, threshold: Threshold) -> bool {
        let (p, q) = threshold.parts();
        if self.balance.is_zero() {
            return p == 0;
        }
        // I/B >= p/q  <=>  I >= ceil(B*p/q) for integer I
        let bound = self.balance.mul_div_ceil(A::from_units(p), A::from_units(q));
        self.impurity >= bound
    }

    /// `score > threshold`, decided exactly.
    pub fn exceeds(&self, threshold: Threshold) -> bool {
        self.at_least(threshold) && !self.equals(threshold)
    }

    fn equals(&self, threshold: Threshold) -> bool {
        self.to_ratio() == threshold.to_big_ratio()
    }

    pub fn to_f64(&self) -> f64 {
        if self.balance.is_zero() {
            return 0.0;
        }
        let r = self.to_ratio();
        // scale to keep 1e-12 resolution before converting
        let scaled = (r.numer() * BigUint::from(10u64).pow(12)) / r.denom();
        scaled.to_f64().unwrap_or(f64::NAN) / 1e12
    }

    /// Fixed-point decimal rendering, rounded half up.
    pub fn render(&self, places: u32) -> String {
        render_ratio(&self.to_ratio(), places)
    }
}

impl<A: Amount> PartialOrd for Score<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.to_ratio().cmp(&other.to_ratio()))
    }
}

pub(crate) fn render_ratio(r: &Ratio<BigUint>, places: u32) -> String {
    let scale = BigUint::from(10u64).pow(places);
    let two = BigUint::from(2u8);
    let scaled = (r.numer() * &scale * &two + r.denom()) / (r.denom() * &two);
    let int_part = &scaled / &scale;
    let frac_part = &scaled % &scale;
    if places == 0 {
        return int_part.to_string();
    }
    format!("{int_part}.{frac:0>width$}", frac = frac_part.to_string(), width = places as usize)
}

/// A score cutoff in `[0, 1]`, stored as an exact fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Threshold(Ratio<u64>);

impl Threshold {
    pub const ZERO: Threshold = Threshold(Ratio::new_raw(0, 1));
    pub const ONE: Threshold = Threshold(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self, Error> {
        if denom == 0 || numer > denom {
            return Err(Error::Config(format!("threshold {numer}/{denom} outside [0,1]")));
        }
        Ok(Threshold(Ratio::new(numer, denom)))
    }

    /// `per_mille / 1000`, convenient for grids such as 0.5% .. 5%.
    pub fn per_mille(per_mille: u64) -> Self {
        Self::new(per_mille, 1000).expect("per-mille threshold above 1")
    }

    pub fn percent(pct: u64) -> Self {
        Self::new(pct, 100).expect("percent threshold above 100")
    }

    pub fn parts(&self) -> (u64, u64) {
        (*self.0.numer(), *self.0.denom())
    }

    pub fn to_big_ratio(&self) -> Ratio<BigUint> {
        let (p, q) = self.parts();
        Ratio::new(BigUint::from(p), BigUint::from(q))
    }

    pub fn to_f64(&self) -> f64 {
        let (p, q) = self.parts();
        p as f64 / q as f64
    }
}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Threshold {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_big_ratio().cmp(&other.to_big_ratio())
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.to_big_ratio() * Ratio::from_integer(BigUint::from(100u8));
        write!(f, "{}%", trim_zeros(&render_ratio(&r, 6)))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn parse_decimal_fraction(s: &str) -> Option<(u64, u64)> {
    let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) || frac_part.len() > 15 {
        return None;
    }
    let numer: u64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    Some((numer, 10u64.checked_pow(frac_part.len() as u32)?))
}

impl FromStr for Threshold {
    type Err = Error;

    /// Accepts `5%`, `2.6%`, `0.05` or `1/20`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Config(format!("cannot parse threshold {s:?}"));
        let s = s.trim();
        if let Some(pct) = s.strip_suffix('%') {
            let (n, d) = parse_decimal_fraction(pct.trim()).ok_or_else(bad)?;
            return Threshold::new(n, d.checked_mul(100).ok_or_else(bad)?);
        }
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Threshold::new(n, d);
        }
        let (n, d) = parse_decimal_fraction(s).ok_or_else(bad)?;
        Threshold::new(n, d)
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (p, q) = self.parts();
        serializer.collect_str(&format_args!("{p}/{q}"))
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
