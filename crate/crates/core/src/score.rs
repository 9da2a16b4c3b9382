//! Exact mean scores for the strict validation gate.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Mean of per-task scores held as an exact rational, so "strictly greater"
/// has no floating-point ties.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactScore(BigRational);

impl ExactScore {
    pub fn zero() -> Self {
        Self(BigRational::zero())
    }

    pub fn from_f64(x: f64) -> Self {
        Self(BigRational::from_float(x).unwrap_or_else(BigRational::zero))
    }

    /// Mean of `scores`; `None` for an empty slice.
    pub fn mean(scores: &[f64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let sum = scores
            .iter()
            .map(|s| BigRational::from_float(*s).unwrap_or_else(BigRational::zero))
            .fold(BigRational::zero(), |acc, x| acc + x);
        Some(Self(sum / BigRational::from_integer(BigInt::from(scores.len()))))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn strictly_greater(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Greater
    }
}

impl fmt::Display for ExactScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for ExactScore {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let n: BigInt = n.trim().parse().map_err(|e| format!("bad numerator in {s:?}: {e}"))?;
        let d: BigInt = d.trim().parse().map_err(|e| format!("bad denominator in {s:?}: {e}"))?;
        if d.is_zero() {
            return Err(format!("zero denominator in {s:?}"));
        }
        Ok(Self(BigRational::new(n, d)))
    }
}

impl Serialize for ExactScore {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExactScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_means() {
        let m = ExactScore::mean(&[1.0, 0.0, 0.5]).unwrap();
        assert_eq!(m.to_string(), "1/2");
        assert_eq!(ExactScore::mean(&[]), None);
        // 0.1 + 0.2 style sums compare exactly against their own mean
        let a = ExactScore::mean(&[0.1, 0.2]).unwrap();
        let b = ExactScore::mean(&[0.2, 0.1]).unwrap();
        assert!(!a.strictly_greater(&b) && !b.strictly_greater(&a));
        let parsed: ExactScore = a.to_string().parse().unwrap();
        assert_eq!(parsed, a);
    }

    #[test]
    fn tie_is_not_strictly_greater() {
        let cur = ExactScore::mean(&[1.0, 0.0]).unwrap();
        let cand = ExactScore::mean(&[0.0, 1.0]).unwrap();
        assert!(!cand.strictly_greater(&cur));
        let better = ExactScore::mean(&[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(better.strictly_greater(&cur));
    }
}
