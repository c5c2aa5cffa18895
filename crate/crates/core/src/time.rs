//! Flow times anchored to tower heights.
//!
//! Times of interest sit near multiples of a tower height `h_j`, which grows
//! factorially with `j`; in floating point `h_j + u` loses every digit of
//! `u`. A [`FlowTime`] keeps the multiple of `h_j` as an exact integer and
//! only the small offset as a float.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::construction::StageHierarchy;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTime<T> {
    /// `(j, k)` stands for `k · h_j`.
    pub anchor: Option<(usize, i64)>,
    pub offset: T,
}

impl<T: Real> FlowTime<T> {
    pub fn plain(t: T) -> Self {
        Self { anchor: None, offset: t }
    }

    /// `h_j`.
    pub fn height(j: usize) -> Self {
        Self::multiple(1, j)
    }

    /// `k · h_j`.
    pub fn multiple(k: i64, j: usize) -> Self {
        Self { anchor: if k == 0 { None } else { Some((j, k)) }, offset: T::zero() }
    }

    pub fn plus(self, dt: T) -> Self {
        Self { offset: self.offset + dt, ..self }
    }

    pub fn neg(self) -> Self {
        Self { anchor: self.anchor.map(|(j, k)| (j, -k)), offset: -self.offset }
    }

    /// Floating-point value (loses offset precision for large anchors).
    pub fn value(&self, stages: &StageHierarchy<T>) -> T {
        match self.anchor {
            Some((j, k)) => stages.height(j) * T::of(k as f64) + self.offset,
            None => self.offset,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.anchor.is_none() && self.offset == T::zero()
    }
}

impl<T: Real> From<T> for FlowTime<T> {
    fn from(t: T) -> Self {
        Self::plain(t)
    }
}

impl<T: Real> fmt::Display for FlowTime<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.anchor {
            Some((j, k)) if self.offset == T::zero() => write!(f, "{k}*h{j}"),
            Some((j, k)) => write!(f, "{k}*h{j}{:+}", self.offset.as_f64()),
            None => write!(f, "{}", self.offset),
        }
    }
}

/// Parses `2.5`, `h10`, `-h3`, `3*h10`, `3*h10+0.25`, `2*h6-1.5`.
impl<T: Real> FromStr for FlowTime<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::param("time", format!("cannot parse '{s}' (expected e.g. 2.5, h10, 3*h10+0.25)"));
        let number = |x: &str| x.parse::<f64>().ok().filter(|v| v.is_finite()).map(T::of);
        let Some(pos) = s.find('h') else {
            return number(&s).map(Self::plain).ok_or_else(bad);
        };
        let (head, tail) = (&s[..pos], &s[pos + 1..]);
        let k: i64 = match head {
            "" | "+" => 1,
            "-" => -1,
            _ => head.strip_suffix('*').and_then(|x| x.parse().ok()).ok_or_else(bad)?,
        };
        let digits = tail.find(['+', '-']).unwrap_or(tail.len());
        let j: usize = tail[..digits].parse().map_err(|_| bad())?;
        if j == 0 {
            return Err(bad());
        }
        let offset = if digits == tail.len() { T::zero() } else { number(&tail[digits..]).ok_or_else(bad)? };
        Ok(Self::multiple(k, j).plus(offset))
    }
}
