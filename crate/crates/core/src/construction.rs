//! Stage hierarchy of a rank-one flow built by cutting and stacking.
//!
//! Stage `j` is a rectangle of width `w_j` and height `h_j`. To pass to stage
//! `j + 1` the rectangle is cut into `r_j` columns of width `w_j / r_j`; a
//! spacer of height `s_j(i)` is put on top of column `i` and the columns are
//! stacked left to right, so column `i` starts at height
//!
//! ```text
//! o_j(1) = 0,   o_j(i + 1) = o_j(i) + h_j + s_j(i),   h_{j+1} = r_j h_j + Σ_i s_j(i).
//! ```
//!
//! Four cut/spacer families are supported:
//!
//! | family            | r_j | s_j(i)                                              |
//! |-------------------|-----|-----------------------------------------------------|
//! | `FEps`            | j   | i/√j for i ≤ (1-ε)j, (i-(1-ε)j)/j^{3/2} otherwise   |
//! | `SlowMix`         | j   | same formula with a stage-dependent ε_j             |
//! | `Staircase`       | j   | i                                                   |
//! | `OdometerControl` | 2   | 0                                                   |

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of stages past `max_stage` whose spacer mass is summed explicitly
/// before the geometric remainder estimate takes over.
const TAIL_LOOKAHEAD: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    FEps,
    SlowMix,
    Staircase,
    OdometerControl,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::FEps, Family::SlowMix, Family::Staircase, Family::OdometerControl];

    pub fn name(self) -> &'static str {
        match self {
            Family::FEps => "feps",
            Family::SlowMix => "slowmix",
            Family::Staircase => "staircase",
            Family::OdometerControl => "odometer",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "feps" => Ok(Family::FEps),
            "slowmix" => Ok(Family::SlowMix),
            "staircase" => Ok(Family::Staircase),
            "odometer" | "odometercontrol" => Ok(Family::OdometerControl),
            _ => Err(Error::param(
                "family",
                format!("unknown family `{s}` (expected feps, slowmix, staircase or odometer)"),
            )),
        }
    }
}

/// One block of a piecewise-constant ε schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsBlock<T> {
    pub length: usize,
    pub value: T,
}

/// Piecewise-constant, non-increasing ε_j schedule; stage 1 is the first
/// entry of the first block. Stages past the last block keep its value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule<T> {
    blocks: Vec<EpsBlock<T>>,
}

impl<T: Real> EpsSchedule<T> {
    pub fn new(blocks: Vec<EpsBlock<T>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::param("schedule", "at least one block is required"));
        }
        let mut prev = T::one();
        for (k, b) in blocks.iter().enumerate() {
            if b.length == 0 {
                return Err(Error::param("schedule", format!("block {} has zero length", k + 1)));
            }
            if !(b.value > T::zero() && b.value < T::one()) {
                return Err(Error::param("schedule", format!("block {} value {} is outside (0,1)", k + 1, b.value)));
            }
            if b.value > prev {
                return Err(Error::param("schedule", format!("block {} increases ε ({} > {})", k + 1, b.value, prev)));
            }
            prev = b.value;
        }
        Ok(Self { blocks })
    }

    /// ε starts at `eps0`, halves every block, and block lengths double
    /// starting from 16 stages; enough blocks are emitted to cover `max_stage`.
    pub fn halving(eps0: T, max_stage: usize) -> Result<Self> {
        let mut blocks = Vec::new();
        let (mut len, mut value, mut covered) = (16usize, eps0, 0usize);
        loop {
            blocks.push(EpsBlock { length: len, value });
            covered += len;
            if covered >= max_stage {
                break;
            }
            len *= 2;
            value = value / T::of(2.0);
        }
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[EpsBlock<T>] {
        &self.blocks
    }

    /// ε_j for stage `j ≥ 1`.
    pub fn at(&self, j: usize) -> T {
        let mut end = 0;
        for b in &self.blocks {
            end += b.length;
            if j <= end {
                return b.value;
            }
        }
        self.blocks.last().map(|b| b.value).unwrap_or_else(T::zero)
    }

    /// Stage range `(first, last)` of block `k` (0-based), 1-based stages.
    pub fn block_range(&self, k: usize) -> Option<(usize, usize)> {
        let start: usize = self.blocks.iter().take(k).map(|b| b.length).sum();
        self.blocks.get(k).map(|b| (start + 1, start + b.length))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams<T> {
    pub family: Family,
    pub eps: Option<T>,
    pub schedule: Option<EpsSchedule<T>>,
    pub h1: T,
    pub max_stage: usize,
}

impl<T: Real> ConstructionParams<T> {
    pub fn feps(eps: T, h1: T, max_stage: usize) -> Self {
        Self { family: Family::FEps, eps: Some(eps), schedule: None, h1, max_stage }
    }

    pub fn slow_mix(schedule: EpsSchedule<T>, h1: T, max_stage: usize) -> Self {
        Self { family: Family::SlowMix, eps: None, schedule: Some(schedule), h1, max_stage }
    }

    pub fn staircase(h1: T, max_stage: usize) -> Self {
        Self { family: Family::Staircase, eps: None, schedule: None, h1, max_stage }
    }

    pub fn odometer(h1: T, max_stage: usize) -> Self {
        Self { family: Family::OdometerControl, eps: None, schedule: None, h1, max_stage }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h1 > T::zero() && self.h1.is_finite()) {
            return Err(Error::param("h1", format!("must be positive and finite, got {}", self.h1)));
        }
        if self.max_stage == 0 {
            return Err(Error::param("max_stage", "must be at least 1"));
        }
        match self.family {
            Family::FEps => match self.eps {
                Some(e) if e > T::zero() && e < T::one() => {}
                Some(e) => return Err(Error::param("eps", format!("must lie in (0,1), got {e}"))),
                None => return Err(Error::param("eps", "required for the feps family")),
            },
            Family::SlowMix => match &self.schedule {
                // re-run the block checks in case the schedule was deserialized
                Some(s) => {
                    EpsSchedule::new(s.blocks.clone())?;
                }
                None => return Err(Error::param("schedule", "required for the slowmix family")),
            },
            Family::Staircase | Family::OdometerControl => {}
        }
        Ok(())
    }

    /// Number of columns r_j the stage-`j` tower is cut into.
    pub fn cuts(&self, j: usize) -> usize {
        match self.family {
            Family::OdometerControl => 2,
            _ => j,
        }
    }

    fn eps_at(&self, j: usize) -> T {
        match self.family {
            Family::SlowMix => self.schedule.as_ref().map(|s| s.at(j)).unwrap_or_else(T::zero),
            _ => self.eps.unwrap_or_else(T::zero),
        }
    }

    /// Spacer heights s_j(1..=r_j).
    pub fn spacers(&self, j: usize) -> Result<Vec<T>> {
        let r = self.cuts(j);
        match self.family {
            Family::OdometerControl => Ok(vec![T::zero(); r]),
            Family::Staircase => Ok((1..=r).map(T::of_usize).collect()),
            Family::FEps | Family::SlowMix => {
                let eps = self.eps_at(j);
                (1..=r).map(|i| spacer_value(j, i, eps)).collect()
            }
        }
    }
}

/// Spacer height s_j(i) of the ε-family with `r_j = j`.
///
/// The branch test `i ≤ (1-ε)j` is a comparison of reals; `(1-ε)j` is not
/// rounded.
pub fn spacer_value<T: Real>(j: usize, i: usize, eps: T) -> Result<T> {
    if j == 0 || i == 0 || i > j {
        return Err(Error::param("i", format!("cut index {i} outside 1..={j}")));
    }
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::param("eps", format!("must lie in (0,1), got {eps}")));
    }
    let (jf, fi) = (T::of_usize(j), T::of_usize(i));
    let threshold = (T::one() - eps) * jf;
    if fi <= threshold {
        Ok(fi / jf.sqrt())
    } else {
        Ok((fi - threshold) / (jf * jf.sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacerVector<T> {
    pub stage: usize,
    pub values: Vec<T>,
}

impl<T: Real> SpacerVector<T> {
    pub fn total(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &b| a + b)
    }
}

/// One level of the tower hierarchy together with the recipe that turns it
/// into the next level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage<T> {
    pub index: usize,
    pub cuts: usize,
    pub height: T,
    pub width: T,
    pub spacers: SpacerVector<T>,
    /// Height at which column `i` (0-based here) sits inside stage `index + 1`.
    pub column_offsets: Vec<T>,
    /// `spacer_prefix[i] = s(1) + … + s(i)`, length `cuts + 1`.
    pub spacer_prefix: Vec<T>,
    pub tower_mass: T,
    pub added_spacer_mass: T,
}

impl<T: Real> Stage<T> {
    /// Width of a column, i.e. the width of the next stage.
    pub fn column_width(&self) -> T {
        self.width / T::of_usize(self.cuts)
    }

    /// Column (0-based) containing horizontal coordinate `x`.
    pub fn column_of(&self, x: T) -> usize {
        let c = (x / self.column_width()).floor();
        if c <= T::zero() {
            0
        } else {
            c.to_usize().unwrap_or(usize::MAX).min(self.cuts - 1)
        }
    }
}

/// Immutable hierarchy of stages `1..=max_stage`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageHierarchy<T> {
    params: ConstructionParams<T>,
    stages: Vec<Stage<T>>,
    next_height: T,
    next_width: T,
    beyond_tail: T,
    total_mass: T,
}

/// Builds stages `1..=max_stage`; stage 1 has width 1 and height `h1`.
pub fn build_stages<T: Real>(params: &ConstructionParams<T>) -> Result<StageHierarchy<T>> {
    params.validate()?;
    let mut stages = Vec::with_capacity(params.max_stage);
    let (mut h, mut w) = (params.h1, T::one());
    for j in 1..=params.max_stage {
        let r = params.cuts(j);
        let values = params.spacers(j)?;
        let mut offsets = Vec::with_capacity(r);
        let mut prefix = Vec::with_capacity(r + 1);
        let (mut o, mut acc) = (T::zero(), T::zero());
        prefix.push(acc);
        for &s in &values {
            offsets.push(o);
            o = o + h + s;
            acc = acc + s;
            prefix.push(acc);
        }
        let next_h = h * T::of_usize(r) + acc;
        let next_w = w / T::of_usize(r);
        if !next_h.is_finite() {
            return Err(Error::StageDepth { stage: j + 1, reason: format!("height overflows the {} range", std::any::type_name::<T>()) });
        }
        if next_w <= T::zero() {
            return Err(Error::StageDepth { stage: j + 1, reason: "width underflows to zero".into() });
        }
        stages.push(Stage {
            index: j,
            cuts: r,
            height: h,
            width: w,
            spacers: SpacerVector { stage: j, values },
            column_offsets: offsets,
            spacer_prefix: prefix,
            tower_mass: w * h,
            added_spacer_mass: next_w * acc,
        });
        h = next_h;
        w = next_w;
    }
    let beyond_tail = beyond_tail(params, w)?;
    let first_mass = stages[0].tower_mass;
    let added: T = stages.iter().fold(T::zero(), |a, s| a + s.added_spacer_mass);
    Ok(StageHierarchy {
        params: params.clone(),
        stages,
        next_height: h,
        next_width: w,
        beyond_tail,
        total_mass: first_mass + added + beyond_tail,
    })
}

/// Spacer mass added after `max_stage + 1`: explicit look-ahead over the
/// family formulas, then a geometric remainder from the last ratio.
fn beyond_tail<T: Real>(params: &ConstructionParams<T>, mut w: T) -> Result<T> {
    let (mut total, mut prev, mut last) = (T::zero(), T::zero(), T::zero());
    for j in params.max_stage + 1..=params.max_stage + TAIL_LOOKAHEAD {
        let r = T::of_usize(params.cuts(j));
        w = w / r;
        if w == T::zero() {
            return Ok(total);
        }
        let s: T = params.spacers(j)?.into_iter().fold(T::zero(), |a, b| a + b);
        prev = last;
        last = w * s;
        total += last;
    }
    if last == T::zero() {
        return Ok(total);
    }
    let q = if prev > T::zero() { last / prev } else { T::one() };
    Ok(if q < T::one() { total + last * q / (T::one() - q) } else { T::infinity() })
}

impl<T: Real> StageHierarchy<T> {
    pub fn params(&self) -> &ConstructionParams<T> {
        &self.params
    }

    pub fn max_stage(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    /// Stage `j` (1-based).
    pub fn stage(&self, j: usize) -> &Stage<T> {
        &self.stages[j - 1]
    }

    /// h_j for `1 ≤ j ≤ max_stage + 1`.
    pub fn height(&self, j: usize) -> T {
        if j == self.stages.len() + 1 {
            self.next_height
        } else {
            self.stages[j - 1].height
        }
    }

    /// w_j for `1 ≤ j ≤ max_stage + 1`.
    pub fn width(&self, j: usize) -> T {
        if j == self.stages.len() + 1 {
            self.next_width
        } else {
            self.stages[j - 1].width
        }
    }

    /// Normalizing mass m_∞ of the whole space (finite tower plus tail).
    pub fn total_mass(&self) -> T {
        self.total_mass
    }

    /// Estimated spacer mass added after stage `max_stage + 1`.
    pub fn beyond_tail(&self) -> T {
        self.beyond_tail
    }

    /// Σ_{j ≥ from} addedSpacerMass(j): explicit up to `max_stage`, estimated
    /// beyond it.
    pub fn tail_mass_bound(&self, from: usize) -> T {
        let start = from.max(1);
        self.stages.iter().skip(start - 1).fold(T::zero(), |a, s| a + s.added_spacer_mass) + self.beyond_tail
    }

    /// Fraction of the space outside the stage-`j` tower.
    pub fn tail_fraction(&self, j: usize) -> T {
        T::one() - self.width(j) * self.height(j) / self.total_mass
    }

    /// Largest stage `j` whose height does not exceed `t`.
    pub fn stage_below(&self, t: T) -> Option<usize> {
        (1..=self.stages.len()).rev().find(|&j| self.height(j) <= t)
    }

    /// Writes `j,r_j,h_j,w_j,added_spacer_mass` rows.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "j,r_j,h_j,w_j,added_spacer_mass")?;
        for s in &self.stages {
            writeln!(out, "{},{},{:?},{:?},{:?}", s.index, s.cuts, s.height, s.width, s.added_spacer_mass)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_spacers() {
        assert_eq!(spacer_value(4, 2, 0.5).unwrap(), 1.0);
        assert_eq!(spacer_value(4, 3, 0.5).unwrap(), 0.125);
        assert_eq!(spacer_value(1, 1, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn spacer_rejects_bad_input() {
        assert!(spacer_value(4, 0, 0.5f64).is_err());
        assert!(spacer_value(4, 5, 0.5f64).is_err());
        assert!(spacer_value(4, 2, 1.0f64).is_err());
        assert!(spacer_value(4, 2, 0.0f64).is_err());
    }

    #[test]
    fn early_heights() {
        let st = build_stages(&ConstructionParams::feps(0.5f64, 1.0, 5)).unwrap();
        assert!((st.height(2) - 1.5).abs() < 1e-15);
        let h3 = 3.0 + 3.0 * 2f64.sqrt() / 4.0;
        assert!((st.height(3) - h3).abs() < 1e-12);
    }

    #[test]
    fn odometer_doubles() {
        let st = build_stages(&ConstructionParams::odometer(1.0, 12)).unwrap();
        for j in 1..=13 {
            assert_eq!(st.height(j), 2f64.powi(j as i32 - 1));
        }
        assert_eq!(st.tail_mass_bound(1), 0.0);
        assert_eq!(st.total_mass(), 1.0);
    }

    #[test]
    fn overflow_names_stage() {
        let err = build_stages(&ConstructionParams::feps(0.5f32, 1.0, 60)).unwrap_err();
        match err {
            Error::StageDepth { stage, .. } => assert!(stage > 20 && stage <= 61, "stage {stage}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn family_names_parse() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert_eq!("OdometerControl".parse::<Family>().unwrap(), Family::OdometerControl);
        assert!("bogus".parse::<Family>().is_err());
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let s = EpsSchedule::halving(0.5, 100).unwrap();
        assert_eq!(s.at(1), 0.5);
        assert_eq!(s.at(16), 0.5);
        assert_eq!(s.at(17), 0.25);
        assert_eq!(s.at(48), 0.25);
        assert_eq!(s.at(49), 0.125);
        assert_eq!(s.block_range(1), Some((17, 48)));
        assert!(EpsSchedule::new(vec![EpsBlock { length: 3, value: 0.2 }, EpsBlock { length: 3, value: 0.4 }]).is_err());
        assert!(EpsSchedule::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ConstructionParams::feps(1.5, 1.0, 3).validate().is_err());
        assert!(ConstructionParams::feps(0.5, -1.0, 3).validate().is_err());
        assert!(ConstructionParams::feps(0.5, 1.0, 0).validate().is_err());
        let mut p = ConstructionParams::odometer(1.0, 3);
        p.family = Family::SlowMix;
        assert!(p.validate().is_err());
    }

    #[test]
    fn last_column_fills_next_tower() {
        let st = build_stages(&ConstructionParams::feps(0.3f64, 0.7, 25)).unwrap();
        for s in st.stages() {
            let r = s.cuts;
            let top = s.column_offsets[r - 1] + s.height + s.spacers.values[r - 1];
            let next = st.height(s.index + 1);
            assert!((top - next).abs() <= 1e-9 * next);
        }
    }

    #[test]
    fn staircase_spacers() {
        let p = ConstructionParams::staircase(1.0, 4);
        assert_eq!(p.spacers(3).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
