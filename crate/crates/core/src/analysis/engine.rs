//! Exact correlation of level sets by recursion over the stage hierarchy.
//!
//! A set that is a union of full-width strips at stage `k` is determined by
//! its height profile `a ⊂ [0, h_k)`. Lifted to stage `L > k` the profile
//! becomes `a_L = ⋃_i (a_{L-1} + o_{L-1}(i))`, so the mass-weighted
//! cross-correlation
//!
//! ```text
//! Y_L(δ) = w_L ∫ 1_{a_L}(y) 1_{b_L}(y + δ) dy
//! ```
//!
//! satisfies `Y_L(δ) = (1/r_{L-1}) Σ_{i,i'} Y_{L-1}(δ + o(i) - o(i'))`, where
//! only the pairs with `|δ + o(i) - o(i')| < h_{L-1}` contribute (at most two
//! per `i`). Partial-width strips are first cut into full-width pieces at
//! deeper stages.
//!
//! `μ(T_t A ∩ B)` equals `Y_K(t) / m_∞` up to the mass of points that leave
//! the stage-`K` tower within time `t`, which is at most `w_K |t| / m_∞`; `K`
//! is chosen so that this escape bound is below tolerance.
//!
//! Shifts are carried as integer combinations of tower heights plus a small
//! float remainder, so `h_j - (h_j + s)` cancels exactly even when `h_j` is
//! far beyond the float resolution of `s`.

use std::collections::{BTreeMap, HashMap};

use crate::construction::StageHierarchy;
use crate::dynamics::{lift_strips, TowerSet};
use crate::error::{Error, Result};
use crate::scalar::{float_key, Real};
use crate::time::FlowTime;

/// Memo entries are capped by total stored scalars.
const MEMO_CAPACITY: usize = 1 << 22;

/// Labelled height profiles of full-width sets at one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelFamily<T> {
    pub stage: usize,
    pub profiles: Vec<Vec<(T, T)>>,
    prefix: Vec<Vec<T>>,
    masses: Vec<T>,
}

impl<T: Real> LevelFamily<T> {
    pub fn new(stages: &StageHierarchy<T>, stage: usize, profiles: Vec<Vec<(T, T)>>) -> Self {
        let w = stages.width(stage);
        let profiles: Vec<Vec<(T, T)>> = profiles.into_iter().map(merge_sorted).collect();
        let prefix: Vec<Vec<T>> = profiles
            .iter()
            .map(|p| {
                let mut acc = T::zero();
                let mut v = Vec::with_capacity(p.len() + 1);
                v.push(acc);
                for &(a, b) in p {
                    acc += b - a;
                    v.push(acc);
                }
                v
            })
            .collect();
        let masses = prefix.iter().map(|p| *p.last().expect("prefix is non-empty") * w).collect();
        Self { stage, profiles, prefix, masses }
    }

    pub fn labels(&self) -> usize {
        self.profiles.len()
    }

    /// `w_stage · |profile ∩ [0, y)|` for every label.
    fn own_cumulative(&self, w: T, y: T, out: &mut [T]) {
        for (k, p) in self.profiles.iter().enumerate() {
            let idx = p.partition_point(|iv| iv.1 <= y);
            let mut len = self.prefix[k][idx];
            if let Some(&(a, _)) = p.get(idx) {
                if a < y {
                    len += y - a;
                }
            }
            out[k] = len * w;
        }
    }
}

fn merge_sorted<T: Real>(mut v: Vec<(T, T)>) -> Vec<(T, T)> {
    v.retain(|iv| iv.1 > iv.0);
    v.sort_by(|p, q| p.partial_cmp(q).expect("finite coordinates"));
    let mut out: Vec<(T, T)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Sets cut into full-width pieces, grouped by stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition<T> {
    pub families: Vec<LevelFamily<T>>,
    /// Raw mass per label that could not be resolved into full-width pieces.
    pub unresolved: Vec<T>,
}

pub fn decompose<T: Real>(stages: &StageHierarchy<T>, sets: &[TowerSet<T>]) -> Decomposition<T> {
    let n = sets.len();
    let mut by_stage: BTreeMap<usize, Vec<Vec<(T, T)>>> = BTreeMap::new();
    let mut unresolved = vec![T::zero(); n];
    let drop = T::epsilon() * stages.total_mass();
    let max = stages.max_stage();
    let mut scratch = Vec::new();
    for (label, set) in sets.iter().enumerate() {
        let mut pending: Vec<(usize, _)> = set.strips().iter().map(|s| (set.stage(), *s)).collect();
        while let Some((k, s)) = pending.pop() {
            let w = stages.width(k);
            let tol = T::geom_tol() * w;
            if s.x0 <= tol && s.x1 >= w - tol {
                by_stage.entry(k).or_insert_with(|| vec![Vec::new(); n])[label].push((s.y0, s.y1));
            } else if k == max || s.area() <= drop {
                unresolved[label] += s.area();
            } else {
                scratch.clear();
                lift_strips(stages.stage(k), std::slice::from_ref(&s), &mut scratch);
                pending.extend(scratch.iter().map(|p| (k + 1, *p)));
            }
        }
    }
    let families = by_stage.into_iter().map(|(k, profiles)| LevelFamily::new(stages, k, profiles)).collect();
    Decomposition { families, unresolved }
}

/// `Σ n_l h_l + rem` with at most four height terms.
#[derive(Clone, Copy, Debug)]
struct Shift<T> {
    terms: [(usize, i64); 4],
    len: usize,
    rem: T,
}

type MemoKey = (usize, [(usize, i64); 4], (u64, i16, i8));

impl<T: Real> Shift<T> {
    fn from_time(t: FlowTime<T>) -> Self {
        let mut s = Self { terms: [(0, 0); 4], len: 0, rem: t.offset };
        if let Some((j, k)) = t.anchor {
            s.add(j, k);
        }
        s
    }

    fn coeff(&self, level: usize) -> i64 {
        self.terms[..self.len].iter().find(|t| t.0 == level).map_or(0, |t| t.1)
    }

    fn add(&mut self, level: usize, c: i64) {
        if c == 0 {
            return;
        }
        if let Some(pos) = self.terms[..self.len].iter().position(|t| t.0 == level) {
            self.terms[pos].1 += c;
            if self.terms[pos].1 == 0 {
                self.terms[pos] = self.terms[self.len - 1];
                self.len -= 1;
                self.terms[self.len] = (0, 0);
            }
        } else {
            assert!(self.len < 4, "shift representation overflow");
            self.terms[self.len] = (level, c);
            self.len += 1;
        }
        self.terms[..self.len].sort_unstable_by(|a, b| b.0.cmp(&a.0));
    }

    /// Rewrites every `h_l` with `l > level` through
    /// `h_l = r_{l-1} h_{l-1} + S_{l-1}`.
    fn expand_to(&mut self, stages: &StageHierarchy<T>, level: usize) {
        while self.len > 0 && self.terms[0].0 > level {
            let (l, n) = self.terms[0];
            self.add(l, -n);
            let st = stages.stage(l - 1);
            self.add(l - 1, n * st.cuts as i64);
            self.rem += T::of(n as f64) * st.spacer_prefix[st.cuts];
        }
    }

    /// Float value of the terms strictly below `level`, plus the remainder.
    fn fine_value(&self, stages: &StageHierarchy<T>, level: usize) -> T {
        self.terms[..self.len]
            .iter()
            .filter(|t| t.0 < level)
            .fold(self.rem, |acc, &(l, n)| acc + T::of(n as f64) * stages.height(l))
    }

    fn value(&self, stages: &StageHierarchy<T>) -> T {
        self.terms[..self.len]
            .iter()
            .fold(T::zero(), |acc, &(l, n)| acc + T::of(n as f64) * stages.height(l))
            + self.rem
    }

    fn key(&self, level: usize) -> MemoKey {
        (level, self.terms, float_key(self.rem))
    }
}

struct Correlator<'a, T> {
    stages: &'a StageHierarchy<T>,
    left: &'a LevelFamily<T>,
    right: &'a LevelFamily<T>,
    base: usize,
    size: usize,
    memo: HashMap<MemoKey, Vec<T>>,
    stored: usize,
}

impl<'a, T: Real> Correlator<'a, T> {
    fn new(stages: &'a StageHierarchy<T>, left: &'a LevelFamily<T>, right: &'a LevelFamily<T>) -> Self {
        Self {
            stages,
            left,
            right,
            base: left.stage.max(right.stage),
            size: left.labels() * right.labels(),
            memo: HashMap::new(),
            stored: 0,
        }
    }

    fn eval(&mut self, level: usize, mut shift: Shift<T>) -> Vec<T> {
        if level == self.base {
            shift.expand_to(self.stages, level);
            return self.base_eval(shift.value(self.stages));
        }
        let key = shift.key(level);
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        shift.expand_to(self.stages, level - 1);
        let st = self.stages.stage(level - 1);
        let (h, r, prefix) = (st.height, st.cuts, &st.spacer_prefix);
        let n = shift.coeff(level - 1);
        let fine = shift.fine_value(self.stages, level - 1);
        // g(i, i') = δ + o(i) - o(i'): decreasing in i', increasing in i
        let g = |i: usize, ip: usize| T::of((n - (ip as i64 - i as i64)) as f64) * h + fine - (prefix[ip] - prefix[i]);
        let mut children: Vec<(i64, T, usize)> = Vec::new();
        let mut lo = 0;
        for i in 0..r {
            while lo < r && g(i, lo) >= h {
                lo += 1;
            }
            let mut ip = lo;
            while ip < r && g(i, ip) > -h {
                children.push((n - (ip as i64 - i as i64), prefix[ip] - prefix[i], 1));
                ip += 1;
            }
        }
        children.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite spacer sums"));
        children.dedup_by(|later, kept| {
            if later.0 == kept.0 && later.1 == kept.1 {
                kept.2 += later.2;
                true
            } else {
                false
            }
        });
        let mut out = vec![T::zero(); self.size];
        for (coef, dp, count) in children {
            let mut child = shift;
            child.add(level - 1, coef - n);
            child.rem -= dp;
            let v = self.eval(level - 1, child);
            let c = T::of_usize(count);
            for (o, x) in out.iter_mut().zip(&v) {
                *o += c * *x;
            }
        }
        let inv = T::one() / T::of_usize(r);
        for o in out.iter_mut() {
            *o *= inv;
        }
        if self.stored + self.size <= MEMO_CAPACITY {
            self.stored += self.size;
            self.memo.insert(key, out.clone());
        }
        out
    }

    /// `Y_base(δ)` from the profiles themselves.
    fn base_eval(&self, delta: T) -> Vec<T> {
        let (nl, nr) = (self.left.labels(), self.right.labels());
        let mut out = vec![T::zero(); self.size];
        let base = self.base;
        let w = self.stages.width(base);
        let h = self.stages.height(base);
        if delta >= h || delta <= -h {
            return out;
        }
        if self.left.stage == self.right.stage {
            for (a, pa) in self.left.profiles.iter().enumerate() {
                for (b, pb) in self.right.profiles.iter().enumerate() {
                    let mut total = T::zero();
                    for &(i0, i1) in pa {
                        let start = pb.partition_point(|iv| iv.1 - delta <= i0);
                        for &(j0, j1) in pb[start..].iter().take_while(|iv| iv.0 - delta < i1) {
                            let d = i1.min(j1 - delta) - i0.max(j0 - delta);
                            if d > T::zero() {
                                total += d;
                            }
                        }
                    }
                    out[a * nr + b] = total * w;
                }
            }
        } else if self.left.stage < self.right.stage {
            let mut hi = vec![T::zero(); nl];
            let mut lo = vec![T::zero(); nl];
            for (b, pb) in self.right.profiles.iter().enumerate() {
                for &(j0, j1) in pb {
                    self.cumulative(self.left, base, j1 - delta, &mut hi);
                    self.cumulative(self.left, base, j0 - delta, &mut lo);
                    for a in 0..nl {
                        out[a * nr + b] += hi[a] - lo[a];
                    }
                }
            }
        } else {
            let mut hi = vec![T::zero(); nr];
            let mut lo = vec![T::zero(); nr];
            for (a, pa) in self.left.profiles.iter().enumerate() {
                for &(i0, i1) in pa {
                    self.cumulative(self.right, base, i1 + delta, &mut hi);
                    self.cumulative(self.right, base, i0 + delta, &mut lo);
                    for b in 0..nr {
                        out[a * nr + b] += hi[b] - lo[b];
                    }
                }
            }
        }
        out
    }

    fn cumulative(&self, fam: &LevelFamily<T>, level: usize, y: T, out: &mut [T]) {
        cumulative(self.stages, fam, level, y, out)
    }
}

/// `w_level · |fam_level ∩ [0, y)|` per label, `fam` lifted to `level`.
fn cumulative<T: Real>(stages: &StageHierarchy<T>, fam: &LevelFamily<T>, level: usize, y: T, out: &mut [T]) {
    let h = stages.height(level);
    if y <= T::zero() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return;
    }
    if y >= h {
        out.copy_from_slice(&fam.masses);
        return;
    }
    if level == fam.stage {
        fam.own_cumulative(stages.width(level), y, out);
        return;
    }
    let st = stages.stage(level - 1);
    let c = st.column_offsets.partition_point(|&o| o <= y).max(1) - 1;
    let inner_y = (y - st.column_offsets[c]).min(st.height);
    cumulative(stages, fam, level - 1, inner_y, out);
    let (cf, inv) = (T::of_usize(c), T::one() / T::of_usize(st.cuts));
    for (o, m) in out.iter_mut().zip(&fam.masses) {
        *o = (cf * *m + *o) * inv;
    }
}

/// Largest mass of `fam` (lifted to `level`) within `d` of the tower top
/// (`top = true`) or bottom.
fn edge_mass<T: Real>(stages: &StageHierarchy<T>, fam: &LevelFamily<T>, level: usize, d: T, top: bool) -> T {
    let mut out = vec![T::zero(); fam.labels()];
    if top {
        cumulative(stages, fam, level, stages.height(level) - d, &mut out);
        out.iter().zip(&fam.masses).fold(T::zero(), |acc, (c, m)| acc.max(*m - *c))
    } else {
        cumulative(stages, fam, level, d, &mut out);
        out.iter().fold(T::zero(), |acc, c| acc.max(*c))
    }
}

/// Raw correlation block between two level families.
pub(crate) struct Block<T> {
    /// Mass-weighted overlaps `Y_K(t)`, row-major `left × right`.
    pub values: Vec<T>,
    pub stage_used: usize,
    /// Upper bound on the raw mass that escaped the stage-`K` tower.
    pub escape_mass: T,
}

/// Smallest stage `K ≥ base` at which the mass able to cross the tower
/// boundary within time `t` is at most `escape_tol · m_∞`.
///
/// `Y_K(t)` misses exactly the points of `A` that leave the top of the
/// stage-`K` tower and land in `B`; those land in `B` within `|t|` of the
/// bottom, so the error is at most the smaller of the two edge masses.
pub(crate) fn escape_stage<T: Real>(
    stages: &StageHierarchy<T>,
    left: &LevelFamily<T>,
    right: &LevelFamily<T>,
    t: &FlowTime<T>,
    escape_tol: T,
) -> Result<(usize, T)> {
    let tv = t.value(stages);
    let tf = tv.abs();
    let allowed = escape_tol * stages.total_mass();
    let mut k = left.stage.max(right.stage).max(t.anchor.map_or(0, |(j, _)| j + 1));
    let top = stages.max_stage() + 1;
    loop {
        if k > top {
            return Err(Error::DepthExhausted {
                stage: stages.max_stage(),
                max_safe_t: (allowed / stages.width(top)).as_f64(),
            });
        }
        let crude = stages.width(k) * tf;
        if crude <= allowed {
            return Ok((k, crude));
        }
        let forward = tv > T::zero();
        let escape = edge_mass(stages, left, k, tf, forward).min(edge_mass(stages, right, k, tf, !forward));
        if escape <= allowed {
            return Ok((k, escape));
        }
        k += 1;
    }
}

pub(crate) fn cross_correlate<T: Real>(
    stages: &StageHierarchy<T>,
    left: &LevelFamily<T>,
    right: &LevelFamily<T>,
    t: FlowTime<T>,
    escape_tol: T,
) -> Result<Block<T>> {
    let (k, escape_mass) = escape_stage(stages, left, right, &t, escape_tol)?;
    let mut c = Correlator::new(stages, left, right);
    let values = c.eval(k, Shift::from_time(t));
    Ok(Block { values, stage_used: k, escape_mass })
}
