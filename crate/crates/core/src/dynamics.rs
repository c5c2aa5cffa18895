//! Exact realization of the flow on points and finite unions of strips.
//!
//! A point of the space is addressed by `(J, x, y)` inside the stage-`J`
//! rectangle `[0, w_J) × [0, h_J)`. The flow moves points straight up; when a
//! point would leave the rectangle it is first lifted to a deeper stage, where
//! the column it belongs to sits inside a taller tower.

use serde::{Deserialize, Serialize};

use crate::construction::{Stage, StageHierarchy};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default cap on the number of strips a set may grow to before it is
/// coarsened.
pub const DEFAULT_STRIP_BUDGET: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAddress<T> {
    pub stage: usize,
    pub x: T,
    pub y: T,
}

impl<T: Real> PointAddress<T> {
    pub fn new(stages: &StageHierarchy<T>, stage: usize, x: T, y: T) -> Result<Self> {
        if stage == 0 || stage > stages.max_stage() {
            return Err(Error::param("stage", format!("{stage} outside 1..={}", stages.max_stage())));
        }
        let (w, h) = (stages.width(stage), stages.height(stage));
        if !(x >= T::zero() && x < w && y >= T::zero() && y < h) {
            return Err(Error::param("point", format!("({x}, {y}) outside [0,{w})×[0,{h})")));
        }
        Ok(Self { stage, x, y })
    }
}

/// Moves `p` one stage deeper: it lands in column `1 + ⌊x / w_{J+1}⌋`.
pub fn lift_point<T: Real>(stages: &StageHierarchy<T>, p: PointAddress<T>) -> Result<PointAddress<T>> {
    if p.stage >= stages.max_stage() {
        return Err(Error::DepthExhausted { stage: p.stage, max_safe_t: 0.0 });
    }
    let st = stages.stage(p.stage);
    let c = st.column_of(p.x);
    let x = (p.x - T::of_usize(c) * st.column_width()).max(T::zero());
    Ok(PointAddress { stage: p.stage + 1, x, y: p.y + st.column_offsets[c] })
}

pub fn lift_point_to<T: Real>(stages: &StageHierarchy<T>, mut p: PointAddress<T>, target: usize) -> Result<PointAddress<T>> {
    while p.stage < target {
        p = lift_point(stages, p)?;
    }
    Ok(p)
}

/// T_t applied to a point; the result lives at the first stage with enough
/// headroom above (or below, for `t < 0`) the point.
pub fn flow_point<T: Real>(stages: &StageHierarchy<T>, mut p: PointAddress<T>, t: T) -> Result<PointAddress<T>> {
    loop {
        let h = stages.height(p.stage);
        let y = p.y + t;
        if y >= T::zero() && y < h {
            return Ok(PointAddress { y, ..p });
        }
        if p.stage == stages.max_stage() {
            let safe = if t > T::zero() { h - p.y } else { p.y };
            return Err(Error::DepthExhausted { stage: p.stage, max_safe_t: safe.as_f64() });
        }
        p = lift_point(stages, p)?;
    }
}

/// Half-open rectangle `[x0,x1) × [y0,y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strip<T> {
    pub x0: T,
    pub x1: T,
    pub y0: T,
    pub y1: T,
}

impl<T: Real> Strip<T> {
    pub fn new(x0: T, x1: T, y0: T, y1: T) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> T {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn overlap(&self, other: &Strip<T>) -> T {
        let dx = self.x1.min(other.x1) - self.x0.max(other.x0);
        let dy = self.y1.min(other.y1) - self.y0.max(other.y0);
        if dx > T::zero() && dy > T::zero() {
            dx * dy
        } else {
            T::zero()
        }
    }

    fn shifted(&self, t: T) -> Self {
        Self { y0: self.y0 + t, y1: self.y1 + t, ..*self }
    }
}

/// Finite union of pairwise disjoint strips inside one stage rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerSet<T> {
    stage: usize,
    strips: Vec<Strip<T>>,
    /// Mass added by coarsening (upper bound on the symmetric difference).
    coarsening_error: T,
}

impl<T: Real> TowerSet<T> {
    /// Validates the strips against the stage rectangle and normalizes them.
    pub fn new(stages: &StageHierarchy<T>, stage: usize, strips: Vec<Strip<T>>) -> Result<Self> {
        if stage == 0 || stage > stages.max_stage() {
            return Err(Error::param("stage", format!("{stage} outside 1..={}", stages.max_stage())));
        }
        let (w, h) = (stages.width(stage), stages.height(stage));
        let (tw, th) = (T::geom_tol() * w, T::geom_tol() * h);
        let mut clean = Vec::with_capacity(strips.len());
        for (k, s) in strips.into_iter().enumerate() {
            let ok = s.x0 >= -tw && s.x0 < s.x1 && s.x1 <= w + tw && s.y0 >= -th && s.y0 < s.y1 && s.y1 <= h + th;
            if !ok {
                return Err(Error::param(
                    "strip",
                    format!("strip {k} [{},{})×[{},{}) is not inside [0,{w})×[0,{h})", s.x0, s.x1, s.y0, s.y1),
                ));
            }
            clean.push(Strip {
                x0: s.x0.max(T::zero()),
                x1: s.x1.min(w),
                y0: s.y0.max(T::zero()),
                y1: s.y1.min(h),
            });
        }
        Ok(Self { stage, strips: clean, coarsening_error: T::zero() }.normalized())
    }

    /// Wraps strips already known to be disjoint.
    pub(crate) fn from_disjoint(stage: usize, strips: Vec<Strip<T>>, coarsening_error: T) -> Self {
        Self { stage, strips, coarsening_error }
    }

    pub fn empty(stage: usize) -> Self {
        Self { stage, strips: Vec::new(), coarsening_error: T::zero() }
    }

    pub fn full(stages: &StageHierarchy<T>, stage: usize) -> Result<Self> {
        let (w, h) = (stages.width(stage), stages.height(stage));
        Self::new(stages, stage, vec![Strip::new(T::zero(), w, T::zero(), h)])
    }

    /// Slab `index` (0-based) of the stage tower cut into `count` equal
    /// horizontal slabs.
    pub fn slab(stages: &StageHierarchy<T>, stage: usize, index: usize, count: usize) -> Result<Self> {
        if count == 0 || index >= count {
            return Err(Error::param("slab", format!("index {index} outside 0..{count}")));
        }
        if stage == 0 || stage > stages.max_stage() {
            return Err(Error::param("stage", format!("{stage} outside 1..={}", stages.max_stage())));
        }
        let (w, h) = (stages.width(stage), stages.height(stage));
        let n = T::of_usize(count);
        let y0 = h * T::of_usize(index) / n;
        let y1 = if index + 1 == count { h } else { h * T::of_usize(index + 1) / n };
        Ok(Self::from_disjoint(stage, vec![Strip::new(T::zero(), w, y0, y1)], T::zero()))
    }

    /// All `count` slabs of a stage tower, bottom to top.
    pub fn slabs(stages: &StageHierarchy<T>, stage: usize, count: usize) -> Result<Vec<Self>> {
        (0..count).map(|k| Self::slab(stages, stage, k, count)).collect()
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn strips(&self) -> &[Strip<T>] {
        &self.strips
    }

    pub fn is_empty(&self) -> bool {
        self.strips.is_empty()
    }

    pub fn coarsening_error(&self) -> T {
        self.coarsening_error
    }

    pub fn raw_mass(&self) -> T {
        self.strips.iter().fold(T::zero(), |a, s| a + s.area())
    }

    /// Canonical disjoint form: elementary x-cells are unioned in y and
    /// maximal runs of cells with equal y-profile are merged. Idempotent.
    pub fn normalized(&self) -> Self {
        let mut xs: Vec<T> = self.strips.iter().flat_map(|s| [s.x0, s.x1]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        xs.dedup();
        let mut out: Vec<Strip<T>> = Vec::new();
        let mut run: Option<(T, T, Vec<(T, T)>)> = None;
        for pair in xs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let mut ys: Vec<(T, T)> =
                self.strips.iter().filter(|s| s.x0 <= a && s.x1 >= b).map(|s| (s.y0, s.y1)).collect();
            ys.sort_by(|p, q| p.partial_cmp(q).expect("finite coordinates"));
            let merged = merge_intervals(ys);
            match &mut run {
                Some((_, end, prof)) if *end == a && *prof == merged => *end = b,
                _ => {
                    if let Some((s, e, prof)) = run.take() {
                        out.extend(prof.into_iter().map(|(y0, y1)| Strip::new(s, e, y0, y1)));
                    }
                    run = Some((a, b, merged));
                }
            }
        }
        if let Some((s, e, prof)) = run {
            out.extend(prof.into_iter().map(|(y0, y1)| Strip::new(s, e, y0, y1)));
        }
        Self { stage: self.stage, strips: out, coarsening_error: self.coarsening_error }
    }

    /// Reduces the strip count to at most `budget` where possible. Strips
    /// sharing an x-range are merged: touching ones exactly, then across the
    /// cheapest gaps; the gap mass is added to `coarsening_error`.
    pub fn coarsen(&mut self, budget: usize) {
        if self.strips.len() <= budget {
            return;
        }
        let mut groups: std::collections::BTreeMap<(u64, i16, i8, u64, i16, i8), Vec<Strip<T>>> = Default::default();
        for s in self.strips.drain(..) {
            let (a, b) = (crate::scalar::float_key(s.x0), crate::scalar::float_key(s.x1));
            groups.entry((a.0, a.1, a.2, b.0, b.1, b.2)).or_default().push(s);
        }
        let mut groups: Vec<Vec<Strip<T>>> = groups.into_values().collect();
        for g in &mut groups {
            g.sort_by(|p, q| p.y0.partial_cmp(&q.y0).expect("finite coordinates"));
            let mut merged: Vec<Strip<T>> = Vec::with_capacity(g.len());
            for s in g.drain(..) {
                match merged.last_mut() {
                    Some(last) if s.y0 <= last.y1 => last.y1 = last.y1.max(s.y1),
                    _ => merged.push(s),
                }
            }
            *g = merged;
        }
        let count: usize = groups.iter().map(Vec::len).sum();
        if count > budget {
            let mut gaps: Vec<(T, usize, usize)> = Vec::new();
            for (gi, g) in groups.iter().enumerate() {
                for k in 1..g.len() {
                    gaps.push(((g[k].y0 - g[k - 1].y1) * (g[k].x1 - g[k].x0), gi, k));
                }
            }
            gaps.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite coordinates"));
            let mut join: Vec<Vec<bool>> = groups.iter().map(|g| vec![false; g.len()]).collect();
            for &(cost, gi, k) in gaps.iter().take(count - budget) {
                join[gi][k] = true;
                self.coarsening_error += cost;
            }
            for (g, marks) in groups.iter_mut().zip(&join) {
                let mut merged: Vec<Strip<T>> = Vec::with_capacity(g.len());
                for (k, s) in g.drain(..).enumerate() {
                    match merged.last_mut() {
                        Some(last) if marks[k] => last.y1 = s.y1,
                        _ => merged.push(s),
                    }
                }
                *g = merged;
            }
        }
        self.strips = groups.into_iter().flatten().collect();
        self.strips.sort_by(|p, q| (p.x0, p.y0).partial_cmp(&(q.x0, q.y0)).expect("finite coordinates"));
    }
}

fn merge_intervals<T: Real>(sorted: Vec<(T, T)>) -> Vec<(T, T)> {
    let mut out: Vec<(T, T)> = Vec::with_capacity(sorted.len());
    for (a, b) in sorted {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Cuts strips at the column boundaries of `stage` and stacks the pieces
/// into the next stage.
pub(crate) fn lift_strips<T: Real>(stage: &Stage<T>, strips: &[Strip<T>], out: &mut Vec<Strip<T>>) {
    let cw = stage.column_width();
    let tol = T::geom_tol() * cw;
    for s in strips {
        let first = stage.column_of(s.x0 + tol);
        let last = stage.column_of((s.x1 - tol).max(T::zero()));
        for c in first..=last {
            let left = T::of_usize(c) * cw;
            let right = if c + 1 == stage.cuts { stage.width } else { T::of_usize(c + 1) * cw };
            let lo = s.x0.max(left);
            let hi = s.x1.min(right);
            if hi - lo <= tol {
                continue;
            }
            let o = stage.column_offsets[c];
            let x0 = if lo - left <= tol { T::zero() } else { lo - left };
            let x1 = if right - hi <= tol { cw } else { hi - left };
            out.push(Strip::new(x0, x1, s.y0 + o, s.y1 + o));
        }
    }
}

/// Expresses `set` at a deeper stage; raw mass is preserved.
pub fn lift_set<T: Real>(stages: &StageHierarchy<T>, set: &TowerSet<T>, target: usize) -> Result<TowerSet<T>> {
    lift_set_with_budget(stages, set, target, DEFAULT_STRIP_BUDGET)
}

pub fn lift_set_with_budget<T: Real>(
    stages: &StageHierarchy<T>,
    set: &TowerSet<T>,
    target: usize,
    budget: usize,
) -> Result<TowerSet<T>> {
    if target < set.stage {
        return Err(Error::param("target", format!("cannot lift from stage {} down to {target}", set.stage)));
    }
    if target > stages.max_stage() {
        return Err(Error::DepthExhausted { stage: stages.max_stage(), max_safe_t: 0.0 });
    }
    let mut cur = set.clone();
    while cur.stage < target {
        let mut next = Vec::with_capacity(cur.strips.len() * stages.stage(cur.stage).cuts);
        lift_strips(stages.stage(cur.stage), &cur.strips, &mut next);
        cur = TowerSet::from_disjoint(cur.stage + 1, next, cur.coarsening_error);
        cur.coarsen(budget);
    }
    Ok(cur)
}

/// T_t applied to a set. Each strip is lifted only until it has headroom for
/// the translation, then all pieces are brought to the deepest stage used.
pub fn translate_set<T: Real>(stages: &StageHierarchy<T>, set: &TowerSet<T>, t: T) -> Result<TowerSet<T>> {
    translate_set_with_budget(stages, set, t, DEFAULT_STRIP_BUDGET)
}

pub fn translate_set_with_budget<T: Real>(
    stages: &StageHierarchy<T>,
    set: &TowerSet<T>,
    t: T,
    budget: usize,
) -> Result<TowerSet<T>> {
    let max = stages.max_stage();
    let mut pending: Vec<(usize, Strip<T>)> = set.strips.iter().map(|s| (set.stage, *s)).collect();
    let mut done: Vec<Vec<Strip<T>>> = vec![Vec::new(); max + 1];
    let mut deepest = set.stage;
    let mut scratch = Vec::new();
    while let Some((k, s)) = pending.pop() {
        let h = stages.height(k);
        let tol = T::geom_tol() * h;
        if s.y0 + t >= -tol && s.y1 + t <= h + tol {
            let mut moved = s.shifted(t);
            moved.y0 = moved.y0.max(T::zero());
            moved.y1 = moved.y1.min(h);
            done[k].push(moved);
            deepest = deepest.max(k);
            continue;
        }
        if k == max {
            let safe = if t > T::zero() { h - s.y1 } else { s.y0 };
            return Err(Error::DepthExhausted { stage: max, max_safe_t: safe.as_f64() });
        }
        scratch.clear();
        lift_strips(stages.stage(k), std::slice::from_ref(&s), &mut scratch);
        pending.extend(scratch.iter().map(|p| (k + 1, *p)));
        if pending.len() > budget {
            return Err(Error::DegenerateInput(format!("translation needs more than {budget} strips")));
        }
    }
    let mut carried: Vec<Strip<T>> = Vec::new();
    let mut err = set.coarsening_error;
    for k in set.stage..=deepest {
        carried.append(&mut done[k]);
        if k < deepest {
            let mut next = Vec::with_capacity(carried.len() * stages.stage(k).cuts);
            lift_strips(stages.stage(k), &carried, &mut next);
            let mut tmp = TowerSet::from_disjoint(k + 1, next, err);
            tmp.coarsen(budget);
            err = tmp.coarsening_error;
            carried = tmp.strips;
        }
    }
    Ok(TowerSet::from_disjoint(deepest, carried, err))
}

/// μ(S): raw mass normalized by the total mass m_∞.
pub fn measure<T: Real>(stages: &StageHierarchy<T>, set: &TowerSet<T>) -> T {
    set.raw_mass() / stages.total_mass()
}

/// μ(A ∩ B), exact after lifting both sets to a common stage.
pub fn intersect_measure<T: Real>(stages: &StageHierarchy<T>, a: &TowerSet<T>, b: &TowerSet<T>) -> Result<T> {
    let k = a.stage.max(b.stage);
    let a = lift_set(stages, a, k)?;
    let b = lift_set(stages, b, k)?;
    Ok(overlap_area(&a.strips, &b.strips) / stages.total_mass())
}

fn overlap_area<T: Real>(a: &[Strip<T>], b: &[Strip<T>]) -> T {
    let mut bs: Vec<Strip<T>> = b.to_vec();
    bs.sort_by(|p, q| p.y0.partial_cmp(&q.y0).expect("finite coordinates"));
    let tallest = bs.iter().fold(T::zero(), |m, s| m.max(s.y1 - s.y0));
    let mut total = T::zero();
    for s in a {
        let lo = bs.partition_point(|q| q.y0 < s.y0 - tallest);
        for q in bs[lo..].iter().take_while(|q| q.y0 < s.y1) {
            total += s.overlap(q);
        }
    }
    total
}
