use rayon::prelude::*;

use crate::construction::StageHierarchy;
use crate::dynamics::TowerSet;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::time::FlowTime;

use super::basis::TestBasis;
use super::engine::{cross_correlate, decompose, Decomposition};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationOptions<T> {
    /// Allowed escaped mass, relative to `m_∞`, when choosing the working stage.
    pub escape_tol: T,
}

impl<T: Real> Default for CorrelationOptions<T> {
    fn default() -> Self {
        Self { escape_tol: T::epsilon() * T::of(1e3) }
    }
}

/// `μ(T_t A ∩ B)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation<T> {
    pub value: T,
    pub stage_used: usize,
    /// Upper bound on `|value - μ(T_t A ∩ B)|`.
    pub tail_bound: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix<T> {
    pub t: FlowTime<T>,
    /// `values[(a, b)] = μ(T_t E_a ∩ E_b)`.
    pub values: Matrix<T>,
    pub stage_used: usize,
    pub tail_bound: T,
}

pub fn correlation<T: Real>(
    stages: &StageHierarchy<T>,
    a: &TowerSet<T>,
    b: &TowerSet<T>,
    t: impl Into<FlowTime<T>>,
) -> Result<Correlation<T>> {
    correlation_with(stages, a, b, t.into(), CorrelationOptions::default())
}

pub fn correlation_with<T: Real>(
    stages: &StageHierarchy<T>,
    a: &TowerSet<T>,
    b: &TowerSet<T>,
    t: FlowTime<T>,
    opts: CorrelationOptions<T>,
) -> Result<Correlation<T>> {
    let left = decompose(stages, std::slice::from_ref(a));
    let right = decompose(stages, std::slice::from_ref(b));
    let (values, stage_used, tail_bound) = assemble(stages, &left, &right, t, opts)?;
    Ok(Correlation { value: values[0], stage_used, tail_bound })
}

fn assemble<T: Real>(
    stages: &StageHierarchy<T>,
    left: &Decomposition<T>,
    right: &Decomposition<T>,
    t: FlowTime<T>,
    opts: CorrelationOptions<T>,
) -> Result<(Vec<T>, usize, T)> {
    let (nl, nr) = (left.unresolved.len(), right.unresolved.len());
    let mut out = vec![T::zero(); nl * nr];
    let mut stage_used = 0;
    let mut escaped = T::zero();
    for fl in &left.families {
        for fr in &right.families {
            let block = cross_correlate(stages, fl, fr, t, opts.escape_tol)?;
            stage_used = stage_used.max(block.stage_used);
            escaped += block.escape_mass;
            for (o, v) in out.iter_mut().zip(&block.values) {
                *o += *v;
            }
        }
    }
    let m = stages.total_mass();
    let largest = |v: &[T]| v.iter().fold(T::zero(), |a, b| a.max(*b));
    let lost = largest(&left.unresolved) + largest(&right.unresolved);
    for o in out.iter_mut() {
        *o /= m;
    }
    Ok((out, stage_used, (escaped + lost) / m))
}

/// `M(t)_ab = μ(T_t E_a ∩ E_b)` over a test basis.
pub fn correlation_matrix<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    t: impl Into<FlowTime<T>>,
) -> Result<CorrelationMatrix<T>> {
    correlation_matrix_with(stages, basis, t.into(), CorrelationOptions::default())
}

pub fn correlation_matrix_with<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    t: FlowTime<T>,
    opts: CorrelationOptions<T>,
) -> Result<CorrelationMatrix<T>> {
    let n = basis.len();
    let (values, stage_used, tail_bound) = assemble(stages, &basis.levels, &basis.levels, t, opts)?;
    Ok(CorrelationMatrix { t, values: Matrix::from_vec(n, n, values), stage_used, tail_bound })
}

/// Correlation matrices at many times, computed in parallel; the output
/// order follows `times`.
pub fn correlation_matrices<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    times: &[FlowTime<T>],
    opts: CorrelationOptions<T>,
) -> Vec<Result<CorrelationMatrix<T>>> {
    times.par_iter().map(|t| correlation_matrix_with(stages, basis, *t, opts)).collect()
}
