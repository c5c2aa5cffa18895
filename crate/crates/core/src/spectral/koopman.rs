use crate::analysis::{correlation_matrix_with, CorrelationOptions, TestBasis};
use crate::construction::StageHierarchy;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, symmetric_eigenvalues, Matrix};
use crate::scalar::Real;
use crate::time::FlowTime;

/// Largest Gram condition number accepted for the centered indicators.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Compression of `U_t` to the span of the centered indicators
/// `1_{E_a} - μ(E_a)`, in the orthonormal frame `L⁻¹ g` with `G = L Lᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanCompression<T> {
    pub t: FlowTime<T>,
    pub matrix: Matrix<T>,
    pub gram_condition: T,
}

/// Cholesky factor of the centered Gram matrix `μ(E_a ∩ E_b) - μ(E_a)μ(E_b)`.
#[derive(Clone, Debug)]
pub struct CenteredFrame<T> {
    theta: Matrix<T>,
    factor: Matrix<T>,
    condition: T,
}

impl<T: Real> CenteredFrame<T> {
    pub fn new(stages: &StageHierarchy<T>, basis: &TestBasis<T>, opts: CorrelationOptions<T>) -> Result<Self> {
        let theta = basis.theta();
        let identity = correlation_matrix_with(stages, basis, FlowTime::plain(T::zero()), opts)?.values;
        let gram = identity.sub(&theta);
        let ev = symmetric_eigenvalues(&gram);
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        let condition = if lo > T::zero() { hi / lo } else { T::infinity() };
        if !(condition <= T::of(MAX_GRAM_CONDITION)) {
            return Err(Error::BasisDegeneracy { condition: condition.as_f64() });
        }
        let factor = cholesky(&gram, T::epsilon()).ok_or(Error::BasisDegeneracy { condition: condition.as_f64() })?;
        Ok(Self { theta, factor, condition })
    }

    pub fn condition(&self) -> T {
        self.condition
    }

    /// `K = L⁻¹ C L⁻ᵀ` with `C_ab = M_ba - μ(E_a)μ(E_b)`.
    pub fn compress(&self, t: FlowTime<T>, m: &Matrix<T>) -> KoopmanCompression<T> {
        let c = m.transpose().sub(&self.theta);
        let left = solve_lower(&self.factor, &c);
        let matrix = solve_lower(&self.factor, &left.transpose()).transpose();
        KoopmanCompression { t, matrix, gram_condition: self.condition }
    }
}

pub fn koopman_compression<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    t: impl Into<FlowTime<T>>,
    opts: CorrelationOptions<T>,
) -> Result<KoopmanCompression<T>> {
    let t = t.into();
    let frame = CenteredFrame::new(stages, basis, opts)?;
    let m = correlation_matrix_with(stages, basis, t, opts)?;
    Ok(frame.compress(t, &m.values))
}
