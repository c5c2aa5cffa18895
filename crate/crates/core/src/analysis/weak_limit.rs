use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::StageHierarchy;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, Matrix};
use crate::scalar::Real;
use crate::time::FlowTime;

use super::basis::TestBasis;
use super::correlation::{correlation_matrix_with, CorrelationOptions};

/// Midpoint-rule subdivisions of `[0, a]` for the averaging operator.
pub const DEFAULT_QUADRATURE_DIVISIONS: usize = 64;

/// Relative pivot threshold below which the dictionary Gram matrix counts as
/// rank deficient.
const GRAM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Theta,
    Id,
    Avg,
}

/// Dictionary matrices over a fixed test basis.
#[derive(Clone, Debug)]
pub struct Dictionary<T> {
    theta: Matrix<T>,
    identity: Matrix<T>,
    average: Option<(T, Matrix<T>)>,
}

impl<T: Real> Dictionary<T> {
    /// `Θ̂` and `Î`; `Î_ab = μ(E_a ∩ E_b)` is the correlation matrix at 0.
    pub fn new(stages: &StageHierarchy<T>, basis: &TestBasis<T>, opts: CorrelationOptions<T>) -> Result<Self> {
        let identity = correlation_matrix_with(stages, basis, FlowTime::plain(T::zero()), opts)?.values;
        Ok(Self { theta: basis.theta(), identity, average: None })
    }

    /// Adds `Â(a)` computed with `divisions` midpoint nodes.
    pub fn with_average(
        mut self,
        stages: &StageHierarchy<T>,
        basis: &TestBasis<T>,
        a: T,
        divisions: usize,
        opts: CorrelationOptions<T>,
    ) -> Result<Self> {
        self.average = Some((a, average_matrix(stages, basis, a, divisions, opts)?));
        Ok(self)
    }

    /// Builds a dictionary from precomputed matrices.
    pub fn from_matrices(theta: Matrix<T>, identity: Matrix<T>, average: Option<(T, Matrix<T>)>) -> Result<Self> {
        let n = theta.rows();
        let square = |m: &Matrix<T>| m.rows() == n && m.cols() == n;
        if !square(&theta) || !square(&identity) || average.as_ref().is_some_and(|(_, m)| !square(m)) {
            return Err(Error::param("dictionary", "matrices must share one square shape"));
        }
        Ok(Self { theta, identity, average })
    }

    pub fn theta(&self) -> &Matrix<T> {
        &self.theta
    }

    pub fn identity(&self) -> &Matrix<T> {
        &self.identity
    }

    pub fn average(&self) -> Option<(T, &Matrix<T>)> {
        self.average.as_ref().map(|(a, m)| (*a, m))
    }

    fn matrix(&self, term: Term) -> Result<&Matrix<T>> {
        match term {
            Term::Theta => Ok(&self.theta),
            Term::Id => Ok(&self.identity),
            Term::Avg => self
                .average
                .as_ref()
                .map(|(_, m)| m)
                .ok_or_else(|| Error::param("dictionary", "Avg requested but no averaging window was computed")),
        }
    }
}

/// `Â(a)_ab = (1/a) ∫_0^a μ(T_s E_a ∩ E_b) ds` by the composite midpoint rule.
pub fn average_matrix<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    a: T,
    divisions: usize,
    opts: CorrelationOptions<T>,
) -> Result<Matrix<T>> {
    if !(a > T::zero()) || !a.is_finite() {
        return Err(Error::param("a", format!("window length must be positive, got {a}")));
    }
    if divisions == 0 {
        return Err(Error::param("divisions", "must be at least 1"));
    }
    let step = a / T::of_usize(divisions);
    let nodes: Vec<T> = (0..divisions).map(|k| step * (T::of_usize(k) + T::of(0.5))).collect();
    let mats = nodes
        .par_iter()
        .map(|s| correlation_matrix_with(stages, basis, FlowTime::plain(*s), opts).map(|c| c.values))
        .collect::<Result<Vec<_>>>()?;
    let n = basis.len();
    let mut acc = Matrix::zeros(n, n);
    for m in &mats {
        for a in 0..n {
            for b in 0..n {
                acc[(a, b)] += m[(a, b)];
            }
        }
    }
    Ok(acc.scale(T::one() / T::of_usize(divisions)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLimitFit<T> {
    pub t: FlowTime<T>,
    /// Coefficient of `Θ`.
    pub alpha: T,
    /// Coefficient of `I`.
    pub beta: T,
    /// Coefficient of the averaging operator.
    pub gamma: T,
    /// Averaging window, when `Avg` was fitted.
    pub a: Option<T>,
    /// `‖M - fit‖_F / ‖M‖_F`.
    pub residual: T,
}

/// Least-squares fit of `m` over the listed dictionary terms.
pub fn fit_weak_limit<T: Real>(t: FlowTime<T>, m: &Matrix<T>, dict: &Dictionary<T>, terms: &[Term]) -> Result<WeakLimitFit<T>> {
    if terms.is_empty() {
        return Err(Error::DegenerateDictionary("empty dictionary".into()));
    }
    let mats = terms.iter().map(|&term| dict.matrix(term)).collect::<Result<Vec<_>>>()?;
    if mats.iter().any(|d| d.rows() != m.rows() || d.cols() != m.cols()) {
        return Err(Error::param("M", "shape differs from the dictionary"));
    }
    let k = mats.len();
    let gram = Matrix::from_fn(k, k, |i, j| mats[i].dot(mats[j]));
    let l = cholesky(&gram, T::of(GRAM_TOL)).ok_or_else(|| {
        Error::DegenerateDictionary(format!("Gram matrix of {terms:?} is rank deficient"))
    })?;
    let rhs = Matrix::from_fn(k, 1, |i, _| mats[i].dot(m));
    let coef = solve_lower_transpose(&l, &solve_lower(&l, &rhs));
    let mut fit = Matrix::zeros(m.rows(), m.cols());
    for (i, d) in mats.iter().enumerate() {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                fit[(r, c)] += coef[(i, 0)] * d[(r, c)];
            }
        }
    }
    let norm = m.frobenius();
    let miss = m.sub(&fit).frobenius();
    let residual = if norm > T::zero() { miss / norm } else { miss };
    let mut out = WeakLimitFit {
        t,
        alpha: T::zero(),
        beta: T::zero(),
        gamma: T::zero(),
        a: None,
        residual,
    };
    for (i, term) in terms.iter().enumerate() {
        let c = coef[(i, 0)];
        match term {
            Term::Theta => out.alpha = c,
            Term::Id => out.beta = c,
            Term::Avg => {
                out.gamma = c;
                out.a = dict.average().map(|(a, _)| a);
            }
        }
    }
    Ok(out)
}

/// Times `center + u` for `|u| ≤ radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaWindow<T> {
    pub center: FlowTime<T>,
    pub radius: T,
}

/// Windows of radius `2a` around `k·h_j`, `k = 1..⌈a√j/ε⌉`.
pub fn default_lemma_windows<T: Real>(stage: usize, a: T, eps: T) -> Vec<LemmaWindow<T>> {
    let kmax = (a * T::of_usize(stage).sqrt() / eps).ceil().to_i64().unwrap_or(1).max(1);
    (1..=kmax)
        .map(|k| LemmaWindow { center: FlowTime::multiple(k, stage), radius: a + a })
        .collect()
}

/// Both fits at one sampled time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaPoint<T> {
    /// Fit over `{Θ, I}`.
    pub identity: WeakLimitFit<T>,
    /// Fit over `{Θ, Avg(a)}`.
    pub average: WeakLimitFit<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaScan<T> {
    pub a: T,
    /// Sorted by the `{Θ, Avg(a)}` residual, ties in sampling order.
    pub points: Vec<LemmaPoint<T>>,
    /// Sampled times that ran out of stages.
    pub exhausted: Vec<FlowTime<T>>,
}

impl<T: Real> LemmaScan<T> {
    pub fn best_identity(&self) -> Option<&WeakLimitFit<T>> {
        self.points
            .iter()
            .map(|p| &p.identity)
            .min_by(|x, y| x.residual.partial_cmp(&y.residual).expect("finite residuals"))
    }

    pub fn best_average(&self) -> Option<&WeakLimitFit<T>> {
        self.points.first().map(|p| &p.average)
    }

    /// Best `{Θ, I}` residual over best `{Θ, Avg(a)}` residual.
    pub fn improvement(&self) -> Option<T> {
        let (i, a) = (self.best_identity()?.residual, self.best_average()?.residual);
        Some(if a > T::zero() { i / a } else { T::infinity() })
    }
}

/// Samples every window with spacing `step` and fits both dictionaries.
pub fn scan_lemma_times<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    dict: &Dictionary<T>,
    windows: &[LemmaWindow<T>],
    step: T,
    opts: CorrelationOptions<T>,
) -> Result<LemmaScan<T>> {
    if windows.is_empty() {
        return Err(Error::param("windows", "no scan windows"));
    }
    if !(step > T::zero()) {
        return Err(Error::param("step", format!("must be positive, got {step}")));
    }
    let a = dict
        .average()
        .map(|(a, _)| a)
        .ok_or_else(|| Error::param("dictionary", "lemma scan needs the averaging matrix"))?;
    let mut times = Vec::new();
    for w in windows {
        if !(w.radius >= T::zero()) {
            return Err(Error::param("windows", format!("negative radius {}", w.radius)));
        }
        let count = (w.radius * T::of(2.0) / step).round().to_usize().unwrap_or(0);
        times.extend((0..=count).map(|i| w.center.plus(T::of_usize(i) * step - w.radius)));
    }
    let results: Vec<Result<Option<LemmaPoint<T>>>> = times
        .par_iter()
        .map(|t| match correlation_matrix_with(stages, basis, *t, opts) {
            Ok(c) => Ok(Some(LemmaPoint {
                identity: fit_weak_limit(*t, &c.values, dict, &[Term::Theta, Term::Id])?,
                average: fit_weak_limit(*t, &c.values, dict, &[Term::Theta, Term::Avg])?,
            })),
            Err(Error::DepthExhausted { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut points = Vec::new();
    let mut exhausted = Vec::new();
    for (t, r) in times.iter().zip(results) {
        match r? {
            Some(p) => points.push(p),
            None => exhausted.push(*t),
        }
    }
    points.sort_by(|x, y| x.average.residual.partial_cmp(&y.average.residual).expect("finite residuals"));
    Ok(LemmaScan { a, points, exhausted })
}
