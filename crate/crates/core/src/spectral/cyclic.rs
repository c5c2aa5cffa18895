//! Numerical cyclic-subspace rank of Kronecker squares of compressions.
//!
//! A vector of `C^n ⊗ C^n` is stored as an `n × n` matrix `V`, so that
//! `(K ⊗ K) vec(V) = vec(K V Kᵀ)`. The symmetric square is the subspace of
//! symmetric `V`; the Frobenius inner product restricted to it matches the
//! coordinates in the orthonormal basis `e_a ⊗ e_a`, `(e_a ⊗ e_b + e_b ⊗ e_a)/√2`.
//!
//! The probe measures the span of `{W v}` over words `W` in the sampled
//! operators. This is a finite-dimensional diagnostic: it cannot certify the
//! spectral multiplicity of the underlying unitary.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{correlation_matrices, CorrelationOptions, TestBasis};
use crate::construction::StageHierarchy;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::time::FlowTime;

use super::koopman::CenteredFrame;

pub const DEFAULT_RANK_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SquareMode {
    /// `K ⊗ K` on `C^{n²}`.
    Full,
    /// `K ⊙ K` on the symmetric subspace, dimension `n(n+1)/2`.
    Sym,
}

impl SquareMode {
    pub fn dimension(self, n: usize) -> usize {
        match self {
            SquareMode::Full => n * n,
            SquareMode::Sym => n * (n + 1) / 2,
        }
    }
}

/// Dense square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix<T> {
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex::new(T::zero(), T::zero()); n * n] }
    }

    pub fn from_real(m: &Matrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::param("matrix", "must be square"));
        }
        Ok(Self { n: m.rows(), data: m.as_slice().iter().map(|x| Complex::new(*x, T::zero())).collect() })
    }

    pub fn diagonal(entries: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (k, e) in entries.iter().enumerate() {
            m.data[k * m.n + k] = *e;
        }
        m
    }

    /// `diag(e^{iθ_1}, …, e^{iθ_n})`.
    pub fn unit_phases(theta: &[T]) -> Self {
        Self::diagonal(&theta.iter().map(|t| Complex::from_polar(T::one(), *t)).collect::<Vec<_>>())
    }

    pub fn identity(n: usize) -> Self {
        Self::unit_phases(&vec![T::zero(); n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.n + j]
    }

    /// `K V Kᵀ`.
    fn sandwich(&self, v: &Self) -> Self {
        let n = self.n;
        let mut kv = Self::zeros(n);
        for i in 0..n {
            for l in 0..n {
                let k = self.data[i * n + l];
                if k == Complex::new(T::zero(), T::zero()) {
                    continue;
                }
                for j in 0..n {
                    kv.data[i * n + j] = kv.data[i * n + j] + k * v.data[l * n + j];
                }
            }
        }
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex::new(T::zero(), T::zero());
                for l in 0..n {
                    acc = acc + kv.data[i * n + l] * self.data[j * n + l];
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    fn inner(&self, other: &Self) -> Complex<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b)
    }

    fn norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, a| acc + a.norm_sqr()).sqrt()
    }

    fn scale(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a = *a * s;
        }
    }

    fn axpy(&mut self, c: Complex<T>, x: &Self) {
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a = *a - c * b;
        }
    }

    fn symmetrized(&self) -> Self {
        let n = self.n;
        let half = T::of(0.5);
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = (self.data[i * n + j] + self.data[j * n + i]) * half;
            }
        }
        out
    }
}

/// Seeded pseudo-random unit start vector (symmetric for [`SquareMode::Sym`]).
pub fn random_start<T: Real>(n: usize, mode: SquareMode, seed: u64) -> ComplexMatrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = ComplexMatrix::zeros(n);
    for a in v.data.iter_mut() {
        *a = Complex::new(T::of(rng.gen_range(-1.0..1.0)), T::of(rng.gen_range(-1.0..1.0)));
    }
    if mode == SquareMode::Sym {
        v = v.symmetrized();
    }
    let norm = v.norm();
    v.scale(T::one() / norm);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicProbe {
    pub mode: SquareMode,
    pub rank: usize,
    pub dimension: usize,
    pub ratio: f64,
    /// Rank after each word length, starting with the start vector alone.
    pub growth: Vec<usize>,
    /// The word-length budget ran out before the span closed.
    pub inconclusive: bool,
}

/// Dimension of the span of `{W v}` over words `W` in `{K_k ⊗ K_k}`.
///
/// Words are explored by length; the span has closed once a full length adds
/// no new direction. A candidate counts as new when, after normalization and
/// two Gram-Schmidt passes, its residual exceeds `tol`.
pub fn cyclic_rank_probe<T: Real>(
    ops: &[ComplexMatrix<T>],
    mode: SquareMode,
    start: &ComplexMatrix<T>,
    tol: T,
    max_word_len: usize,
) -> Result<CyclicProbe> {
    let n = start.n;
    if ops.is_empty() {
        return Err(Error::param("matrices", "no operators"));
    }
    if ops.iter().any(|k| k.n != n) {
        return Err(Error::param("matrices", "operators and start vector differ in dimension"));
    }
    if !(tol > T::zero()) {
        return Err(Error::param("tol", format!("must be positive, got {tol}")));
    }
    let start = if mode == SquareMode::Sym { start.symmetrized() } else { start.clone() };
    let dimension = mode.dimension(n);
    let mut basis: Vec<ComplexMatrix<T>> = Vec::new();
    if !try_add(&mut basis, start, tol) {
        return Err(Error::DegenerateInput("start vector vanishes in the chosen subspace".into()));
    }
    let mut frontier = vec![0];
    let mut growth = vec![1];
    let mut closed = false;
    for _ in 0..max_word_len {
        let mut added = Vec::new();
        for &idx in &frontier {
            for k in ops {
                let w = k.sandwich(&basis[idx]);
                if basis.len() < dimension && try_add(&mut basis, w, tol) {
                    added.push(basis.len() - 1);
                }
            }
        }
        growth.push(basis.len());
        if added.is_empty() || basis.len() == dimension {
            closed = true;
            break;
        }
        frontier = added;
    }
    let rank = basis.len();
    Ok(CyclicProbe { mode, rank, dimension, ratio: rank as f64 / dimension as f64, growth, inconclusive: !closed })
}

fn try_add<T: Real>(basis: &mut Vec<ComplexMatrix<T>>, mut w: ComplexMatrix<T>, tol: T) -> bool {
    let norm = w.norm();
    if !(norm > T::zero()) || !norm.is_finite() {
        return false;
    }
    w.scale(T::one() / norm);
    for _ in 0..2 {
        for q in basis.iter() {
            let c = q.inner(&w);
            w.axpy(c, q);
        }
    }
    let r = w.norm();
    if r > tol {
        w.scale(T::one() / r);
        basis.push(w);
        true
    } else {
        false
    }
}

/// `{h_j} ∪ {k·h_1 : k = 1..8}`.
pub fn default_probe_times<T: Real>(j: usize) -> Vec<FlowTime<T>> {
    let mut times = vec![FlowTime::height(j)];
    times.extend((1..=8).map(|k| FlowTime::multiple(k, 1)));
    times
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityProbeReport<T> {
    pub basis_size: usize,
    pub times: Vec<FlowTime<T>>,
    pub seed: u64,
    pub rank_tolerance: T,
    pub sym: CyclicProbe,
    pub full: CyclicProbe,
    pub sym_cyclic_ratio: f64,
    pub full_cyclic_ratio: f64,
    pub inconclusive: bool,
}

/// Runs both probes on the compressions `K(t)` of the sampled times.
pub fn multiplicity_probe<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    times: &[FlowTime<T>],
    seed: u64,
    tol: T,
    opts: CorrelationOptions<T>,
) -> Result<MultiplicityProbeReport<T>> {
    if times.is_empty() {
        return Err(Error::param("times", "no probe times"));
    }
    let frame = CenteredFrame::new(stages, basis, opts)?;
    let ops = correlation_matrices(stages, basis, times, opts)
        .into_iter()
        .map(|m| m.and_then(|m| ComplexMatrix::from_real(&frame.compress(m.t, &m.values).matrix)))
        .collect::<Result<Vec<_>>>()?;
    let n = basis.len();
    let budget = n * n + 1;
    let full = cyclic_rank_probe(&ops, SquareMode::Full, &random_start(n, SquareMode::Full, seed), tol, budget)?;
    let sym = cyclic_rank_probe(&ops, SquareMode::Sym, &random_start(n, SquareMode::Sym, seed), tol, budget)?;
    Ok(MultiplicityProbeReport {
        basis_size: n,
        times: times.to_vec(),
        seed,
        rank_tolerance: tol,
        sym_cyclic_ratio: sym.ratio,
        full_cyclic_ratio: full.ratio,
        inconclusive: sym.inconclusive || full.inconclusive,
        sym,
        full,
    })
}
