use crate::construction::StageHierarchy;
use crate::dynamics::{measure, TowerSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

use super::engine::{decompose, Decomposition};

/// Ordered family of test sets `E_1..E_n` with cached measures.
#[derive(Clone, Debug)]
pub struct TestBasis<T> {
    sets: Vec<TowerSet<T>>,
    measures: Vec<T>,
    pub(crate) levels: Decomposition<T>,
    description: String,
}

impl<T: Real> TestBasis<T> {
    pub fn new(stages: &StageHierarchy<T>, sets: Vec<TowerSet<T>>, description: impl Into<String>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::param("basis", "no sets"));
        }
        let measures: Vec<T> = sets.iter().map(|s| measure(stages, s)).collect();
        if let Some(k) = measures.iter().position(|m| *m <= T::zero()) {
            return Err(Error::param("basis", format!("set {k} has zero measure")));
        }
        let levels = decompose(stages, &sets);
        Ok(Self { sets, measures, levels, description: description.into() })
    }

    /// `count` equal horizontal slabs partitioning the stage tower.
    pub fn slabs(stages: &StageHierarchy<T>, stage: usize, count: usize) -> Result<Self> {
        let sets = TowerSet::slabs(stages, stage, count)?;
        Self::new(stages, sets, format!("slabs(stage={stage},count={count})"))
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[TowerSet<T>] {
        &self.sets
    }

    pub fn measures(&self) -> &[T] {
        &self.measures
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Mass (normalized) that could not be cut into full-width pieces.
    pub fn unresolved_mass(&self, stages: &StageHierarchy<T>) -> T {
        self.levels.unresolved.iter().fold(T::zero(), |a, b| a + *b) / stages.total_mass()
    }

    /// `Θ̂_ab = μ(E_a) μ(E_b)`.
    pub fn theta(&self) -> Matrix<T> {
        let n = self.len();
        Matrix::from_fn(n, n, |a, b| self.measures[a] * self.measures[b])
    }
}
