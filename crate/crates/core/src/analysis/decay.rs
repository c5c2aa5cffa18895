use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::StageHierarchy;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::time::FlowTime;

use super::basis::TestBasis;
use super::correlation::{correlation_matrix_with, CorrelationOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint<T> {
    pub t: FlowTime<T>,
    /// `max_ab |M_ab(t) - μ(E_a)μ(E_b)|`; `None` when the stages ran out.
    pub deviation: Option<T>,
    pub tail_bound: Option<T>,
    pub stage_used: Option<usize>,
}

pub fn mixing_decay_profile<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    times: &[FlowTime<T>],
    opts: CorrelationOptions<T>,
) -> Result<Vec<DecayPoint<T>>> {
    let theta = basis.theta();
    times
        .par_iter()
        .map(|t| match correlation_matrix_with(stages, basis, *t, opts) {
            Ok(c) => Ok(DecayPoint {
                t: *t,
                deviation: Some(c.values.sub(&theta).max_abs()),
                tail_bound: Some(c.tail_bound),
                stage_used: Some(c.stage_used),
            }),
            Err(Error::DepthExhausted { .. }) => Ok(DecayPoint { t: *t, deviation: None, tail_bound: None, stage_used: None }),
            Err(e) => Err(e),
        })
        .collect()
}
