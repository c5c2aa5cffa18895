//! Correlation matrices over test bases, weak-limit fits and mixing profiles.

mod basis;
mod correlation;
mod decay;
pub mod engine;
mod weak_limit;

pub use basis::TestBasis;
pub use correlation::{
    correlation, correlation_matrices, correlation_matrix, correlation_matrix_with, correlation_with, Correlation,
    CorrelationMatrix, CorrelationOptions,
};
pub use decay::{mixing_decay_profile, DecayPoint};
pub use weak_limit::{
    average_matrix, default_lemma_windows, fit_weak_limit, scan_lemma_times, Dictionary, LemmaPoint, LemmaScan,
    LemmaWindow, Term, WeakLimitFit, DEFAULT_QUADRATURE_DIVISIONS,
};
