//! Spectral estimates from autocorrelations and multiplicity probes on
//! compressions of the Koopman unitaries.

mod cyclic;
mod density;
mod koopman;

pub use cyclic::{
    cyclic_rank_probe, default_probe_times, multiplicity_probe, random_start, ComplexMatrix, CyclicProbe,
    MultiplicityProbeReport, SquareMode, DEFAULT_RANK_TOL,
};
pub use density::{
    autocorrelation, convolution_density, overlap_statistic, spectral_density, Autocorrelation, SpectralEstimate,
    Window,
};
pub use koopman::{koopman_compression, CenteredFrame, KoopmanCompression, MAX_GRAM_CONDITION};
