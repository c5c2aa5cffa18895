use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use rustfft::{FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::analysis::{correlation_matrices, CorrelationOptions, TestBasis};
use crate::construction::StageHierarchy;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::time::FlowTime;

/// Relative spacing error tolerated when checking that a grid is uniform.
const UNIFORM_TOL: f64 = 1e-9;

/// Lag window applied to the autocorrelation before the transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Window {
    None,
    Hann,
    Blackman,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::None => "none",
            Window::Hann => "hann",
            Window::Blackman => "blackman",
        }
    }

    /// Weight at lag `k` of a window reaching zero at lag `n`.
    fn weight<T: Real>(self, k: usize, n: usize) -> T {
        let x = T::PI() * T::of_usize(k) / T::of_usize(n);
        match self {
            Window::None => T::one(),
            Window::Hann => T::of(0.5) * (T::one() + x.cos()),
            Window::Blackman => T::of(0.42) + T::of(0.5) * x.cos() + T::of(0.08) * (x + x).cos(),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "rect" | "rectangular" => Ok(Window::None),
            "hann" | "hanning" => Ok(Window::Hann),
            "blackman" => Ok(Window::Blackman),
            other => Err(Error::param("window", format!("unknown window '{other}' (none, hann, blackman)"))),
        }
    }
}

/// `r(k·dt)` for `k = 0..len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation<T> {
    pub dt: T,
    pub values: Vec<T>,
}

impl<T: Real> Autocorrelation<T> {
    pub fn new(dt: T, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::param("dt", format!("grid step must be positive, got {dt}")));
        }
        if values.len() < 2 {
            return Err(Error::param("grid", "need at least two samples"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite autocorrelation sample".into()));
        }
        Ok(Self { dt, values })
    }

    /// Accepts explicit sample times, which must be `0, dt, 2dt, …`.
    pub fn from_grid(times: &[T], values: Vec<T>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::param("grid", "times and values must have equal length ≥ 2"));
        }
        let dt = times[1] - times[0];
        let tol = T::of(UNIFORM_TOL) * dt.abs().max(T::min_positive_value());
        let uniform = times[0].abs() <= tol
            && times.iter().enumerate().all(|(k, t)| (*t - T::of_usize(k) * dt).abs() <= tol * T::of_usize(k.max(1)));
        if !uniform {
            return Err(Error::param("grid", "sample times must form a uniform grid starting at 0"));
        }
        Self::new(dt, values)
    }

    /// `r(t)²`, whose spectral measure is `σ ∗ σ`.
    pub fn squared(&self) -> Self {
        Self { dt: self.dt, values: self.values.iter().map(|v| *v * *v).collect() }
    }
}

/// `r(t) = Σ_ab c_a c_b (μ(T_t E_a ∩ E_b) - μ(E_a)μ(E_b))` on `t = k·dt`.
///
/// Samples whose correlation ran out of stages are reported in the error.
pub fn autocorrelation<T: Real>(
    stages: &StageHierarchy<T>,
    basis: &TestBasis<T>,
    coeffs: &[T],
    dt: T,
    len: usize,
    opts: CorrelationOptions<T>,
) -> Result<Autocorrelation<T>> {
    if coeffs.len() != basis.len() {
        return Err(Error::param("coeffs", format!("{} coefficients for {} basis sets", coeffs.len(), basis.len())));
    }
    let times: Vec<FlowTime<T>> = (0..len).map(|k| FlowTime::plain(T::of_usize(k) * dt)).collect();
    let theta = basis.theta();
    let mut values = Vec::with_capacity(len);
    let mut exhausted = Vec::new();
    for (k, m) in correlation_matrices(stages, basis, &times, opts).into_iter().enumerate() {
        match m {
            Ok(m) => {
                let mut r = T::zero();
                for (a, ca) in coeffs.iter().enumerate() {
                    for (b, cb) in coeffs.iter().enumerate() {
                        r += *ca * *cb * (m.values[(a, b)] - theta[(a, b)]);
                    }
                }
                values.push(r);
            }
            Err(Error::DepthExhausted { .. }) => {
                exhausted.push(k);
                values.push(T::nan());
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(first) = exhausted.first() {
        return Err(Error::DegenerateInput(format!(
            "{} samples exhausted the stages, first at t = {}",
            exhausted.len(),
            T::of_usize(*first) * dt
        )));
    }
    Autocorrelation::new(dt, values)
}

/// One-sided spectral density on `[0, 1/(2 dt)]`, normalized so that its
/// trapezoid integral equals `r(0)` before clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate<T> {
    /// Cycles per time unit.
    pub freqs: Vec<T>,
    pub density: Vec<T>,
    pub window: Window,
    /// Number of lags used (the window reaches zero one lag beyond).
    pub window_len: usize,
    /// `(0, (len - 1)·dt)`.
    pub source_span: (T, T),
    /// Trapezoid integral of the negative part removed by clipping.
    pub clipped_mass: T,
}

impl<T: Real> SpectralEstimate<T> {
    pub fn integral(&self) -> T {
        trapezoid(&self.freqs, &self.density)
    }

    /// Frequency of the largest density value.
    pub fn peak(&self) -> T {
        let k = self
            .density
            .iter()
            .enumerate()
            .fold(0, |best, (k, d)| if *d > self.density[best] { k } else { best });
        self.freqs[k]
    }

    pub fn bin_width(&self) -> T {
        self.freqs[1] - self.freqs[0]
    }
}

fn trapezoid<T: Real>(x: &[T], y: &[T]) -> T {
    x.windows(2)
        .zip(y.windows(2))
        .fold(T::zero(), |acc, (xs, ys)| acc + (xs[1] - xs[0]) * (ys[0] + ys[1]) * T::of(0.5))
}

/// Tapered transform of the even extension of `r`.
pub fn spectral_density<T: Real + FftNum>(r: &Autocorrelation<T>, window: Window) -> Result<SpectralEstimate<T>> {
    let n = r.values.len();
    let size = (2 * n).next_power_of_two() * 2;
    let mut buf = vec![Complex::new(T::zero(), T::zero()); size];
    for (k, v) in r.values.iter().enumerate() {
        let x = *v * window.weight::<T>(k, n);
        buf[k] = Complex::new(x, T::zero());
        if k > 0 {
            buf[size - k] = Complex::new(x, T::zero());
        }
    }
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);
    let half = size / 2;
    let df = T::one() / (T::of_usize(size) * r.dt);
    let freqs: Vec<T> = (0..=half).map(|m| T::of_usize(m) * df).collect();
    let raw: Vec<T> = buf[..=half].iter().map(|c| T::of(2.0) * r.dt * c.re).collect();
    let negative: Vec<T> = raw.iter().map(|d| d.min(T::zero())).collect();
    let clipped_mass = T::zero() - trapezoid(&freqs, &negative);
    let density = raw.iter().map(|d| d.max(T::zero())).collect();
    Ok(SpectralEstimate {
        freqs,
        density,
        window,
        window_len: n,
        source_span: (T::zero(), T::of_usize(n - 1) * r.dt),
        clipped_mass,
    })
}

/// Density of `σ ∗ σ`, estimated from `r(t)²`.
///
/// For a real flow `σ` is symmetric, so this identifies `σ` with its
/// reflection.
pub fn convolution_density<T: Real + FftNum>(r: &Autocorrelation<T>, window: Window) -> Result<SpectralEstimate<T>> {
    spectral_density(&r.squared(), window)
}

/// Bhattacharyya affinity `Σ √(p_i q_i)` of the two densities normalized to
/// unit mass on a common grid.
pub fn overlap_statistic<T: Real>(d1: &SpectralEstimate<T>, d2: &SpectralEstimate<T>) -> Result<T> {
    let top = last(&d1.freqs).min(last(&d2.freqs));
    let mut grid: Vec<T> = d1.freqs.iter().chain(&d2.freqs).copied().filter(|f| *f <= top).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite frequencies"));
    grid.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * top);
    if grid.len() < 2 {
        return Err(Error::DegenerateInput("frequency grids do not overlap".into()));
    }
    let p = bin_masses(&grid, &interpolate(&d1.freqs, &d1.density, &grid))?;
    let q = bin_masses(&grid, &interpolate(&d2.freqs, &d2.density, &grid))?;
    let bc = p.iter().zip(&q).fold(T::zero(), |acc, (a, b)| acc + (*a * *b).sqrt());
    Ok(bc.min(T::one()))
}

fn last<T: Real>(v: &[T]) -> T {
    *v.last().expect("non-empty grid")
}

fn interpolate<T: Real>(x: &[T], y: &[T], at: &[T]) -> Vec<T> {
    at.iter()
        .map(|f| {
            let k = x.partition_point(|v| v <= f);
            if k == 0 {
                y[0]
            } else if k == x.len() {
                y[x.len() - 1]
            } else {
                let w = (*f - x[k - 1]) / (x[k] - x[k - 1]);
                y[k - 1] + w * (y[k] - y[k - 1])
            }
        })
        .collect()
}

/// Trapezoid mass per grid cell, normalized to sum 1.
fn bin_masses<T: Real>(grid: &[T], d: &[T]) -> Result<Vec<T>> {
    let cells: Vec<T> = grid
        .windows(2)
        .zip(d.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) * T::of(0.5))
        .collect();
    let total = cells.iter().fold(T::zero(), |a, b| a + *b);
    if !(total > T::zero()) {
        return Err(Error::DegenerateInput("density has zero mass".into()));
    }
    Ok(cells.into_iter().map(|c| c / total).collect())
}
