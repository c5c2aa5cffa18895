use num_complex::Complex;
use proptest::prelude::*;
use rankone::spectral::{
    cyclic_rank_probe, overlap_statistic, random_start, spectral_density, Autocorrelation, ComplexMatrix, SpectralEstimate,
    SquareMode, Window,
};

fn samples() -> impl Strategy<Value = Vec<f64>> {
    // A decaying cosine mixture keeps the raw transform mostly positive.
    (0.5..3.0f64, 0.05..0.4f64, 0.0..0.45f64, 0.0..1.0f64).prop_map(|(amp, decay, f, w)| {
        (0..128)
            .map(|k| {
                let t = k as f64 * 0.1;
                amp * (-decay * t).exp() * (w * (std::f64::consts::TAU * f * t).cos() + (1.0 - w))
            })
            .collect()
    })
}

fn density(dt: f64, v: Vec<f64>) -> SpectralEstimate<f64> {
    spectral_density(&Autocorrelation::new(dt, v).unwrap(), Window::Hann).unwrap()
}

fn bump(center: f64, width: f64) -> SpectralEstimate<f64> {
    let freqs: Vec<f64> = (0..=200).map(|k| k as f64 * 0.005).collect();
    let density = freqs.iter().map(|f| (-((f - center) / width).powi(2)).exp()).collect();
    SpectralEstimate { freqs, density, window: Window::None, window_len: 201, source_span: (0.0, 1.0), clipped_mass: 0.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_positively_homogeneous(v in samples(), c in 0.1..10.0f64) {
        let base = density(0.1, v.clone());
        let scaled = density(0.1, v.iter().map(|x| c * x).collect());
        for (a, b) in base.density.iter().zip(&scaled.density) {
            prop_assert!((c * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn density_is_additive_without_clipping(u in samples(), v in samples()) {
        let (du, dv) = (density(0.1, u.clone()), density(0.1, v.clone()));
        let sum = density(0.1, u.iter().zip(&v).map(|(a, b)| a + b).collect());
        prop_assume!(du.clipped_mass == 0.0 && dv.clipped_mass == 0.0 && sum.clipped_mass == 0.0);
        for k in 0..sum.density.len() {
            prop_assert!((du.density[k] + dv.density[k] - sum.density[k]).abs() <= 1e-9 * (1.0 + sum.density[k]));
        }
    }

    #[test]
    fn time_rescaling_rescales_frequencies(v in samples(), c in 0.2..5.0f64) {
        let base = density(0.1, v.clone());
        let stretched = density(0.1 * c, v);
        for k in 0..base.freqs.len() {
            prop_assert!((stretched.freqs[k] * c - base.freqs[k]).abs() <= 1e-12 * (1.0 + base.freqs[k]));
            prop_assert!((stretched.density[k] / c - base.density[k]).abs() <= 1e-9 * (1.0 + base.density[k]));
        }
    }

    #[test]
    fn overlap_is_symmetric_and_scale_free(c1 in 0.1..0.9f64, c2 in 0.1..0.9f64, w in 0.02..0.2f64, s in 0.1..10.0f64) {
        let (p, q) = (bump(c1, w), bump(c2, w));
        let pq = overlap_statistic(&p, &q).unwrap();
        prop_assert!((pq - overlap_statistic(&q, &p).unwrap()).abs() <= 1e-12);
        let mut scaled = q.clone();
        scaled.density.iter_mut().for_each(|d| *d *= s);
        prop_assert!((pq - overlap_statistic(&p, &scaled).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&pq));
    }

    #[test]
    fn diagonal_unitaries_span_distinct_phase_sums(theta in prop::collection::vec(0.0..std::f64::consts::TAU, 2..6)) {
        let n = theta.len();
        let mut sums: Vec<f64> = Vec::new();
        for a in 0..n {
            for b in a..n {
                sums.push((theta[a] + theta[b]).rem_euclid(std::f64::consts::TAU));
            }
        }
        sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gaps = sums.windows(2).map(|w| w[1] - w[0]).chain([std::f64::consts::TAU - sums[sums.len() - 1] + sums[0]]);
        prop_assume!(gaps.fold(f64::INFINITY, f64::min) > 0.05);
        let k = ComplexMatrix::diagonal(&theta.iter().map(|t| Complex::from_polar(1.0, *t)).collect::<Vec<_>>());
        let sym = cyclic_rank_probe(&[k.clone()], SquareMode::Sym, &random_start(n, SquareMode::Sym, 5), 1e-8, n * n + 1).unwrap();
        prop_assert_eq!(sym.rank, n * (n + 1) / 2);
        prop_assert!(!sym.inconclusive);
        // The full square repeats every off-diagonal sum twice.
        let full = cyclic_rank_probe(&[k], SquareMode::Full, &random_start(n, SquareMode::Full, 5), 1e-8, n * n + 1).unwrap();
        prop_assert_eq!(full.rank, n * (n + 1) / 2);
    }
}

#[test]
fn non_uniform_grid_is_rejected() {
    assert!(Autocorrelation::from_grid(&[0.0, 0.1, 0.25], vec![1.0, 0.5, 0.2]).is_err());
    assert!(Autocorrelation::from_grid(&[0.1, 0.2, 0.3], vec![1.0, 0.5, 0.2]).is_err());
    let r = Autocorrelation::from_grid(&[0.0, 0.1, 0.2], vec![1.0, 0.5, 0.2]).unwrap();
    assert_eq!(r.dt, 0.1);
}

#[test]
fn density_integrates_to_the_variance() {
    let v: Vec<f64> = (0..256).map(|k| (-0.2 * k as f64 * 0.1).exp()).collect();
    let d = density(0.1, v);
    assert!(d.clipped_mass.abs() < 1e-3);
    assert!((d.integral() - 1.0).abs() < 2e-2, "{}", d.integral());
}
