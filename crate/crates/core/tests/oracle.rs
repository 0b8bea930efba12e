use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqz_core::apparatus::{combine_on_pbs, DetectionSetup, StokesSetup};
use sqz_core::gaussian::{
    add_correlated_classical_noise, apply_element, make_coherent, make_squeezed, Correlation,
    FrequencyGrid, Quadrature, SqueezeSpectrum, SymplecticElement, TwoModeState,
};
use sqz_core::oracle::{
    sample_photocurrent_timeseries, sample_stokes, OracleReport, SampleConfig, SamplingMode,
    TimeSeriesConfig,
};
use sqz_core::spectra::welch_periodogram;
use sqz_core::stokes::{stokes_means, stokes_variances_at};

fn single(f: f64) -> FrequencyGrid {
    FrequencyGrid::single(f).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng) -> TwoModeState {
    let g = single(5e6);
    let beam = |rng: &mut ChaCha8Rng| {
        let quad = if rng.random::<bool>() {
            Quadrature::Amplitude
        } else {
            Quadrature::Phase
        };
        let model = SqueezeSpectrum::flat(rng.random_range(0.1..1.0))
            .with_excess(rng.random_range(1.0..2.5));
        make_squeezed(rng.random_range(1.0..20.0), quad, &model, &g).unwrap()
    };
    let (h, v) = (beam(rng), beam(rng));
    let mut s = combine_on_pbs(&h, &v, rng.random_range(0.0..TAU)).unwrap();
    if rng.random::<bool>() {
        let c = if rng.random::<bool>() {
            Correlation::Positive
        } else {
            Correlation::Negative
        };
        s = add_correlated_classical_noise(
            &s,
            Quadrature::Amplitude,
            rng.random_range(0.0..1.0),
            c,
        )
        .unwrap();
    }
    if rng.random::<bool>() {
        s = apply_element(
            &s,
            &SymplecticElement::loss(rng.random_range(0.3..1.0)).unwrap(),
        )
        .unwrap();
    }
    s
}

fn cigar(power: f64) -> TwoModeState {
    let m = make_squeezed(
        power.sqrt(),
        Quadrature::Amplitude,
        &SqueezeSpectrum::flat(0.5),
        &single(5e6),
    )
    .unwrap();
    combine_on_pbs(&m, &m, FRAC_PI_2).unwrap()
}

#[test]
fn linearized_oracle_matches_engine_on_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..100 {
        let s = random_state(&mut rng);
        let cfg = SampleConfig::new(20_000, 1000 + k, SamplingMode::Linearized).unwrap();
        let report = sample_stokes(&s, 0, &cfg).unwrap();
        let z = report.variance_z_scores(&stokes_variances_at(&s, 0));
        assert!(z.iter().all(|z| *z <= 5.0), "state {k}: z = {z:?}");
        let zm = report.mean_z_scores(&stokes_means(&s));
        assert!(zm.iter().all(|z| *z <= 5.0), "state {k}: mean z = {zm:?}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = cigar(100.0);
    let cfg = SampleConfig::new(300_000, 5, SamplingMode::FullQuadratic).unwrap();
    let run = |threads: usize| -> OracleReport {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_stokes(&s, 0, &cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn cigar_oracle_within_two_percent() {
    let s = cigar(1e4);
    let r = sample_stokes(
        &s,
        0,
        &SampleConfig::new(1_000_000, 11, SamplingMode::Linearized).unwrap(),
    )
    .unwrap();
    let shot = s.photon_number();
    for (j, want) in [0.5, 0.5, 2.0, 0.5].into_iter().enumerate() {
        let got = r.variances[j] / shot;
        assert!((got / want - 1.0).abs() < 0.02, "S{j}: {got}");
    }
}

#[test]
fn full_quadratic_agrees_at_large_amplitude() {
    let s = cigar(1e6);
    let cfg = SampleConfig::new(200_000, 3, SamplingMode::Linearized).unwrap();
    let lin = sample_stokes(&s, 0, &cfg).unwrap();
    let full = sample_stokes(
        &s,
        0,
        &SampleConfig {
            mode: SamplingMode::FullQuadratic,
            ..cfg
        },
    )
    .unwrap();
    for j in 0..4 {
        assert!(
            (full.variances[j] / lin.variances[j] - 1.0).abs() < 1e-3,
            "S{j}"
        );
    }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn second_order_discrepancy_shrinks_with_amplitude() {
    let mut previous = [f64::INFINITY; 4];
    for alpha in [10.0f64, 100.0, 1000.0] {
        let s = cigar(alpha * alpha);
        let cfg = SampleConfig::new(200_000, 17, SamplingMode::Linearized).unwrap();
        let lin = sample_stokes(&s, 0, &cfg).unwrap();
        let full = sample_stokes(
            &s,
            0,
            &SampleConfig {
                mode: SamplingMode::FullQuadratic,
                ..cfg
            },
        )
        .unwrap();
        for j in 0..4 {
            let d = (full.variances[j] / lin.variances[j] - 1.0).abs();
            assert!(
                d < previous[j],
                "S{j} at alpha {alpha}: {d} >= {}",
                previous[j]
            );
            previous[j] = d;
        }
    }
}

#[test]
fn empirical_uncertainty_products_respect_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut states: Vec<TwoModeState> = (0..20).map(|_| random_state(&mut rng)).collect();
    states.push(cigar(1e4));
    for (k, s) in states.iter().enumerate() {
        let r = sample_stokes(
            s,
            0,
            &SampleConfig::new(100_000, k as u64, SamplingMode::Linearized).unwrap(),
        )
        .unwrap();
        for (i, j, b) in [(1, 2, 3), (2, 3, 1), (3, 1, 2)] {
            let product = r.variances[i] * r.variances[j];
            let bound = r.means[b] * r.means[b];
            let sigma = ((r.variances[j] * r.std_errors.variances[i]).powi(2)
                + (r.variances[i] * r.std_errors.variances[j]).powi(2)
                + (2.0 * r.means[b] * r.std_errors.means[b]).powi(2))
            .sqrt();
            assert!(
                product >= bound - 5.0 * sigma,
                "state {k}: V{i}V{j} = {product} < {bound}"
            );
        }
    }
}

const FS: f64 = 20.48e6;
const SEGMENT: usize = 2048;

fn series_spectrum(
    state: &TwoModeState,
    setup: StokesSetup,
    segments: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let cfg = TimeSeriesConfig {
        duration_s: (segments * SEGMENT) as f64 / FS,
        sample_rate_hz: FS,
        segment_len: SEGMENT,
        seed,
        electronic_noise_variance: 0.0,
    };
    let series =
        sample_photocurrent_timeseries(state, &DetectionSetup::canonical(setup), &cfg).unwrap();
    assert!(series.warnings.is_empty());
    let p = welch_periodogram(&series.samples, FS, SEGMENT).unwrap();
    (p.frequencies.as_slice().to_vec(), p.values)
}

#[test]
fn coherent_periodogram_sits_at_shot_noise() {
    let g = FrequencyGrid::linspace(0.0, FS / 2.0, 65).unwrap();
    let beam = make_coherent(300.0, &g).unwrap();
    let s = combine_on_pbs(&beam, &beam, 0.4).unwrap();
    let (f, p) = series_spectrum(&s, StokesSetup::S1, 300, 9);
    let band: Vec<f64> = f
        .iter()
        .zip(&p)
        .filter(|(f, _)| (3e6..=10e6).contains(*f))
        .map(|(_, p)| *p)
        .collect();
    let mean = band.iter().sum::<f64>() / band.len() as f64;
    assert!(
        (mean / s.photon_number() - 1.0).abs() < 0.03,
        "{}",
        mean / s.photon_number()
    );
}

#[test]
fn lorentzian_corner_is_recovered() {
    let (v0, corner) = (0.25, 5e6);
    let g = FrequencyGrid::linspace(0.0, FS / 2.0, 1025).unwrap();
    let model = SqueezeSpectrum::lorentzian(v0, corner);
    let beam = make_squeezed(30.0, Quadrature::Amplitude, &model, &g).unwrap();
    let s = combine_on_pbs(&beam, &beam, FRAC_PI_2).unwrap();
    let (f, p) = series_spectrum(&s, StokesSetup::S0, 300, 21);
    let shot = s.photon_number();
    let data: Vec<(f64, f64)> = f
        .iter()
        .zip(&p)
        .filter(|(f, _)| (0.5e6..=10e6).contains(*f))
        .map(|(f, p)| (*f, p / shot))
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    for a in 0..=80 {
        let v = 0.1 + 0.005 * a as f64;
        for c in 0..=400 {
            let fc = 2e6 + 2e4 * c as f64;
            let sse: f64 = data
                .iter()
                .map(|(f, y)| (y - (1.0 - (1.0 - v) / (1.0 + (f / fc).powi(2)))).powi(2))
                .sum();
            if sse < best.0 {
                best = (sse, fc);
            }
        }
    }
    assert!(
        (best.1 / corner - 1.0).abs() < 0.1,
        "fitted corner {}",
        best.1
    );
}
