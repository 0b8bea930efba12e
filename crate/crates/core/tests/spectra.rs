use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqz_core::gaussian::FrequencyGrid;
use sqz_core::spectra::{
    average_and_correct, normalize_to_shot, smooth_rbw, NoiseSpectrum, TraceBundle, DEFAULT_RBW_HZ,
};

fn grid() -> FrequencyGrid {
    FrequencyGrid::linspace(2e6, 11e6, 901).unwrap()
}

fn random_trace(rng: &mut ChaCha8Rng, level: f64) -> NoiseSpectrum {
    let values = (0..grid().len())
        .map(|_| level * rng.random_range(0.5..1.5))
        .collect();
    NoiseSpectrum::new(grid(), values).unwrap()
}

#[test]
fn smoothing_and_averaging_commute() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let traces: Vec<NoiseSpectrum> = (0..3).map(|_| random_trace(&mut rng, 10.0)).collect();
        let dark = random_trace(&mut rng, 1.0);

        let smoothed: Vec<NoiseSpectrum> = traces
            .iter()
            .map(|t| smooth_rbw(t, DEFAULT_RBW_HZ).unwrap())
            .collect();
        let dark_smoothed = smooth_rbw(&dark, DEFAULT_RBW_HZ).unwrap();
        let a = average_and_correct(&TraceBundle::new(smoothed, dark_smoothed).unwrap())
            .unwrap()
            .spectrum;

        let averaged = average_and_correct(&TraceBundle::new(traces, dark).unwrap())
            .unwrap()
            .spectrum;
        let b = smooth_rbw(&averaged, DEFAULT_RBW_HZ).unwrap();

        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn db_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let spectrum = random_trace(&mut rng, 3.0);
        let reference = random_trace(&mut rng, 5.0);
        let db = normalize_to_shot(&spectrum, &reference).unwrap();
        let back = db.to_linear(&reference.values).unwrap();
        for (x, y) in spectrum.values.iter().zip(&back.values) {
            assert!((x / y - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn shot_trace_normalizes_to_zero_db() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shot = random_trace(&mut rng, 7.0);
    let db = normalize_to_shot(&shot, &shot).unwrap();
    assert!(db
        .db
        .iter()
        .all(|d| d.abs() <= db.calibration.quoted_band_db));
}
