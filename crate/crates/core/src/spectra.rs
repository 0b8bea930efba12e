//! Spectrum-analyzer processing of photocurrent noise: periodograms,
//! resolution-bandwidth smoothing, trace averaging with darknoise
//! subtraction, and shot-noise normalization to dB.
//!
//! Spectrum values are variances per frequency bin in the same units as the
//! analytic statistics: white noise of unit per-sample variance has a flat
//! spectrum of 1, and a coherent beam of photon number `n` gives `n`.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::apparatus::{calibrate_shot_noise, ShotNoiseCalibration};
use crate::error::{domain, Error, Result};
use crate::gaussian::FrequencyGrid;

/// Analyzer settings used for the measured traces.
pub const DEFAULT_RBW_HZ: f64 = 300e3;
pub const DEFAULT_VBW_HZ: f64 = 300.0;
pub const DEFAULT_TRACE_AVERAGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct SpectrumMeta {
    pub rbw_hz: Option<f64>,
    /// Recorded only; the video filter is not simulated (trace averaging
    /// plays its role).
    pub vbw_hz: Option<f64>,
    pub averages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpectrum {
    pub frequencies: FrequencyGrid,
    pub values: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl NoiseSpectrum {
    pub fn new(frequencies: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != frequencies.len() {
            return Err(domain(format!(
                "{} values for a {}-point grid",
                values.len(),
                frequencies.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("spectrum contains non-finite values".into()));
        }
        Ok(NoiseSpectrum {
            frequencies,
            values,
            meta: SpectrumMeta {
                averages: 1,
                ..Default::default()
            },
        })
    }

    pub fn flat(frequencies: FrequencyGrid, level: f64) -> Result<Self> {
        let n = frequencies.len();
        Self::new(frequencies, vec![level; n])
    }

    pub fn with_meta(mut self, meta: SpectrumMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Restriction to `start <= f <= stop`.
    pub fn band(&self, start: f64, stop: f64) -> Result<NoiseSpectrum> {
        let (f, v): (Vec<f64>, Vec<f64>) = self
            .frequencies
            .as_slice()
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= start && **f <= stop)
            .unzip();
        Ok(NoiseSpectrum {
            frequencies: FrequencyGrid::new(f)?,
            values: v,
            meta: self.meta,
        })
    }

    /// Adds narrow Gaussian interference lines (electrical pick-up) of height
    /// `peak` and standard deviation `width_hz` at each of `lines_hz`.
    pub fn with_pickup(&self, lines_hz: &[f64], peak: f64, width_hz: f64) -> NoiseSpectrum {
        let values = self
            .frequencies
            .as_slice()
            .iter()
            .zip(&self.values)
            .map(|(f, v)| {
                v + lines_hz
                    .iter()
                    .map(|l| peak * (-0.5 * ((f - l) / width_hz).powi(2)).exp())
                    .sum::<f64>()
            })
            .collect();
        NoiseSpectrum {
            values,
            ..self.clone()
        }
    }

    fn check_same_grid(&self, other: &NoiseSpectrum) -> Result<()> {
        if self.frequencies != other.frequencies {
            return Err(Error::GridMismatch(format!(
                "{}-point vs {}-point spectrum",
                self.frequencies.len(),
                other.frequencies.len()
            )));
        }
        Ok(())
    }
}

/// Weights of a boxcar of width `rbw` laid over bins of width `spacing`,
/// centered on a bin. Each weight is the overlap of the bin cell with the
/// boxcar, so the weights sum to `rbw / spacing`.
pub fn rbw_window_weights(rbw: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(rbw > 0.0 && spacing > 0.0) || rbw < spacing * (1.0 - 1e-9) {
        return Err(domain(format!(
            "RBW {rbw} Hz is below the grid spacing {spacing} Hz"
        )));
    }
    let h = 0.5 * rbw / spacing;
    let reach = (h - 0.5 - 1e-9).ceil().max(0.0) as i64;
    Ok((-reach..=reach)
        .map(|k| {
            let k = k as f64;
            ((k + 0.5).min(h) - (k - 0.5).max(-h)).max(0.0)
        })
        .collect())
}

pub fn smooth_rbw(spectrum: &NoiseSpectrum, rbw: f64) -> Result<NoiseSpectrum> {
    let spacing = match spectrum.frequencies.uniform_spacing() {
        Some(s) => s,
        None if spectrum.frequencies.len() == 1 => {
            let mut out = spectrum.clone();
            out.meta.rbw_hz = Some(rbw);
            return Ok(out);
        }
        None => return Err(domain("RBW smoothing needs a uniform frequency grid")),
    };
    let weights = rbw_window_weights(rbw, spacing)?;
    let reach = (weights.len() / 2) as i64;
    let n = spectrum.values.len() as i64;
    let values = (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (w, k) in weights.iter().zip(-reach..=reach) {
                let j = i + k;
                if (0..n).contains(&j) {
                    acc += w * spectrum.values[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect();
    Ok(NoiseSpectrum {
        frequencies: spectrum.frequencies.clone(),
        values,
        meta: SpectrumMeta {
            rbw_hz: Some(rbw),
            ..spectrum.meta
        },
    })
}

/// Repeated traces of one measurement plus the darknoise trace taken with the
/// beam blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    traces: Vec<NoiseSpectrum>,
    darknoise: NoiseSpectrum,
}

impl TraceBundle {
    pub fn new(traces: Vec<NoiseSpectrum>, darknoise: NoiseSpectrum) -> Result<Self> {
        let first = traces
            .first()
            .ok_or_else(|| domain("trace bundle needs at least one trace"))?;
        for t in &traces[1..] {
            first.check_same_grid(t)?;
            if t.meta != first.meta {
                return Err(domain("traces in a bundle must share analyzer settings"));
            }
        }
        first.check_same_grid(&darknoise)?;
        Ok(TraceBundle { traces, darknoise })
    }

    pub fn traces(&self) -> &[NoiseSpectrum] {
        &self.traces
    }

    pub fn darknoise(&self) -> &NoiseSpectrum {
        &self.darknoise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectedSpectrum {
    pub spectrum: NoiseSpectrum,
    /// Smallest ratio of averaged trace to darknoise, in dB (infinite for zero darknoise).
    pub darknoise_margin_db: f64,
}

/// Pointwise mean of the traces minus darknoise, in linear power.
pub fn average_and_correct(bundle: &TraceBundle) -> Result<CorrectedSpectrum> {
    let count = bundle.traces.len() as f64;
    let first = &bundle.traces[0];
    let mean: Vec<f64> = (0..first.values.len())
        .map(|i| bundle.traces.iter().map(|t| t.values[i]).sum::<f64>() / count)
        .collect();
    let dark = &bundle.darknoise.values;
    let offending: Vec<f64> = first
        .frequencies
        .as_slice()
        .iter()
        .zip(mean.iter().zip(dark))
        .filter(|(_, (m, d))| **d >= **m)
        .map(|(f, _)| *f)
        .collect();
    if !offending.is_empty() {
        return Err(Error::Darknoise {
            frequencies: offending,
        });
    }
    let margin = mean
        .iter()
        .zip(dark)
        .map(|(m, d)| 10.0 * (m / d).log10())
        .fold(f64::INFINITY, f64::min);
    let values = mean.iter().zip(dark).map(|(m, d)| m - d).collect();
    Ok(CorrectedSpectrum {
        spectrum: NoiseSpectrum {
            frequencies: first.frequencies.clone(),
            values,
            meta: SpectrumMeta {
                averages: first.meta.averages * bundle.traces.len(),
                ..first.meta
            },
        },
        darknoise_margin_db: margin,
    })
}

/// Spectrum in dB relative to shot noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DbSpectrum {
    pub frequencies: FrequencyGrid,
    pub db: Vec<f64>,
    pub calibration: ShotNoiseCalibration,
    pub meta: SpectrumMeta,
}

impl DbSpectrum {
    /// Linear spectrum recovered against the per-point shot-noise `reference`.
    pub fn to_linear(&self, reference: &[f64]) -> Result<NoiseSpectrum> {
        if reference.len() != self.db.len() {
            return Err(Error::GridMismatch(
                "reference length differs from spectrum".into(),
            ));
        }
        let values = self
            .db
            .iter()
            .zip(reference)
            .map(|(d, r)| r * 10f64.powf(d / 10.0))
            .collect();
        Ok(NoiseSpectrum {
            frequencies: self.frequencies.clone(),
            values,
            meta: self.meta,
        })
    }

    pub fn mean_db(&self) -> f64 {
        self.db.iter().sum::<f64>() / self.db.len() as f64
    }
}

/// `10 log10(value / reference)` pointwise against a reference trace.
pub fn normalize_to_shot(
    spectrum: &NoiseSpectrum,
    reference: &NoiseSpectrum,
) -> Result<DbSpectrum> {
    spectrum.check_same_grid(reference)?;
    normalize_pointwise(spectrum, &reference.values)
}

/// Normalization against a flat calibrated shot-noise level.
pub fn normalize_to_level(spectrum: &NoiseSpectrum, reference: f64) -> Result<DbSpectrum> {
    normalize_pointwise(spectrum, &vec![reference; spectrum.values.len()])
}

fn normalize_pointwise(spectrum: &NoiseSpectrum, reference: &[f64]) -> Result<DbSpectrum> {
    if reference.iter().any(|r| !(*r > 0.0)) {
        return Err(domain("shot-noise reference must be > 0 on the whole grid"));
    }
    if spectrum.values.iter().any(|v| !(*v > 0.0)) {
        return Err(domain("spectrum values must be > 0 to convert to dB"));
    }
    let level = reference.iter().sum::<f64>() / reference.len() as f64;
    Ok(DbSpectrum {
        frequencies: spectrum.frequencies.clone(),
        db: spectrum
            .values
            .iter()
            .zip(reference)
            .map(|(v, r)| 10.0 * (v / r).log10())
            .collect(),
        calibration: calibrate_shot_noise(level)?,
        meta: spectrum.meta,
    })
}

/// Averaged periodogram (Welch, Hann window, no overlap) of a real series.
/// Returns the one-sided bins `0..=segment_len/2`, spaced `sample_rate / segment_len`.
pub fn welch_periodogram(
    samples: &[f64],
    sample_rate: f64,
    segment_len: usize,
) -> Result<NoiseSpectrum> {
    if segment_len < 2 || !(sample_rate > 0.0) {
        return Err(domain(
            "periodogram needs segment_len >= 2 and a positive sample rate",
        ));
    }
    let segments = samples.len() / segment_len;
    if segments == 0 {
        return Err(domain(format!(
            "{} samples are fewer than one {segment_len}-sample segment",
            samples.len()
        )));
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / segment_len as f64).cos())
        .collect();
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    for seg in samples.chunks_exact(segment_len) {
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr() / norm;
        }
    }
    let df = sample_rate / segment_len as f64;
    let grid = FrequencyGrid::new((0..bins).map(|k| k as f64 * df).collect())?;
    let values = acc.into_iter().map(|a| a / segments as f64).collect();
    Ok(NoiseSpectrum {
        frequencies: grid,
        values,
        meta: SpectrumMeta {
            rbw_hz: None,
            vbw_hz: None,
            averages: segments,
        },
    })
}

pub const STOKES_CSV_HEADER: [&str; 5] = ["freq_hz", "v0_db", "v1_db", "v2_db", "v3_db"];

/// Writes `freq_hz,v0_db,v1_db,v2_db,v3_db` with dB values to 3 decimals.
pub fn write_stokes_csv<W: Write>(writer: W, frequencies: &[f64], db: &[[f64; 4]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STOKES_CSV_HEADER)?;
    for (f, row) in frequencies.iter().zip(db) {
        let mut record = vec![format!("{f}")];
        record.extend(row.iter().map(|d| format!("{d:.3}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stokes_csv<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != STOKES_CSV_HEADER {
        return Err(domain(format!(
            "expected CSV header `{}`",
            STOKES_CSV_HEADER.join(",")
        )));
    }
    let mut freqs = Vec::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| domain("malformed number in Stokes CSV"))
        };
        freqs.push(parse(0)?);
        rows.push([parse(1)?, parse(2)?, parse(3)?, parse(4)?]);
    }
    Ok((freqs, rows))
}

/// Writes `freq_hz,v_db` plus any extra columns, dB values to 3 decimals.
pub fn write_db_csv<W: Write>(writer: W, spectrum: &DbSpectrum) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["freq_hz", "v_db"])?;
    for (f, d) in spectrum.frequencies.as_slice().iter().zip(&spectrum.db) {
        w.write_record([format!("{f}"), format!("{d:.3}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize, df: f64) -> FrequencyGrid {
        FrequencyGrid::new((0..n).map(|i| 3e6 + i as f64 * df).collect()).unwrap()
    }

    #[test]
    fn window_for_300khz_on_10khz_grid() {
        let w = rbw_window_weights(300e3, 10e3).unwrap();
        assert_eq!(w.len(), 31);
        assert_relative_eq!(w[0], 0.5);
        assert_relative_eq!(w[15], 1.0);
        assert_relative_eq!(w.iter().sum::<f64>(), 30.0, max_relative = 1e-12);
        assert_eq!(rbw_window_weights(10e3, 10e3).unwrap(), vec![1.0]);
        assert!(rbw_window_weights(5e3, 10e3).is_err());
    }

    #[test]
    fn smoothing_flat_and_spike() {
        let g = grid(101, 10e3);
        let flat = NoiseSpectrum::flat(g.clone(), 2.5).unwrap();
        let s = smooth_rbw(&flat, 300e3).unwrap();
        for v in &s.values {
            assert_relative_eq!(*v, 2.5, max_relative = 1e-14);
        }
        assert_eq!(s.meta.rbw_hz, Some(300e3));

        let mut values = vec![0.0; 101];
        values[50] = 7.0;
        let area = 7.0 * 10e3;
        let s = smooth_rbw(&NoiseSpectrum::new(g, values).unwrap(), 300e3).unwrap();
        for k in 36..=64 {
            assert_relative_eq!(s.values[k], area / 300e3, max_relative = 1e-12);
        }
        assert_relative_eq!(s.values[35], 0.5 * area / 300e3, max_relative = 1e-12);
        assert_eq!(s.values[34], 0.0);
    }

    #[test]
    fn smoothing_rejects_too_narrow_rbw() {
        let s = NoiseSpectrum::flat(grid(10, 10e3), 1.0).unwrap();
        assert!(smooth_rbw(&s, 1e3).is_err());
    }

    #[test]
    fn averaging_and_darknoise() {
        let g = grid(5, 10e3);
        let t = NoiseSpectrum::new(g.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let zero = NoiseSpectrum::flat(g.clone(), 0.0).unwrap();
        let out =
            average_and_correct(&TraceBundle::new(vec![t.clone(); 3], zero).unwrap()).unwrap();
        assert_eq!(out.spectrum.values, t.values);
        assert_eq!(out.darknoise_margin_db, f64::INFINITY);

        let two = NoiseSpectrum::flat(g.clone(), 2.0).unwrap();
        let half = NoiseSpectrum::flat(g.clone(), 0.5).unwrap();
        let out = average_and_correct(&TraceBundle::new(vec![two], half).unwrap()).unwrap();
        assert_relative_eq!(out.spectrum.values[0], 1.5);

        let dark = NoiseSpectrum::flat(g.clone(), 10f64.powf(-0.4)).unwrap();
        let one = NoiseSpectrum::flat(g.clone(), 1.0).unwrap();
        let out = average_and_correct(&TraceBundle::new(vec![one.clone()], dark).unwrap()).unwrap();
        assert_relative_eq!(
            out.spectrum.values[0],
            1.0 - 10f64.powf(-0.4),
            max_relative = 1e-12
        );
        assert!((out.spectrum.values[0] - 0.602).abs() < 1e-3);
        assert_relative_eq!(out.darknoise_margin_db, 4.0, max_relative = 1e-12);

        let mut bad = vec![0.1; 5];
        bad[1] = 1.0;
        bad[3] = 2.0;
        let err = average_and_correct(
            &TraceBundle::new(vec![one], NoiseSpectrum::new(g.clone(), bad).unwrap()).unwrap(),
        )
        .unwrap_err();
        match err {
            Error::Darknoise { frequencies } => assert_eq!(frequencies, vec![3.01e6, 3.03e6]),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn bundle_requires_matching_grids() {
        let a = NoiseSpectrum::flat(grid(5, 10e3), 1.0).unwrap();
        let b = NoiseSpectrum::flat(grid(6, 10e3), 1.0).unwrap();
        assert!(TraceBundle::new(vec![a.clone(), b.clone()], a.clone()).is_err());
        assert!(TraceBundle::new(vec![], a).is_err());
    }

    #[test]
    fn db_normalization() {
        let g = grid(3, 10e3);
        let s = NoiseSpectrum::new(g.clone(), vec![2.0, 1.0, 4.0]).unwrap();
        let d = normalize_to_level(&s, 2.0).unwrap();
        assert_eq!(d.db[0], 0.0);
        assert!((d.db[1] + 3.0103).abs() < 1e-4);
        assert_eq!(d.calibration.reference, 2.0);
        assert_eq!(d.calibration.quoted_band_db, 0.04);
        let back = d.to_linear(&[2.0; 3]).unwrap();
        for (a, b) in back.values.iter().zip(&s.values) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        assert!(normalize_to_level(&s, 0.0).is_err());
        assert!(
            normalize_to_level(&NoiseSpectrum::new(g, vec![1.0, 0.0, 1.0]).unwrap(), 1.0).is_err()
        );
    }

    #[test]
    fn periodogram_of_white_noise_is_flat() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..256 * 400)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let p = welch_periodogram(&x, 1e6, 256).unwrap();
        assert_eq!(p.values.len(), 129);
        assert_eq!(p.meta.averages, 400);
        let interior = &p.values[2..127];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn stokes_csv_round_trip() {
        let mut buf = Vec::new();
        write_stokes_csv(
            &mut buf,
            &[3e6, 4e6],
            &[[-3.0103, -3.0, 3.0, -3.0], [0.0, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .starts_with("freq_hz,v0_db,v1_db,v2_db,v3_db\n3000000,-3.010,-3.000,3.000,-3.000\n"));
        let (f, rows) = read_stokes_csv(buf.as_slice()).unwrap();
        assert_eq!(f, vec![3e6, 4e6]);
        assert_eq!(rows[0][0], -3.01);
    }

    #[test]
    fn pickup_lines_are_localized() {
        let s = NoiseSpectrum::flat(grid(701, 10e3), 1.0).unwrap();
        let p = s.with_pickup(&[4e6, 5e6], 0.5, 20e3);
        assert_relative_eq!(p.values[100], 1.5, max_relative = 1e-12);
        assert_relative_eq!(p.values[50], 1.0, max_relative = 1e-12);
    }
}
