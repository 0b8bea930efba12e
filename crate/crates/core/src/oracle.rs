//! Monte-Carlo oracle for the analytic Stokes statistics.
//!
//! Quadrature fluctuations are drawn from the state's covariance and inserted
//! into `a = alpha + (x+ + i x-)/2`. Stokes values are then evaluated straight
//! from the operator definitions as Hermitian forms `a^dagger M_j a`:
//!
//! ```text
//! M0 = [[1, 0], [0, 1]]            M2 = [[0, e^{i theta}], [e^{-i theta}, 0]]
//! M1 = [[1, 0], [0, -1]]           M3 = [[0, -i e^{i theta}], [i e^{-i theta}, 0]]
//! ```
//!
//! `Linearized` keeps only the first-order term `2 Re(alpha^dagger M da)`;
//! `FullQuadratic` keeps the whole form. Both are classical (symmetric-ordered)
//! moments: commutator corrections from operator ordering are not added, so
//! `FullQuadratic` brackets second-order effects rather than giving exact
//! quantum fourth moments.
//!
//! Random numbers come from ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `seed_from_u64(seed)`. Sample `k` of a run lives in stream `k / CHUNK_SAMPLES`
//! of that generator, so results are bit-identical for any thread count.
//! Time series use stream `j` for white channel `j` (see
//! [`sample_photocurrent_timeseries`]).

use std::sync::Arc;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::apparatus::DetectionSetup;
use crate::error::{Error, Result};
use crate::gaussian::{psd_clamp, psd_factor, TwoModeState};

pub const RNG_ALGORITHM: &str = "ChaCha8";
pub const CHUNK_SAMPLES: u64 = 1 << 16;
pub const MIN_SAMPLES: u64 = 10_000;
pub const MAX_SAMPLES: u64 = 100_000_000;
/// Fewer periodogram segments than this triggers an accuracy warning.
pub const MIN_SEGMENTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Linearized,
    FullQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleConfig {
    pub sample_count: u64,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl SampleConfig {
    pub fn new(sample_count: u64, seed: u64, mode: SamplingMode) -> Result<Self> {
        if !(MIN_SAMPLES..=MAX_SAMPLES).contains(&sample_count) {
            return Err(Error::Sampling(format!(
                "sample count {sample_count} outside [{MIN_SAMPLES}, {MAX_SAMPLES}]"
            )));
        }
        Ok(SampleConfig {
            sample_count,
            seed,
            mode,
        })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Power sums of shifted samples, merged in chunk order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl Moments {
    fn push(&mut self, d: f64) {
        let d2 = d * d;
        self.n += 1.0;
        self.s1 += d;
        self.s2 += d2;
        self.s3 += d2 * d;
        self.s4 += d2 * d2;
    }

    fn merge(mut self, o: &Moments) -> Moments {
        self.n += o.n;
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.s3 += o.s3;
        self.s4 += o.s4;
        self
    }

    /// `(mean, variance, std error of mean, std error of variance)` relative to the shift.
    fn summary(&self) -> (f64, f64, f64, f64) {
        let n = self.n;
        let (e1, e2, e3, e4) = (self.s1 / n, self.s2 / n, self.s3 / n, self.s4 / n);
        let var = ((e2 - e1 * e1) * n / (n - 1.0)).max(0.0);
        let m4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4);
        let var_se = ((m4 - var * var).max(0.0) / n).sqrt();
        (e1, var, (var / n).sqrt(), var_se)
    }
}

fn chunk_bounds(total: u64) -> Vec<(u64, u64)> {
    (0..total.div_ceil(CHUNK_SAMPLES))
        .map(|c| (c, CHUNK_SAMPLES.min(total - c * CHUNK_SAMPLES)))
        .collect()
}

fn factor_for_sampling(c: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let c = psd_clamp(c).map_err(|e| Error::Sampling(e.to_string()))?;
    Ok(psd_factor(&c))
}

fn draw4(rng: &mut ChaCha8Rng) -> [f64; 4] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

/// Correlated quadrature sample `x = L z` as complex mode fluctuations
/// `(x+ + i x-)/2` for H and V.
fn fluctuation(factor: &Matrix4<f64>, z: [f64; 4]) -> [Complex64; 2] {
    let x = factor * nalgebra::Vector4::from(z);
    [
        Complex64::new(0.5 * x[0], 0.5 * x[1]),
        Complex64::new(0.5 * x[2], 0.5 * x[3]),
    ]
}

/// The four Stokes forms `u^dagger M_j v` for mode vectors `u`, `v`.
fn stokes_forms(u: [Complex64; 2], v: [Complex64; 2], phase: Complex64) -> [Complex64; 4] {
    let i = Complex64::i();
    let hv = u[0].conj() * v[1] * phase;
    let vh = u[1].conj() * v[0] * phase.conj();
    let hh = u[0].conj() * v[0];
    let vv = u[1].conj() * v[1];
    [hh + vv, hh - vv, hv + vh, i * vh - i * hv]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StdErrors {
    pub means: [f64; 4],
    pub variances: [f64; 4],
}

/// Empirical Stokes statistics; serialized as the oracle JSON report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub means: [f64; 4],
    pub variances: [f64; 4],
    pub std_errors: StdErrors,
    pub mode: SamplingMode,
    pub seed: u64,
    pub n: u64,
    pub frequency_hz: f64,
}

impl OracleReport {
    /// `|variance - expected| / std_error` for each Stokes parameter.
    pub fn variance_z_scores(&self, expected: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|j| {
            (self.variances[j] - expected[j]).abs() / self.std_errors.variances[j]
        })
    }

    pub fn mean_z_scores(&self, expected: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|j| {
            (self.means[j] - expected[j]).abs() / self.std_errors.means[j].max(f64::MIN_POSITIVE)
        })
    }
}

/// Samples the Stokes parameters of `state` at grid index `index`.
pub fn sample_stokes(
    state: &TwoModeState,
    index: usize,
    config: &SampleConfig,
) -> Result<OracleReport> {
    let factor = factor_for_sampling(state.covariance(index))?;
    let alpha = [
        Complex64::new(state.alpha_h(), 0.0),
        Complex64::new(state.alpha_v(), 0.0),
    ];
    let phase = Complex64::from_polar(1.0, state.theta());
    let reference = stokes_forms(alpha, alpha, phase).map(|z| z.re);
    let mode = config.mode;

    let chunks: Vec<[Moments; 4]> = chunk_bounds(config.sample_count)
        .into_par_iter()
        .map(|(chunk, count)| {
            let mut rng = stream_rng(config.seed, chunk);
            let mut acc = [Moments::default(); 4];
            for _ in 0..count {
                let da = fluctuation(&factor, draw4(&mut rng));
                let first = stokes_forms(alpha, da, phase);
                let second = match mode {
                    SamplingMode::Linearized => None,
                    SamplingMode::FullQuadratic => Some(stokes_forms(da, da, phase)),
                };
                for j in 0..4 {
                    let mut d = 2.0 * first[j].re;
                    if let Some(s) = second {
                        d += s[j].re;
                    }
                    acc[j].push(d);
                }
            }
            acc
        })
        .collect();

    let total = chunks.iter().fold([Moments::default(); 4], |mut acc, c| {
        for j in 0..4 {
            acc[j] = acc[j].merge(&c[j]);
        }
        acc
    });
    let summary = total.map(|m| m.summary());
    Ok(OracleReport {
        means: std::array::from_fn(|j| reference[j] + summary[j].0),
        variances: summary.map(|s| s.1),
        std_errors: StdErrors {
            means: summary.map(|s| s.2),
            variances: summary.map(|s| s.3),
        },
        mode,
        seed: config.seed,
        n: config.sample_count,
        frequency_hz: state.grid().as_slice()[index],
    })
}

/// Empirical photocurrent statistics of one detection setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementEstimate {
    pub mean: f64,
    pub variance: f64,
    pub mean_std_error: f64,
    pub variance_std_error: f64,
    pub n: u64,
}

/// Lab-frame field propagation for one setup: plates as a Jones matrix, then
/// detector loss mixing in vacuum.
struct FieldChain {
    amplitudes: [Complex64; 2],
    jones: [[Complex64; 2]; 2],
    frames: [Complex64; 2],
    eta: f64,
    sign: f64,
}

impl FieldChain {
    fn new(state: &TwoModeState, setup: &DetectionSetup) -> Self {
        let (ph, pv) = state.lab_phases();
        let jones = setup.jones();
        let b = state.lab_amplitudes();
        let eta = setup.detector_efficiency;
        let amplitudes =
            std::array::from_fn(|r| (jones[r][0] * b[0] + jones[r][1] * b[1]) * eta.sqrt());
        FieldChain {
            amplitudes,
            jones,
            frames: [
                Complex64::from_polar(1.0, ph),
                Complex64::from_polar(1.0, pv),
            ],
            eta,
            sign: setup.electrical_sign(),
        }
    }

    fn mean_current(&self) -> f64 {
        self.amplitudes[0].norm_sqr() + self.sign * self.amplitudes[1].norm_sqr()
    }

    /// Detected field fluctuations for amplitude-frame fluctuations `da` and
    /// vacuum fluctuations `dv` entering at the loss.
    fn detected(&self, da: [Complex64; 2], dv: [Complex64; 2]) -> [Complex64; 2] {
        let db = [self.frames[0] * da[0], self.frames[1] * da[1]];
        let (t, r) = (self.eta.sqrt(), (1.0 - self.eta).sqrt());
        std::array::from_fn(|k| {
            (self.jones[k][0] * db[0] + self.jones[k][1] * db[1]) * t + dv[k] * r
        })
    }

    /// Photocurrent fluctuation, first order in the field fluctuations.
    fn linear_current(&self, d: [Complex64; 2]) -> f64 {
        let i = |k: usize| 2.0 * (self.amplitudes[k].conj() * d[k]).re;
        i(0) + self.sign * i(1)
    }

    fn full_current(&self, d: [Complex64; 2]) -> f64 {
        let i = |k: usize| (self.amplitudes[k] + d[k]).norm_sqr() - self.amplitudes[k].norm_sqr();
        i(0) + self.sign * i(1)
    }
}

/// Samples the sum/difference photocurrent of `setup` at grid index `index`.
pub fn sample_measurement(
    state: &TwoModeState,
    setup: &DetectionSetup,
    index: usize,
    config: &SampleConfig,
) -> Result<MeasurementEstimate> {
    let factor = factor_for_sampling(state.covariance(index))?;
    let chain = FieldChain::new(state, setup);
    let vacuum = Matrix4::identity();
    let chunks: Vec<Moments> = chunk_bounds(config.sample_count)
        .into_par_iter()
        .map(|(chunk, count)| {
            let mut rng = stream_rng(config.seed, chunk);
            let mut m = Moments::default();
            for _ in 0..count {
                let da = fluctuation(&factor, draw4(&mut rng));
                let dv = fluctuation(&vacuum, draw4(&mut rng));
                let d = chain.detected(da, dv);
                m.push(match config.mode {
                    SamplingMode::Linearized => chain.linear_current(d),
                    SamplingMode::FullQuadratic => chain.full_current(d),
                });
            }
            m
        })
        .collect();
    let total = chunks
        .iter()
        .fold(Moments::default(), |acc, c| acc.merge(c));
    let (mean, variance, mean_se, var_se) = total.summary();
    Ok(MeasurementEstimate {
        mean: chain.mean_current() + mean,
        variance,
        mean_std_error: mean_se,
        variance_std_error: var_se,
        n: config.sample_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSeriesConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Periodogram segment length the series is intended for; only used for
    /// the accuracy warning.
    pub segment_len: usize,
    pub seed: u64,
    /// Variance per sample of white electronic noise added to the photocurrent.
    pub electronic_noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotocurrentSeries {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub mean_current: f64,
    pub warnings: Vec<String>,
}

fn series_length(config: &TimeSeriesConfig) -> Result<(usize, Vec<String>)> {
    if !(config.sample_rate_hz > 0.0 && config.duration_s.is_finite() && config.duration_s >= 0.0) {
        return Err(Error::Sampling(
            "sample rate must be > 0 and duration finite".into(),
        ));
    }
    let len = (config.duration_s * config.sample_rate_hz).round() as usize;
    if len == 0 {
        return Err(Error::Sampling("time series has zero duration".into()));
    }
    let mut warnings = Vec::new();
    let segments = len / config.segment_len.max(1);
    if segments < MIN_SEGMENTS {
        let msg = format!("only {segments} periodogram segments (< {MIN_SEGMENTS}); spectral estimates will be noisy");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok((len, warnings))
}

fn white_channel(seed: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Stationary Gaussian photocurrent fluctuations of `setup` measuring `state`.
///
/// Four white channels (streams 0-3) are spectrally shaped by the Cholesky
/// factor of the covariance interpolated to each FFT bin, giving amplitude-frame
/// quadrature series. Detector loss mixes in white vacuum (streams 4-7) and
/// electronic noise uses stream 8. The photocurrent is formed to first order
/// from the propagated lab fields.
pub fn sample_photocurrent_timeseries(
    state: &TwoModeState,
    setup: &DetectionSetup,
    config: &TimeSeriesConfig,
) -> Result<PhotocurrentSeries> {
    let (len, warnings) = series_length(config)?;
    let grid = state.grid();
    let mut planner = FftPlanner::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(len);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(len);

    let mut spectra: Vec<Vec<Complex64>> = (0..4u64)
        .into_par_iter()
        .map(|j| {
            let mut buf: Vec<Complex64> = white_channel(config.seed, j, len)
                .into_iter()
                .map(|x| Complex64::new(x, 0.0))
                .collect();
            forward.process(&mut buf);
            buf
        })
        .collect();

    let factors: Vec<Matrix4<f64>> = state
        .covariances()
        .iter()
        .map(factor_for_sampling)
        .collect::<Result<_>>()?;
    let df = config.sample_rate_hz / len as f64;
    for k in 0..len {
        let f = k.min(len - k) as f64 * df;
        let (i, w) = grid.interpolation(f);
        let c = if w == 0.0 {
            *state.covariance(i)
        } else {
            state.covariance(i) * (1.0 - w) + state.covariance(i + 1) * w
        };
        let l = c.cholesky().map(|ch| ch.l()).unwrap_or_else(|| {
            if w == 0.0 {
                factors[i]
            } else {
                psd_factor(&c)
            }
        });
        let z: [Complex64; 4] = std::array::from_fn(|m| spectra[m][k]);
        for (r, channel) in spectra.iter_mut().enumerate() {
            channel[k] = (0..4).map(|m| z[m] * l[(r, m)]).sum();
        }
    }
    let quadratures: Vec<Vec<f64>> = spectra
        .into_par_iter()
        .map(|mut buf| {
            inverse.process(&mut buf);
            buf.into_iter().map(|z| z.re / len as f64).collect()
        })
        .collect();

    let chain = FieldChain::new(state, setup);
    let vacuum: Vec<Vec<f64>> = if setup.detector_efficiency < 1.0 {
        (4..8u64)
            .into_par_iter()
            .map(|j| white_channel(config.seed, j, len))
            .collect()
    } else {
        vec![vec![0.0; len]; 4]
    };
    let electronic: Vec<f64> = if config.electronic_noise_variance > 0.0 {
        let s = config.electronic_noise_variance.sqrt();
        white_channel(config.seed, 8, len)
            .into_iter()
            .map(|x| s * x)
            .collect()
    } else {
        vec![0.0; len]
    };

    let samples = (0..len)
        .map(|t| {
            let q = |j: usize| quadratures[j][t];
            let v = |j: usize| vacuum[j][t];
            let da = [
                Complex64::new(0.5 * q(0), 0.5 * q(1)),
                Complex64::new(0.5 * q(2), 0.5 * q(3)),
            ];
            let dv = [
                Complex64::new(0.5 * v(0), 0.5 * v(1)),
                Complex64::new(0.5 * v(2), 0.5 * v(3)),
            ];
            chain.linear_current(chain.detected(da, dv)) + electronic[t]
        })
        .collect();
    Ok(PhotocurrentSeries {
        samples,
        sample_rate_hz: config.sample_rate_hz,
        mean_current: chain.mean_current(),
        warnings,
    })
}

/// Detector darknoise alone: white electronic noise of the configured
/// variance (stream 8), as recorded with the beam blocked.
pub fn sample_dark_noise(config: &TimeSeriesConfig) -> Result<PhotocurrentSeries> {
    let (len, warnings) = series_length(config)?;
    let s = config.electronic_noise_variance.max(0.0).sqrt();
    Ok(PhotocurrentSeries {
        samples: white_channel(config.seed, 8, len)
            .into_iter()
            .map(|x| s * x)
            .collect(),
        sample_rate_hz: config.sample_rate_hz,
        mean_current: 0.0,
        warnings,
    })
}
