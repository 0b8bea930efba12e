//! Linearized two-mode Gaussian beams.
//!
//! A polarization mode is written as `a = alpha + (dX+ + i dX-)/2` with a real
//! coherent amplitude `alpha >= 0` and quadrature fluctuation operators `dX+`
//! (amplitude) and `dX-` (phase). Variances are normalized so that a coherent
//! beam (and vacuum) has `<dX+^2> = <dX-^2> = 1`.
//!
//! A [`TwoModeState`] keeps one 4x4 covariance per sideband frequency over the
//! fixed quadrature order
//!
//! ```text
//! index 0: X_H+    index 1: X_H-    index 2: X_V+    index 3: X_V-
//! ```
//!
//! Each mode's quadratures are referenced to that mode's own coherent
//! amplitude ("amplitude frame"). The relative phase between the modes is
//! `theta`, so the lab-frame fields are `b_H = a_H` and `b_V = a_V e^{i theta}`
//! (up to a common reference phase). Optical elements act in the lab frame on
//! `(X_H, P_H, X_V, P_V)`; the state converts between frames around each
//! element.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector4};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{domain, Error, Result};

pub const XH_PLUS: usize = 0;
pub const XH_MINUS: usize = 1;
pub const XV_PLUS: usize = 2;
pub const XV_MINUS: usize = 3;

/// Relative tolerance below which a negative covariance eigenvalue is treated
/// as round-off and clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Slack allowed on the per-mode uncertainty product `V+ V- >= 1`.
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    Amplitude,
    Phase,
}

impl Quadrature {
    fn offset(self) -> usize {
        match self {
            Quadrature::Amplitude => 0,
            Quadrature::Phase => 1,
        }
    }

    pub fn orthogonal(self) -> Quadrature {
        match self {
            Quadrature::Amplitude => Quadrature::Phase,
            Quadrature::Phase => Quadrature::Amplitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    fn base(self) -> usize {
        match self {
            Polarization::H => 0,
            Polarization::V => 2,
        }
    }

    /// Covariance index of quadrature `q` of this mode.
    pub fn index(self, q: Quadrature) -> usize {
        self.base() + q.offset()
    }
}

/// Sign of the H/V cross-covariance added by
/// [`add_correlated_classical_noise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Positive,
    Negative,
}

impl Correlation {
    pub fn sign(self) -> f64 {
        match self {
            Correlation::Positive => 1.0,
            Correlation::Negative => -1.0,
        }
    }
}

/// Non-empty, strictly increasing list of sideband frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FrequencyGrid(Vec<f64>);

impl FrequencyGrid {
    pub fn new(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(domain("frequency grid is empty"));
        }
        if frequencies.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(domain(
                "frequency grid contains negative or non-finite values",
            ));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("frequency grid is not strictly increasing"));
        }
        Ok(FrequencyGrid(frequencies))
    }

    pub fn single(frequency: f64) -> Result<Self> {
        Self::new(vec![frequency])
    }

    /// `points` evenly spaced frequencies from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, points: usize) -> Result<Self> {
        match points {
            0 => Err(domain("frequency grid needs at least one point")),
            1 if start == stop => Self::single(start),
            1 => Err(domain("a one-point grid needs start == stop")),
            _ => {
                let step = (stop - start) / (points - 1) as f64;
                Self::new((0..points).map(|i| start + step * i as f64).collect())
            }
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Uniform spacing of the grid, if it has one (relative tolerance 1e-6).
    pub fn uniform_spacing(&self) -> Option<f64> {
        if self.0.len() < 2 {
            return None;
        }
        let step = (self.0[self.0.len() - 1] - self.0[0]) / (self.0.len() - 1) as f64;
        let uniform = self
            .0
            .windows(2)
            .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step);
        uniform.then_some(step)
    }

    /// Index of the grid point closest to `frequency`.
    pub fn nearest_index(&self, frequency: f64) -> usize {
        self.0
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - frequency).abs().total_cmp(&(b.1 - frequency).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Linear interpolation weights `(i, w)` such that the value at `frequency`
    /// is `(1 - w) * y[i] + w * y[i + 1]`. Outside the grid the end value is held.
    pub(crate) fn interpolation(&self, frequency: f64) -> (usize, f64) {
        let g = &self.0;
        if g.len() == 1 || frequency <= g[0] {
            return (0, 0.0);
        }
        if frequency >= g[g.len() - 1] {
            return (g.len() - 1, 0.0);
        }
        let i = g.partition_point(|&f| f <= frequency) - 1;
        (i, (frequency - g[i]) / (g[i + 1] - g[i]))
    }
}

/// Amplitude (`plus`) and phase (`minus`) quadrature variances at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureVariances {
    pub plus: f64,
    pub minus: f64,
}

impl QuadratureVariances {
    pub const COHERENT: QuadratureVariances = QuadratureVariances {
        plus: 1.0,
        minus: 1.0,
    };

    pub fn get(&self, q: Quadrature) -> f64 {
        match q {
            Quadrature::Amplitude => self.plus,
            Quadrature::Phase => self.minus,
        }
    }

    pub fn uncertainty_product(&self) -> f64 {
        self.plus * self.minus
    }
}

/// One polarization mode: coherent amplitude plus quadrature noise spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMode {
    amplitude: f64,
    grid: FrequencyGrid,
    variances: Vec<QuadratureVariances>,
}

impl BeamMode {
    pub fn new(
        amplitude: f64,
        grid: FrequencyGrid,
        variances: Vec<QuadratureVariances>,
    ) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(domain(format!(
                "amplitude must be finite and >= 0, got {amplitude}"
            )));
        }
        if variances.len() != grid.len() {
            return Err(domain(format!(
                "{} variance entries for a {}-point grid",
                variances.len(),
                grid.len()
            )));
        }
        for (f, v) in grid.as_slice().iter().zip(&variances) {
            if !(v.plus > 0.0 && v.minus > 0.0) || !v.plus.is_finite() || !v.minus.is_finite() {
                return Err(domain(format!(
                    "non-positive quadrature variance at {f} Hz"
                )));
            }
            if v.uncertainty_product() < 1.0 - ADMISSIBILITY_TOLERANCE {
                return Err(Error::Admissibility(format!(
                    "V+ * V- = {} < 1 at {f} Hz",
                    v.uncertainty_product()
                )));
            }
        }
        Ok(BeamMode {
            amplitude,
            grid,
            variances,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Photon-flux contribution `alpha^2`.
    pub fn photon_number(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn variances(&self) -> &[QuadratureVariances] {
        &self.variances
    }

    /// Resamples the noise spectra onto `grid` by linear interpolation
    /// (end values held outside the original range).
    pub fn resampled(&self, grid: &FrequencyGrid) -> BeamMode {
        let variances = grid
            .as_slice()
            .iter()
            .map(|&f| {
                let (i, w) = self.grid.interpolation(f);
                let a = self.variances[i];
                let b = self.variances[(i + 1).min(self.variances.len() - 1)];
                QuadratureVariances {
                    plus: (1.0 - w) * a.plus + w * b.plus,
                    minus: (1.0 - w) * a.minus + w * b.minus,
                }
            })
            .collect();
        BeamMode {
            amplitude: self.amplitude,
            grid: grid.clone(),
            variances,
        }
    }

    /// Single-mode loss channel with transmission `eta`.
    pub fn attenuate(&self, eta: f64) -> Result<BeamMode> {
        check_efficiency(eta)?;
        let variances = self
            .variances
            .iter()
            .map(|v| QuadratureVariances {
                plus: eta * v.plus + 1.0 - eta,
                minus: eta * v.minus + 1.0 - eta,
            })
            .collect();
        Ok(BeamMode {
            amplitude: eta.sqrt() * self.amplitude,
            grid: self.grid.clone(),
            variances,
        })
    }
}

pub fn make_coherent(amplitude: f64, grid: &FrequencyGrid) -> Result<BeamMode> {
    BeamMode::new(
        amplitude,
        grid.clone(),
        vec![QuadratureVariances::COHERENT; grid.len()],
    )
}

/// Shape of the squeezed-quadrature variance versus sideband frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SqueezeShape {
    Flat {
        v_sq: f64,
    },
    /// `V_sq(f) = 1 - (1 - v0) / (1 + (f / corner_hz)^2)`.
    Lorentzian {
        v0: f64,
        corner_hz: f64,
    },
}

/// Output noise model of a squeezed source. The anti-squeezed quadrature
/// carries `excess / V_sq`; `excess = 1` is a minimum-uncertainty source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezeSpectrum {
    pub shape: SqueezeShape,
    pub excess: f64,
}

impl SqueezeSpectrum {
    pub fn flat(v_sq: f64) -> Self {
        SqueezeSpectrum {
            shape: SqueezeShape::Flat { v_sq },
            excess: 1.0,
        }
    }

    /// Flat squeezing given in dB below shot noise.
    pub fn flat_db(squeezing_db: f64) -> Self {
        Self::flat(10f64.powf(-squeezing_db / 10.0))
    }

    pub fn lorentzian(v0: f64, corner_hz: f64) -> Self {
        SqueezeSpectrum {
            shape: SqueezeShape::Lorentzian { v0, corner_hz },
            excess: 1.0,
        }
    }

    pub fn with_excess(mut self, excess: f64) -> Self {
        self.excess = excess;
        self
    }

    pub fn squeezed_variance(&self, frequency: f64) -> f64 {
        match self.shape {
            SqueezeShape::Flat { v_sq } => v_sq,
            SqueezeShape::Lorentzian { v0, corner_hz } => {
                let x = frequency / corner_hz;
                1.0 - (1.0 - v0) / (1.0 + x * x)
            }
        }
    }

    pub fn anti_squeezed_variance(&self, frequency: f64) -> f64 {
        self.excess / self.squeezed_variance(frequency)
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self.shape {
            SqueezeShape::Flat { v_sq } => v_sq,
            SqueezeShape::Lorentzian { v0, corner_hz } => {
                if !(corner_hz > 0.0 && corner_hz.is_finite()) {
                    return Err(domain(format!(
                        "corner frequency must be > 0, got {corner_hz}"
                    )));
                }
                v0
            }
        };
        if !(v > 0.0 && v <= 1.0) {
            return Err(domain(format!(
                "squeezed variance must lie in (0, 1], got {v}"
            )));
        }
        if !(self.excess >= 1.0 && self.excess.is_finite()) {
            return Err(Error::Admissibility(format!(
                "anti-squeezing excess {} gives V_sq * V_anti < 1",
                self.excess
            )));
        }
        Ok(())
    }
}

pub fn make_squeezed(
    amplitude: f64,
    squeezed: Quadrature,
    model: &SqueezeSpectrum,
    grid: &FrequencyGrid,
) -> Result<BeamMode> {
    model.validate()?;
    let variances = grid
        .as_slice()
        .iter()
        .map(|&f| {
            let (sq, anti) = (model.squeezed_variance(f), model.anti_squeezed_variance(f));
            match squeezed {
                Quadrature::Amplitude => QuadratureVariances {
                    plus: sq,
                    minus: anti,
                },
                Quadrature::Phase => QuadratureVariances {
                    plus: anti,
                    minus: sq,
                },
            }
        })
        .collect();
    BeamMode::new(amplitude, grid.clone(), variances)
}

/// Tabulated source spectrum, CSV header `freq_hz,v_plus,v_minus`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTable {
    pub grid: FrequencyGrid,
    pub variances: Vec<QuadratureVariances>,
}

impl SpectrumTable {
    pub const HEADER: [&'static str; 3] = ["freq_hz", "v_plus", "v_minus"];

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != Self::HEADER {
            return Err(domain(format!(
                "expected CSV header `{}`, found `{}`",
                Self::HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut freqs = Vec::new();
        let mut variances = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| {
                        domain(format!(
                            "row {}: malformed number in column {}",
                            row + 2,
                            Self::HEADER[i]
                        ))
                    })
            };
            freqs.push(field(0)?);
            variances.push(QuadratureVariances {
                plus: field(1)?,
                minus: field(2)?,
            });
        }
        Ok(SpectrumTable {
            grid: FrequencyGrid::new(freqs)?,
            variances,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn into_mode(self, amplitude: f64) -> Result<BeamMode> {
        BeamMode::new(amplitude, self.grid, self.variances)
    }
}

pub fn lossy_efficiency_chain(losses: &[f64]) -> Result<f64> {
    losses.iter().try_fold(1.0, |acc, &loss| {
        if !(0.0..1.0).contains(&loss) {
            Err(domain(format!("loss must lie in [0, 1), got {loss}")))
        } else {
            Ok(acc * (1.0 - loss))
        }
    })
}

fn check_efficiency(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(domain(format!("efficiency must lie in (0, 1], got {eta}")))
    }
}

fn rotation(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Block-diagonal map from amplitude-frame to lab-frame quadratures.
fn frame_rotation(phi_h: f64, phi_v: f64) -> Matrix4<f64> {
    let mut r = Matrix4::zeros();
    r.fixed_view_mut::<2, 2>(0, 0).copy_from(&rotation(phi_h));
    r.fixed_view_mut::<2, 2>(2, 2).copy_from(&rotation(phi_v));
    r
}

fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Symmetrizes `m` and clamps round-off negative eigenvalues.
pub(crate) fn psd_clamp(m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = sym.trace().abs().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::Numeric(format!(
            "covariance is not positive semidefinite (eigenvalue {min:e}, trace {scale:e})"
        )));
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|x| x.max(0.0));
    Ok(eig.eigenvectors * Matrix4::from_diagonal(&clamped) * eig.eigenvectors.transpose())
}

/// Symmetric square root factor `L` with `L L^T = m` for a PSD matrix.
pub(crate) fn psd_factor(m: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let roots = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    eig.eigenvectors * Matrix4::from_diagonal(&roots)
}

/// Two polarization modes with relative phase `theta` and per-frequency
/// quadrature covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeState {
    alpha_h: f64,
    alpha_v: f64,
    theta: f64,
    // Lab phase of the H amplitude. Never affects Stokes statistics, but keeps
    // element composition exact for elements that are not phase covariant.
    reference_phase: f64,
    grid: FrequencyGrid,
    covariances: Vec<Matrix4<f64>>,
}

impl TwoModeState {
    /// Uncorrelated state built from two modes on the same grid.
    pub fn from_modes(h: &BeamMode, v: &BeamMode, theta: f64) -> Result<Self> {
        if h.grid != v.grid {
            return Err(Error::GridMismatch(format!(
                "H mode has {} points, V mode has {} points",
                h.grid.len(),
                v.grid.len()
            )));
        }
        let covariances = h
            .variances
            .iter()
            .zip(&v.variances)
            .map(|(a, b)| Matrix4::from_diagonal(&Vector4::new(a.plus, a.minus, b.plus, b.minus)))
            .collect();
        Ok(TwoModeState {
            alpha_h: h.amplitude,
            alpha_v: v.amplitude,
            theta,
            reference_phase: 0.0,
            grid: h.grid.clone(),
            covariances,
        })
    }

    pub fn from_parts(
        alpha_h: f64,
        alpha_v: f64,
        theta: f64,
        grid: FrequencyGrid,
        covariances: Vec<Matrix4<f64>>,
    ) -> Result<Self> {
        for a in [alpha_h, alpha_v] {
            if !(a.is_finite() && a >= 0.0) {
                return Err(domain(format!(
                    "amplitude must be finite and >= 0, got {a}"
                )));
            }
        }
        if !theta.is_finite() {
            return Err(domain("theta must be finite"));
        }
        if covariances.len() != grid.len() {
            return Err(domain(format!(
                "{} covariance matrices for a {}-point grid",
                covariances.len(),
                grid.len()
            )));
        }
        let covariances = validate_covariances(&grid, covariances)?;
        Ok(TwoModeState {
            alpha_h,
            alpha_v,
            theta,
            reference_phase: 0.0,
            grid,
            covariances,
        })
    }

    pub fn alpha_h(&self) -> f64 {
        self.alpha_h
    }

    pub fn alpha_v(&self) -> f64 {
        self.alpha_v
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn covariances(&self) -> &[Matrix4<f64>] {
        &self.covariances
    }

    pub fn covariance(&self, index: usize) -> &Matrix4<f64> {
        &self.covariances[index]
    }

    /// Total photon number `alpha_H^2 + alpha_V^2`, the shot-noise level.
    pub fn photon_number(&self) -> f64 {
        self.alpha_h * self.alpha_h + self.alpha_v * self.alpha_v
    }

    pub fn mode(&self, p: Polarization) -> BeamMode {
        let (amplitude, base) = match p {
            Polarization::H => (self.alpha_h, 0),
            Polarization::V => (self.alpha_v, 2),
        };
        BeamMode {
            amplitude,
            grid: self.grid.clone(),
            variances: self
                .covariances
                .iter()
                .map(|c| QuadratureVariances {
                    plus: c[(base, base)],
                    minus: c[(base + 1, base + 1)],
                })
                .collect(),
        }
    }

    pub fn mode_h(&self) -> BeamMode {
        self.mode(Polarization::H)
    }

    pub fn mode_v(&self) -> BeamMode {
        self.mode(Polarization::V)
    }

    /// Same state with a different relative phase; the amplitude-frame
    /// covariance is kept.
    pub fn with_theta(&self, theta: f64) -> TwoModeState {
        TwoModeState {
            theta,
            ..self.clone()
        }
    }

    /// Single-frequency slice at grid index `index`.
    pub fn slice(&self, index: usize) -> TwoModeState {
        TwoModeState {
            grid: FrequencyGrid(vec![self.grid.0[index]]),
            covariances: vec![self.covariances[index]],
            ..self.clone()
        }
    }

    /// Exchanges the H and V modes; `theta` becomes `-theta`.
    pub fn swap_polarizations(&self) -> TwoModeState {
        let p = Matrix4::new(
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0,
        );
        TwoModeState {
            alpha_h: self.alpha_v,
            alpha_v: self.alpha_h,
            theta: -self.theta,
            reference_phase: self.reference_phase + self.theta,
            grid: self.grid.clone(),
            covariances: self
                .covariances
                .iter()
                .map(|c| p * c * p.transpose())
                .collect(),
        }
    }

    /// Lab-frame phases `(phi_H, phi_V)` of the two amplitude frames;
    /// `phi_V - phi_H = theta`.
    pub fn lab_phases(&self) -> (f64, f64) {
        (self.reference_phase, self.reference_phase + self.theta)
    }

    /// Mean lab-frame quadrature vector `(X_H, P_H, X_V, P_V)`; `X = b + b^dagger`.
    pub fn lab_means(&self) -> Vector4<f64> {
        let (ph, pv) = self.lab_phases();
        Vector4::new(
            2.0 * self.alpha_h * ph.cos(),
            2.0 * self.alpha_h * ph.sin(),
            2.0 * self.alpha_v * pv.cos(),
            2.0 * self.alpha_v * pv.sin(),
        )
    }

    pub fn lab_covariance(&self, index: usize) -> Matrix4<f64> {
        let (ph, pv) = self.lab_phases();
        let r = frame_rotation(ph, pv);
        r * self.covariances[index] * r.transpose()
    }

    /// Complex lab-frame amplitudes `(B_H, B_V)`.
    pub fn lab_amplitudes(&self) -> [Complex64; 2] {
        let (ph, pv) = self.lab_phases();
        [
            Complex64::from_polar(self.alpha_h, ph),
            Complex64::from_polar(self.alpha_v, pv),
        ]
    }

    fn from_lab(
        means: Vector4<f64>,
        lab_covariances: Vec<Matrix4<f64>>,
        grid: FrequencyGrid,
    ) -> Result<Self> {
        let alpha_h = 0.5 * means[0].hypot(means[1]);
        let alpha_v = 0.5 * means[2].hypot(means[3]);
        let ph = means[1].atan2(means[0]);
        let pv = means[3].atan2(means[2]);
        let r = frame_rotation(ph, pv);
        let covariances = lab_covariances
            .iter()
            .map(|c| r.transpose() * c * r)
            .collect();
        let covariances = validate_covariances(&grid, covariances)?;
        Ok(TwoModeState {
            alpha_h,
            alpha_v,
            theta: wrap_angle(pv - ph),
            reference_phase: ph,
            grid,
            covariances,
        })
    }

    /// Whether the covariance at `index` satisfies the full uncertainty
    /// principle `C + i Omega >= 0` (commutator `[X+, X-] = 2i`), within `tol`
    /// relative to the trace.
    pub fn is_physical(&self, index: usize, tol: f64) -> bool {
        let c = &self.covariances[index];
        let mut omega = Matrix4::zeros();
        for b in [0, 2] {
            omega[(b, b + 1)] = 1.0;
            omega[(b + 1, b)] = -1.0;
        }
        // Hermitian C + i Omega is PSD iff the real embedding [[C, -Omega], [Omega, C]] is.
        let mut big = SMatrix::<f64, 8, 8>::zeros();
        big.fixed_view_mut::<4, 4>(0, 0).copy_from(c);
        big.fixed_view_mut::<4, 4>(4, 4).copy_from(c);
        big.fixed_view_mut::<4, 4>(0, 4).copy_from(&(-omega));
        big.fixed_view_mut::<4, 4>(4, 0).copy_from(&omega);
        let min = big.symmetric_eigen().eigenvalues.min();
        min >= -tol * c.trace()
    }
}

fn validate_covariances(
    grid: &FrequencyGrid,
    covariances: Vec<Matrix4<f64>>,
) -> Result<Vec<Matrix4<f64>>> {
    covariances
        .iter()
        .zip(grid.as_slice())
        .map(|(c, f)| {
            let c = psd_clamp(c).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} at {f} Hz")),
                e => e,
            })?;
            for (name, b) in [("H", 0), ("V", 2)] {
                let product = c[(b, b)] * c[(b + 1, b + 1)];
                if product < 1.0 - ADMISSIBILITY_TOLERANCE {
                    return Err(Error::Admissibility(format!(
                        "{name} mode V+ * V- = {product} < 1 at {f} Hz"
                    )));
                }
            }
            Ok(c)
        })
        .collect()
}

/// Affine optical element on lab-frame quadratures, optionally followed by a
/// loss channel with transmission `efficiency`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticElement {
    pub name: String,
    pub matrix: Matrix4<f64>,
    pub efficiency: Option<f64>,
}

impl SymplecticElement {
    pub fn new(name: impl Into<String>, matrix: Matrix4<f64>) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(
                "element matrix has non-finite entries".into(),
            ));
        }
        Ok(SymplecticElement {
            name: name.into(),
            matrix,
            efficiency: None,
        })
    }

    pub fn identity() -> Self {
        SymplecticElement {
            name: "identity".into(),
            matrix: Matrix4::identity(),
            efficiency: None,
        }
    }

    pub fn loss(eta: f64) -> Result<Self> {
        check_efficiency(eta)?;
        Ok(SymplecticElement {
            name: format!("loss({eta})"),
            matrix: Matrix4::identity(),
            efficiency: Some(eta),
        })
    }

    pub fn with_efficiency(mut self, eta: f64) -> Result<Self> {
        check_efficiency(eta)?;
        self.efficiency = Some(eta);
        Ok(self)
    }

    /// Lifts a 2x2 Jones matrix acting on `(b_H, b_V)` to quadrature space.
    pub fn from_jones(name: impl Into<String>, jones: &[[Complex64; 2]; 2]) -> Result<Self> {
        let mut m = Matrix4::zeros();
        for (i, row) in jones.iter().enumerate() {
            for (j, u) in row.iter().enumerate() {
                let block = Matrix2::new(u.re, -u.im, u.im, u.re);
                m.fixed_view_mut::<2, 2>(2 * i, 2 * j).copy_from(&block);
            }
        }
        Self::new(name, m)
    }

    /// Independent phase shifts of the H and V fields.
    pub fn phase_shift(phi_h: f64, phi_v: f64) -> Self {
        SymplecticElement {
            name: format!("phase({phi_h},{phi_v})"),
            matrix: frame_rotation(phi_h, phi_v),
            efficiency: None,
        }
    }

    /// Single-mode squeezer of strength `r` on `mode`, squeezing the lab
    /// quadrature at angle `angle`.
    pub fn squeezer(mode: Polarization, r: f64, angle: f64) -> Self {
        let rot = rotation(angle);
        let s = rot * Matrix2::new((-r).exp(), 0.0, 0.0, r.exp()) * rot.transpose();
        let mut m = Matrix4::identity();
        let b = mode.base();
        m.fixed_view_mut::<2, 2>(b, b).copy_from(&s);
        SymplecticElement {
            name: format!("squeezer({r})"),
            matrix: m,
            efficiency: None,
        }
    }

    /// `next` applied after `self`. Only defined for lossless elements.
    pub fn then(&self, next: &SymplecticElement) -> Result<SymplecticElement> {
        if self.efficiency.is_some() || next.efficiency.is_some() {
            return Err(domain("composition is only defined for lossless elements"));
        }
        Ok(SymplecticElement {
            name: format!("{}*{}", next.name, self.name),
            matrix: next.matrix * self.matrix,
            efficiency: None,
        })
    }

    /// `S Omega S^T == Omega` to within `tol`.
    pub fn is_symplectic(&self, tol: f64) -> bool {
        let mut omega = Matrix4::zeros();
        for b in [0, 2] {
            omega[(b, b + 1)] = 1.0;
            omega[(b + 1, b)] = -1.0;
        }
        (self.matrix * omega * self.matrix.transpose() - omega).amax() <= tol
    }
}

pub fn apply_element(state: &TwoModeState, element: &SymplecticElement) -> Result<TwoModeState> {
    let s = &element.matrix;
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "element `{}` has non-finite entries",
            element.name
        )));
    }
    let mut means = s * state.lab_means();
    let mut covs: Vec<Matrix4<f64>> = (0..state.grid.len())
        .map(|i| s * state.lab_covariance(i) * s.transpose())
        .collect();
    if let Some(eta) = element.efficiency {
        check_efficiency(eta)?;
        means *= eta.sqrt();
        for c in &mut covs {
            *c = *c * eta + Matrix4::identity() * (1.0 - eta);
        }
    }
    TwoModeState::from_lab(means, covs, state.grid.clone())
}

/// Adds classical noise of variance `excess` to quadrature `q` of both modes,
/// fully correlated (or anti-correlated) between H and V.
pub fn add_correlated_classical_noise(
    state: &TwoModeState,
    q: Quadrature,
    excess: f64,
    correlation: Correlation,
) -> Result<TwoModeState> {
    if !(excess >= 0.0 && excess.is_finite()) {
        return Err(domain(format!("excess noise must be >= 0, got {excess}")));
    }
    let (h, v) = (Polarization::H.index(q), Polarization::V.index(q));
    let cross = correlation.sign() * excess;
    let covariances = state
        .covariances
        .iter()
        .map(|c| {
            let mut c = *c;
            c[(h, h)] += excess;
            c[(v, v)] += excess;
            c[(h, v)] += cross;
            c[(v, h)] += cross;
            c
        })
        .collect();
    let covariances = validate_covariances(&state.grid, covariances)?;
    Ok(TwoModeState {
        covariances,
        ..state.clone()
    })
}
