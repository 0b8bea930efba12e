//! Stokes-parameter statistics of a linearized two-mode state.
//!
//! To first order in the fluctuations each Stokes operator is
//! `S_j = <S_j> + c_j . dX` with `dX = (X_H+, X_H-, X_V+, X_V-)`, so every
//! variance is a quadratic form `c_j^T C c_j` over the stored covariance. With
//! `c = cos theta`, `s = sin theta`:
//!
//! ```text
//! c0 = ( aH,     0,      aV,     0    )
//! c1 = ( aH,     0,     -aV,     0    )
//! c2 = ( aV c,   aV s,   aH c,  -aH s )
//! c3 = ( aV s,  -aV c,   aH s,   aH c )
//! ```
//!
//! At `theta = 0` and `theta = pi/2` with uncorrelated modes these reduce to the
//! familiar `V2(0) = aV^2 V_H+ + aH^2 V_V+` family.

use nalgebra::Vector4;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::gaussian::TwoModeState;

/// Half-width of the band around shot noise that counts as "unsqueezed" when
/// classifying ellipsoids (about +-0.09 dB).
pub const ELLIPSOID_TOLERANCE: f64 = 0.02;

/// Linearization is flagged when a quadrature variance exceeds this fraction
/// of the photon number.
pub const LINEARIZATION_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StokesStats {
    pub means: [f64; 4],
    pub variances: [f64; 4],
    pub shot_noise: f64,
    pub frequency_hz: f64,
}

impl StokesStats {
    /// Variances divided by the shot-noise level.
    pub fn normalized_variances(&self) -> [f64; 4] {
        self.variances.map(|v| v / self.shot_noise)
    }

    pub fn variances_db(&self) -> [f64; 4] {
        self.normalized_variances().map(|v| 10.0 * v.log10())
    }
}

/// Linearized coefficient vectors `c_0..c_3` for given `cos theta`, `sin theta`.
pub fn stokes_coefficients_cs(alpha_h: f64, alpha_v: f64, cos: f64, sin: f64) -> [Vector4<f64>; 4] {
    let (ah, av) = (alpha_h, alpha_v);
    [
        Vector4::new(ah, 0.0, av, 0.0),
        Vector4::new(ah, 0.0, -av, 0.0),
        Vector4::new(av * cos, av * sin, ah * cos, -ah * sin),
        Vector4::new(av * sin, -av * cos, ah * sin, ah * cos),
    ]
}

pub fn stokes_coefficients(state: &TwoModeState) -> [Vector4<f64>; 4] {
    let (sin, cos) = state.theta().sin_cos();
    stokes_coefficients_cs(state.alpha_h(), state.alpha_v(), cos, sin)
}

pub fn stokes_means(state: &TwoModeState) -> [f64; 4] {
    let (ah, av) = (state.alpha_h(), state.alpha_v());
    let (sin, cos) = state.theta().sin_cos();
    [
        ah * ah + av * av,
        ah * ah - av * av,
        2.0 * ah * av * cos,
        2.0 * ah * av * sin,
    ]
}

/// `(V0, V1, V2, V3)` at grid index `index`.
pub fn stokes_variances_at(state: &TwoModeState, index: usize) -> [f64; 4] {
    let c = state.covariance(index);
    stokes_coefficients(state).map(|k| (k.transpose() * c * k)[(0, 0)].max(0.0))
}

/// `(V0, V1, V2, V3)` at every grid frequency.
pub fn stokes_variances(state: &TwoModeState) -> Vec<[f64; 4]> {
    (0..state.grid().len())
        .map(|i| stokes_variances_at(state, i))
        .collect()
}

/// True when every quadrature variance is small against the photon number.
pub fn linearization_valid(state: &TwoModeState) -> bool {
    let limit = LINEARIZATION_LIMIT * state.photon_number();
    state
        .covariances()
        .iter()
        .all(|c| (0..4).all(|i| c[(i, i)] <= limit))
}

pub fn stokes_stats_at(state: &TwoModeState, index: usize) -> StokesStats {
    StokesStats {
        means: stokes_means(state),
        variances: stokes_variances_at(state, index),
        shot_noise: state.photon_number(),
        frequency_hz: state.grid().as_slice()[index],
    }
}

pub fn stokes_stats(state: &TwoModeState) -> Vec<StokesStats> {
    if !linearization_valid(state) {
        log::warn!(
            "quadrature variance exceeds {} x photon number ({}); linearized statistics may be inaccurate",
            LINEARIZATION_LIMIT,
            state.photon_number()
        );
    }
    (0..state.grid().len())
        .map(|i| stokes_stats_at(state, i))
        .collect()
}

/// One uncertainty relation `V_i V_j >= |<S_k>|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyPair {
    pub pair: (usize, usize),
    pub bound_index: usize,
    pub product: f64,
    pub bound: f64,
}

impl UncertaintyPair {
    /// `(product - bound) / bound`, or the raw difference for a zero bound.
    pub fn relative_slack(&self) -> f64 {
        if self.bound > 0.0 {
            (self.product - self.bound) / self.bound
        } else {
            self.product - self.bound
        }
    }
}

pub fn uncertainty_products(stats: &StokesStats) -> [UncertaintyPair; 3] {
    let (v, m) = (stats.variances, stats.means);
    [(1, 2, 3), (2, 3, 1), (3, 1, 2)].map(|(i, j, k)| UncertaintyPair {
        pair: (i, j),
        bound_index: k,
        product: v[i] * v[j],
        bound: m[k] * m[k],
    })
}

/// Quantum Poincare radius `sqrt(<S0^2 + 2 S0>)` with `<S0^2> = <S0>^2 + V0`.
///
/// `V0` is the linearized variance, so the vacuum limit returns 0 rather than
/// the exact operator value.
pub fn poincare_radius(stats: &StokesStats) -> f64 {
    let s0 = stats.means[0];
    (s0 * s0 + stats.variances[0] + 2.0 * s0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EllipsoidClass {
    Sphere,
    Cigar,
    Pancake,
    Other,
}

/// Standard-deviation ellipsoid of the Stokes noise on the Poincare sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseEllipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub classification: EllipsoidClass,
    pub frequency_hz: f64,
}

pub fn classify_ellipsoid(stats: &StokesStats) -> Result<NoiseEllipsoid> {
    classify_ellipsoid_with(stats, ELLIPSOID_TOLERANCE)
}

pub fn classify_ellipsoid_with(stats: &StokesStats, tolerance: f64) -> Result<NoiseEllipsoid> {
    if !(stats.shot_noise > 0.0) {
        return Err(domain("ellipsoid needs a positive shot-noise level"));
    }
    let n = stats.normalized_variances();
    let axes = [n[1], n[2], n[3]];
    let below = axes.iter().filter(|&&v| v < 1.0 - tolerance).count();
    let above = axes.iter().filter(|&&v| v > 1.0 + tolerance).count();
    let classification = match (below, above) {
        (0, 0) => EllipsoidClass::Sphere,
        (2, _) => EllipsoidClass::Cigar,
        (1, 2) => EllipsoidClass::Pancake,
        _ => EllipsoidClass::Other,
    };
    Ok(NoiseEllipsoid {
        center: [stats.means[1], stats.means[2], stats.means[3]],
        semi_axes: axes.map(f64::sqrt),
        classification,
        frequency_hz: stats.frequency_hz,
    })
}

/// Smallest `(V_i + V_j) / <n>` over `i != j in {1,2,3}` and all frequencies.
/// States built from at most one squeezed input never go below 1.
pub fn single_squeezed_bound_check(state: &TwoModeState) -> f64 {
    let n = state.photon_number();
    stokes_variances(state)
        .iter()
        .flat_map(|v| [v[1] + v[2], v[2] + v[3], v[3] + v[1]])
        .map(|sum| sum / n)
        .fold(f64::INFINITY, f64::min)
}
