//! Wave plates, polarizing beam splitters and the four Stokes detection setups.
//!
//! Handedness convention: lab fields `(b_H, b_V)`, `S3 = 2 Im(b_H* b_V)`, and
//! `S3 > 0` is right-circular, i.e. `(1, i)/sqrt2`. A retarder with fast axis
//! at `phi` and retardance `delta` has Jones matrix
//! `R(phi) diag(1, e^{i delta}) R(-phi)`.
//!
//! Every setup ends in a PBS and two photodiodes whose photocurrents are added
//! (`S0`) or subtracted. The plate chain in front of the PBS rotates the Stokes
//! parameter of interest onto `S1`:
//!
//! | setup | plates before the PBS              | electrical |
//! |-------|------------------------------------|------------|
//! | S0    | none                               | sum        |
//! | S1    | none                               | difference |
//! | S2    | HWP at 22.5 deg                    | difference |
//! | S3    | HWP at 22.5 deg, then QWP at -45 deg | difference |
//!
//! The S3 chain sends right-circular light entirely to the H detector; run
//! backwards, it turns a horizontally polarized beam right-circular.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector4;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::gaussian::{apply_element, BeamMode, SymplecticElement, TwoModeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateKind {
    Half,
    Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WavePlate {
    pub kind: PlateKind,
    /// Fast-axis angle from horizontal, radians.
    pub axis_angle: f64,
}

impl WavePlate {
    pub fn half(axis_angle: f64) -> Self {
        WavePlate {
            kind: PlateKind::Half,
            axis_angle,
        }
    }

    pub fn quarter(axis_angle: f64) -> Self {
        WavePlate {
            kind: PlateKind::Quarter,
            axis_angle,
        }
    }

    pub fn jones(&self) -> [[Complex64; 2]; 2] {
        let retard = match self.kind {
            PlateKind::Half => Complex64::new(-1.0, 0.0),
            PlateKind::Quarter => Complex64::new(0.0, 1.0),
        };
        let (s, c) = self.axis_angle.sin_cos();
        let one = Complex64::new(1.0, 0.0);
        // R(phi) diag(1, r) R(-phi)
        [
            [c * c * one + s * s * retard, c * s * (one - retard)],
            [c * s * (one - retard), s * s * one + c * c * retard],
        ]
    }

    pub fn element(&self) -> SymplecticElement {
        let name = match self.kind {
            PlateKind::Half => format!("hwp({})", self.axis_angle),
            PlateKind::Quarter => format!("qwp({})", self.axis_angle),
        };
        SymplecticElement::from_jones(name, &self.jones()).expect("wave-plate matrices are finite")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Electrical {
    Sum,
    Difference,
}

impl Electrical {
    fn sign(self) -> f64 {
        match self {
            Electrical::Sum => 1.0,
            Electrical::Difference => -1.0,
        }
    }
}

/// Names of the four canonical measurement chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StokesSetup {
    S0,
    S1,
    S2,
    S3,
}

impl StokesSetup {
    pub const ALL: [StokesSetup; 4] = [
        StokesSetup::S0,
        StokesSetup::S1,
        StokesSetup::S2,
        StokesSetup::S3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StokesSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index())
    }
}

impl FromStr for StokesSetup {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S0" => Ok(StokesSetup::S0),
            "S1" => Ok(StokesSetup::S1),
            "S2" => Ok(StokesSetup::S2),
            "S3" => Ok(StokesSetup::S3),
            other => Err(domain(format!(
                "unknown setup `{other}`, expected S0, S1, S2 or S3"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSetup {
    pub plates: Vec<WavePlate>,
    pub electrical: Electrical,
    pub detector_efficiency: f64,
}

impl DetectionSetup {
    pub fn new(
        plates: Vec<WavePlate>,
        electrical: Electrical,
        detector_efficiency: f64,
    ) -> Result<Self> {
        if !(detector_efficiency > 0.0 && detector_efficiency <= 1.0) {
            return Err(domain(format!(
                "detector efficiency must lie in (0, 1], got {detector_efficiency}"
            )));
        }
        Ok(DetectionSetup {
            plates,
            electrical,
            detector_efficiency,
        })
    }

    /// Ideal-efficiency chain for one Stokes parameter.
    pub fn canonical(setup: StokesSetup) -> Self {
        use std::f64::consts::FRAC_PI_4;
        let hwp = WavePlate::half(FRAC_PI_4 / 2.0);
        let (plates, electrical) = match setup {
            StokesSetup::S0 => (vec![], Electrical::Sum),
            StokesSetup::S1 => (vec![], Electrical::Difference),
            StokesSetup::S2 => (vec![hwp], Electrical::Difference),
            StokesSetup::S3 => (
                vec![hwp, WavePlate::quarter(-FRAC_PI_4)],
                Electrical::Difference,
            ),
        };
        DetectionSetup {
            plates,
            electrical,
            detector_efficiency: 1.0,
        }
    }

    pub fn with_efficiency(mut self, eta: f64) -> Result<Self> {
        self = Self::new(self.plates, self.electrical, eta)?;
        Ok(self)
    }

    /// State incident on the PBS, after the plates and the detector loss.
    pub fn incident_state(&self, state: &TwoModeState) -> Result<TwoModeState> {
        let mut s = state.clone();
        for plate in &self.plates {
            s = apply_element(&s, &plate.element())?;
        }
        if self.detector_efficiency < 1.0 {
            s = apply_element(&s, &SymplecticElement::loss(self.detector_efficiency)?)?;
        }
        Ok(s)
    }

    /// Combined Jones matrix of the plate chain.
    pub fn jones(&self) -> [[Complex64; 2]; 2] {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        self.plates
            .iter()
            .fold([[one, zero], [zero, one]], |acc, p| {
                let j = p.jones();
                let mut out = [[zero; 2]; 2];
                for (r, row) in out.iter_mut().enumerate() {
                    for (c, cell) in row.iter_mut().enumerate() {
                        *cell = j[r][0] * acc[0][c] + j[r][1] * acc[1][c];
                    }
                }
                out
            })
    }

    pub fn electrical_sign(&self) -> f64 {
        self.electrical.sign()
    }
}

/// Mean and per-frequency fluctuation variance of the sum/difference photocurrent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhotocurrentStats {
    pub frequencies: Vec<f64>,
    pub mean_current: f64,
    pub fluctuation_variance: Vec<f64>,
}

impl PhotocurrentStats {
    /// Applies a detection efficiency after the fact: the mean scales by `eta`
    /// and the variance mixes toward the shot noise `shot` of the undetected beam.
    pub fn with_efficiency(&self, eta: f64, shot: f64) -> PhotocurrentStats {
        PhotocurrentStats {
            frequencies: self.frequencies.clone(),
            mean_current: eta * self.mean_current,
            fluctuation_variance: self
                .fluctuation_variance
                .iter()
                .map(|v| eta * eta * v + eta * (1.0 - eta) * shot)
                .collect(),
        }
    }
}

/// Combines `a` (horizontal) and `b` (vertical) on a PBS with relative phase `theta`.
pub fn combine_on_pbs(a: &BeamMode, b: &BeamMode, theta: f64) -> Result<TwoModeState> {
    TwoModeState::from_modes(a, b, theta)
}

pub fn measure(setup: &DetectionSetup, state: &TwoModeState) -> Result<PhotocurrentStats> {
    let incident = setup.incident_state(state)?;
    let sign = setup.electrical_sign();
    let (ah, av) = (incident.alpha_h(), incident.alpha_v());
    // i_H - i_V to first order: aH dX_H+ -/+ aV dX_V+
    let k = Vector4::new(ah, 0.0, sign * av, 0.0);
    let fluctuation_variance = incident
        .covariances()
        .iter()
        .map(|c| (k.transpose() * c * k)[(0, 0)].max(0.0))
        .collect();
    Ok(PhotocurrentStats {
        frequencies: incident.grid().as_slice().to_vec(),
        mean_current: ah * ah + sign * av * av,
        fluctuation_variance,
    })
}

pub fn stokes_rotation(state: &TwoModeState, plate: &WavePlate) -> Result<TwoModeState> {
    apply_element(state, &plate.element())
}

/// Shot-noise reference of a coherent calibration beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotNoiseCalibration {
    /// Shot-noise variance, equal to the photon number of the calibration beam.
    pub reference: f64,
    /// Largest relative power mismatch between calibration and signal beams.
    pub power_mismatch: f64,
    /// `10 log10(1 + power_mismatch)`: one-sided dB bound implied by the mismatch.
    pub mismatch_bound_db: f64,
    /// The conservative error band quoted for the measured spectra.
    pub quoted_band_db: f64,
}

pub const CALIBRATION_POWER_MISMATCH: f64 = 0.02;
pub const CALIBRATION_QUOTED_BAND_DB: f64 = 0.04;

pub fn calibrate_shot_noise(power: f64) -> Result<ShotNoiseCalibration> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(domain(format!(
            "calibration power must be > 0, got {power}"
        )));
    }
    Ok(ShotNoiseCalibration {
        reference: power,
        power_mismatch: CALIBRATION_POWER_MISMATCH,
        mismatch_bound_db: 10.0 * (1.0 + CALIBRATION_POWER_MISMATCH).log10(),
        quoted_band_db: CALIBRATION_QUOTED_BAND_DB,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{
        make_coherent, make_squeezed, FrequencyGrid, Quadrature, SqueezeSpectrum,
    };
    use crate::stokes::{stokes_means, stokes_stats_at, stokes_variances_at};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI};

    fn grid() -> FrequencyGrid {
        FrequencyGrid::single(5e6).unwrap()
    }

    fn cigar() -> TwoModeState {
        let m = make_squeezed(
            1.0,
            Quadrature::Amplitude,
            &SqueezeSpectrum::flat(0.5),
            &grid(),
        )
        .unwrap();
        combine_on_pbs(&m, &m, FRAC_PI_2).unwrap()
    }

    #[test]
    fn pbs_combination_orientations() {
        let m = make_coherent(2.0, &grid()).unwrap();
        let right = combine_on_pbs(&m, &m, FRAC_PI_2).unwrap();
        let s = stokes_means(&right);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
        assert_relative_eq!(s[3], s[0], max_relative = 1e-14);

        let diag = combine_on_pbs(&m, &m, 0.0).unwrap();
        let s = stokes_means(&diag);
        assert_relative_eq!(s[2], s[0], max_relative = 1e-14);

        let vac = make_coherent(0.0, &grid()).unwrap();
        let horizontal = combine_on_pbs(&m, &vac, 0.0).unwrap();
        assert_eq!(horizontal.mode_h(), m);

        let other = make_coherent(1.0, &FrequencyGrid::single(6e6).unwrap()).unwrap();
        assert!(combine_on_pbs(&m, &other, 0.0).is_err());
    }

    #[test]
    fn canonical_setups_match_engine_on_cigar() {
        let s = cigar();
        let stats = stokes_stats_at(&s, 0);
        for setup in StokesSetup::ALL {
            let p = measure(&DetectionSetup::canonical(setup), &s).unwrap();
            let i = setup.index();
            assert_relative_eq!(p.mean_current, stats.means[i], epsilon = 1e-12);
            assert_relative_eq!(
                p.fluctuation_variance[0],
                stats.variances[i],
                epsilon = 1e-12
            );
        }
        let s3 = measure(&DetectionSetup::canonical(StokesSetup::S3), &s).unwrap();
        assert_relative_eq!(
            s3.fluctuation_variance[0],
            0.5 * s.photon_number(),
            max_relative = 1e-12
        );
        let s1 = measure(&DetectionSetup::canonical(StokesSetup::S1), &s).unwrap();
        assert!(s1.mean_current.abs() < 1e-12);
    }

    #[test]
    fn s2_setup_is_a_homodyne_detector_on_coherent_light() {
        let m = make_coherent(3.0, &grid()).unwrap();
        let vac = make_coherent(0.0, &grid()).unwrap();
        let s = combine_on_pbs(&m, &vac, 0.0).unwrap();
        let p = measure(&DetectionSetup::canonical(StokesSetup::S2), &s).unwrap();
        let cal = calibrate_shot_noise(9.0).unwrap();
        assert_relative_eq!(
            p.fluctuation_variance[0],
            cal.reference,
            max_relative = 1e-14
        );
    }

    #[test]
    fn s3_chain_maps_right_circular_to_horizontal() {
        let m = make_coherent(1.0, &grid()).unwrap();
        let right = combine_on_pbs(&m, &m, FRAC_PI_2).unwrap();
        let out = DetectionSetup::canonical(StokesSetup::S3)
            .incident_state(&right)
            .unwrap();
        assert_relative_eq!(out.alpha_h(), 2f64.sqrt(), max_relative = 1e-12);
        assert!(out.alpha_v() < 1e-12);
    }

    #[test]
    fn plate_rotations() {
        let m = make_squeezed(
            2.0,
            Quadrature::Amplitude,
            &SqueezeSpectrum::flat(0.4),
            &grid(),
        )
        .unwrap();
        let v = make_coherent(1.0, &grid()).unwrap();
        let s = combine_on_pbs(&m, &v, 0.6).unwrap();
        let before = stokes_means(&s);

        let after = stokes_means(&stokes_rotation(&s, &WavePlate::half(0.0)).unwrap());
        assert_relative_eq!(after[1], before[1], max_relative = 1e-12);
        assert_relative_eq!(after[2], -before[2], max_relative = 1e-12);
        assert_relative_eq!(after[3], -before[3], max_relative = 1e-12);

        let h = combine_on_pbs(
            &make_coherent(1.0, &grid()).unwrap(),
            &make_coherent(0.0, &grid()).unwrap(),
            0.0,
        )
        .unwrap();
        let d = stokes_means(&stokes_rotation(&h, &WavePlate::half(FRAC_PI_8)).unwrap());
        assert_relative_eq!(d[2], 1.0, max_relative = 1e-12);
        assert!(d[1].abs() < 1e-12);

        for plate in [
            WavePlate::half(0.3),
            WavePlate::quarter(1.1),
            WavePlate::quarter(-PI / 4.0),
        ] {
            let out = stokes_rotation(&s, &plate).unwrap();
            let a = stokes_means(&out);
            let norm = |x: [f64; 4]| (x[1] * x[1] + x[2] * x[2] + x[3] * x[3]).sqrt();
            assert_relative_eq!(norm(a), norm(before), max_relative = 1e-12);
            assert_relative_eq!(a[0], before[0], max_relative = 1e-12);
            assert!(plate.element().is_symplectic(1e-12));
        }
    }

    #[test]
    fn efficiency_orderings_agree() {
        let s = cigar();
        let eta = 0.8;
        for setup in StokesSetup::ALL {
            let base = DetectionSetup::canonical(setup);
            let lossy = measure(&base.clone().with_efficiency(eta).unwrap(), &s).unwrap();
            let after = measure(&base, &s)
                .unwrap()
                .with_efficiency(eta, s.photon_number());
            assert_relative_eq!(lossy.mean_current, after.mean_current, epsilon = 1e-12);
            assert_relative_eq!(
                lossy.fluctuation_variance[0],
                after.fluctuation_variance[0],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn calibration() {
        let cal = calibrate_shot_noise(2.0).unwrap();
        assert_eq!(cal.reference, 2.0);
        assert!((cal.mismatch_bound_db - 0.086).abs() < 1e-3);
        assert_eq!(cal.quoted_band_db, 0.04);
        assert!(calibrate_shot_noise(0.0).is_err());
        assert!(calibrate_shot_noise(-1.0).is_err());
    }

    #[test]
    fn setup_names_and_validation() {
        assert_eq!("S3".parse::<StokesSetup>().unwrap(), StokesSetup::S3);
        assert!("S4".parse::<StokesSetup>().is_err());
        assert_eq!(StokesSetup::S2.to_string(), "S2");
        assert!(DetectionSetup::new(vec![], Electrical::Sum, 0.0).is_err());
        assert!(DetectionSetup::new(vec![], Electrical::Sum, 1.2).is_err());
    }

    #[test]
    fn coherent_variance_is_unchanged_by_plates() {
        let m = make_coherent(1.3, &grid()).unwrap();
        let s = combine_on_pbs(&m, &make_coherent(0.4, &grid()).unwrap(), 1.0).unwrap();
        for plate in [WavePlate::half(0.2), WavePlate::quarter(0.7)] {
            let out = stokes_rotation(&s, &plate).unwrap();
            assert_relative_eq!(
                out.covariance(0),
                &nalgebra::Matrix4::identity(),
                epsilon = 1e-12
            );
            assert_relative_eq!(out.photon_number(), s.photon_number(), max_relative = 1e-12);
            for v in stokes_variances_at(&out, 0) {
                assert_relative_eq!(v, s.photon_number(), max_relative = 1e-12);
            }
        }
    }
}
