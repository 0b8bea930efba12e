use std::f64::consts::{PI, TAU};

use approx::assert_relative_eq;
use nalgebra::Matrix4;
use proptest::prelude::*;
use sqz_core::apparatus::{
    calibrate_shot_noise, combine_on_pbs, measure, DetectionSetup, StokesSetup, WavePlate,
};
use sqz_core::gaussian::{
    add_correlated_classical_noise, apply_element, make_coherent, make_squeezed, Correlation,
    FrequencyGrid, Polarization, Quadrature, SqueezeSpectrum, SymplecticElement, TwoModeState,
};
use sqz_core::stokes::{
    classify_ellipsoid, stokes_means, stokes_stats, stokes_stats_at, stokes_variances,
    uncertainty_products,
};

fn grid() -> FrequencyGrid {
    FrequencyGrid::new(vec![2e6, 5e6, 9e6]).unwrap()
}

fn quadrature() -> impl Strategy<Value = Quadrature> {
    prop_oneof![Just(Quadrature::Amplitude), Just(Quadrature::Phase)]
}

prop_compose! {
    fn model()(v in 0.05f64..1.0, corner in 1e6f64..2e7, lorentz in any::<bool>(), excess in 1.0f64..3.0)
        -> SqueezeSpectrum {
        let m = if lorentz { SqueezeSpectrum::lorentzian(v, corner) } else { SqueezeSpectrum::flat(v) };
        m.with_excess(excess)
    }
}

prop_compose! {
    /// Two independent squeezed beams on a PBS.
    fn uncorrelated_state()(
        ah in 0.5f64..40.0, av in 0.5f64..40.0,
        qh in quadrature(), qv in quadrature(),
        mh in model(), mv in model(),
        theta in 0.0f64..TAU,
    ) -> TwoModeState {
        let h = make_squeezed(ah, qh, &mh, &grid()).unwrap();
        let v = make_squeezed(av, qv, &mv, &grid()).unwrap();
        combine_on_pbs(&h, &v, theta).unwrap()
    }
}

fn pure_element() -> impl Strategy<Value = SymplecticElement> {
    prop_oneof![
        (-PI..PI, -PI..PI).prop_map(|(a, b)| SymplecticElement::phase_shift(a, b)),
        (any::<bool>(), -1.0f64..1.0, 0.0..PI).prop_map(|(h, r, angle)| {
            let mode = if h { Polarization::H } else { Polarization::V };
            SymplecticElement::squeezer(mode, r, angle)
        }),
        (any::<bool>(), 0.0..PI).prop_map(|(half, angle)| {
            let plate = if half {
                WavePlate::half(angle)
            } else {
                WavePlate::quarter(angle)
            };
            plate.element()
        }),
    ]
}

prop_compose! {
    /// Random admissible state: squeezed inputs, optional correlated excess
    /// noise and a chain of pure elements and losses.
    fn admissible_state()(
        base in uncorrelated_state(),
        noise in proptest::option::of((quadrature(), 0.0f64..2.0, any::<bool>())),
        elements in proptest::collection::vec(pure_element(), 0..3),
        eta in proptest::option::of(0.05f64..1.0),
    ) -> TwoModeState {
        let mut s = base;
        if let Some((q, excess, pos)) = noise {
            let c = if pos { Correlation::Positive } else { Correlation::Negative };
            s = add_correlated_classical_noise(&s, q, excess, c).unwrap();
        }
        for e in &elements {
            s = apply_element(&s, e).unwrap();
        }
        if let Some(eta) = eta {
            s = apply_element(&s, &SymplecticElement::loss(eta).unwrap()).unwrap();
        }
        s
    }
}

fn assert_matrix_close(a: &Matrix4<f64>, b: &Matrix4<f64>, rel: f64) {
    let scale = a.norm().max(b.norm()).max(1.0);
    assert!((a - b).norm() <= rel * scale, "matrices differ:\n{a}\n{b}");
}

fn assert_states_close(a: &TwoModeState, b: &TwoModeState, rel: f64) {
    let (la, lb) = (a.lab_amplitudes(), b.lab_amplitudes());
    for k in 0..2 {
        assert!((la[k] - lb[k]).norm() <= rel * (la[k].norm() + lb[k].norm()).max(1.0));
    }
    for i in 0..a.grid().len() {
        assert_matrix_close(&a.lab_covariance(i), &b.lab_covariance(i), rel);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn admissibility_is_preserved(s in admissible_state()) {
        for i in 0..s.grid().len() {
            prop_assert!(s.is_physical(i, 1e-9));
        }
        for p in [Polarization::H, Polarization::V] {
            for v in s.mode(p).variances() {
                prop_assert!(v.uncertainty_product() >= 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn uncertainty_relations_hold(s in admissible_state()) {
        for stats in stokes_stats(&s) {
            for pair in uncertainty_products(&stats) {
                prop_assert!(pair.relative_slack() >= -1e-9, "{pair:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn composition_matches_sequential_application(s in admissible_state(), a in pure_element(), b in pure_element()) {
        let sequential = apply_element(&apply_element(&s, &a).unwrap(), &b).unwrap();
        let composed = apply_element(&s, &a.then(&b).unwrap()).unwrap();
        assert_states_close(&sequential, &composed, 1e-12);
    }

    #[test]
    fn composed_elements_stay_symplectic(a in pure_element(), b in pure_element()) {
        prop_assert!(a.then(&b).unwrap().is_symplectic(1e-12));
    }

    #[test]
    fn elements_act_per_frequency(s in admissible_state(), e in pure_element(), eta in 0.1f64..1.0) {
        let lossy = e.clone().with_efficiency(eta).unwrap();
        let whole = apply_element(&s, &lossy).unwrap();
        for i in 0..s.grid().len() {
            let slice = apply_element(&s.slice(i), &lossy).unwrap();
            assert_states_close(&whole.slice(i), &slice, 1e-12);
        }
    }

    #[test]
    fn loss_fixes_coherent_states(a in 0.1f64..100.0, b in 0.1f64..100.0, theta in 0.0f64..TAU, eta in 0.0f64..1.0) {
        let eta = eta.max(1e-6);
        let s = combine_on_pbs(&make_coherent(a, &grid()).unwrap(), &make_coherent(b, &grid()).unwrap(), theta).unwrap();
        let out = apply_element(&s, &SymplecticElement::loss(eta).unwrap()).unwrap();
        for c in out.covariances() {
            assert_matrix_close(c, &Matrix4::identity(), 1e-14);
        }
    }

    #[test]
    fn v2_v3_swap_between_zero_and_quarter_wave(s in uncorrelated_state()) {
        let at0 = stokes_variances(&s.with_theta(0.0));
        let at90 = stokes_variances(&s.with_theta(PI / 2.0));
        for (a, b) in at0.iter().zip(&at90) {
            assert_relative_eq!(a[2], b[3], max_relative = 1e-12);
            assert_relative_eq!(a[3], b[2], max_relative = 1e-12);
        }
    }

    #[test]
    fn loss_moves_variances_toward_shot_noise(s in admissible_state(), eta in 0.01f64..1.0) {
        let lossy = apply_element(&s, &SymplecticElement::loss(eta).unwrap()).unwrap();
        for (before, after) in stokes_stats(&s).iter().zip(stokes_stats(&lossy).iter()) {
            for (x, y) in before.normalized_variances().iter().zip(after.normalized_variances()) {
                prop_assert!((y - 1.0).abs() <= (x - 1.0).abs() * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn classification_survives_polarization_relabeling(s in uncorrelated_state()) {
        let swapped = s.swap_polarizations();
        for i in 0..s.grid().len() {
            let a = stokes_stats_at(&s, i);
            let b = stokes_stats_at(&swapped, i);
            prop_assert_eq!(classify_ellipsoid(&a).unwrap().classification, classify_ellipsoid(&b).unwrap().classification);
            for j in 0..4 {
                prop_assert!((a.variances[j] - b.variances[j]).abs() <= 1e-9 * a.shot_noise);
            }
        }
    }

    #[test]
    fn correlated_amplitude_noise_cancels_in_s1(a in 0.5f64..30.0, theta in 0.0f64..TAU, m in model(), excess in 0.01f64..5.0) {
        let beam = make_squeezed(a, Quadrature::Amplitude, &m, &grid()).unwrap();
        let s = combine_on_pbs(&beam, &beam, theta).unwrap();
        let base = stokes_variances(&s);
        let pos = stokes_variances(&add_correlated_classical_noise(&s, Quadrature::Amplitude, excess, Correlation::Positive).unwrap());
        let neg = stokes_variances(&add_correlated_classical_noise(&s, Quadrature::Amplitude, excess, Correlation::Negative).unwrap());
        for i in 0..base.len() {
            assert_relative_eq!(pos[i][1], base[i][1], max_relative = 1e-10);
            prop_assert!(pos[i][0] > base[i][0]);
            assert_relative_eq!(neg[i][0], base[i][0], max_relative = 1e-10);
            prop_assert!(neg[i][1] > base[i][1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn canonical_setups_measure_the_stokes_parameters(s in admissible_state()) {
        let means = stokes_means(&s);
        let variances = stokes_variances(&s);
        let shot = s.photon_number();
        for setup in StokesSetup::ALL {
            let j = setup.index();
            let out = measure(&DetectionSetup::canonical(setup), &s).unwrap();
            prop_assert!((out.mean_current - means[j]).abs() <= 1e-10 * shot);
            for (got, want) in out.fluctuation_variance.iter().zip(&variances) {
                prop_assert!((got - want[j]).abs() <= 1e-10 * want[j].abs().max(shot * 1e-3), "{setup}: {got} vs {}", want[j]);
            }
        }
    }

    #[test]
    fn detector_efficiency_commutes_with_measurement(s in admissible_state(), eta in 0.05f64..1.0, which in 0usize..4) {
        let setup = DetectionSetup::canonical(StokesSetup::ALL[which]);
        let direct = measure(&setup.clone().with_efficiency(eta).unwrap(), &s).unwrap();
        let mixed = measure(&setup, &s).unwrap().with_efficiency(eta, s.photon_number());
        for (a, b) in direct.fluctuation_variance.iter().zip(&mixed.fluctuation_variance) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
        prop_assert!((direct.mean_current - mixed.mean_current).abs() <= 1e-10 * s.photon_number());
    }

    #[test]
    fn plates_are_unitary_on_coherent_light(a in 0.1f64..50.0, b in 0.1f64..50.0, theta in 0.0f64..TAU, half in any::<bool>(), angle in 0.0..PI) {
        let s = combine_on_pbs(&make_coherent(a, &grid()).unwrap(), &make_coherent(b, &grid()).unwrap(), theta).unwrap();
        let plate = if half { WavePlate::half(angle) } else { WavePlate::quarter(angle) };
        let out = apply_element(&s, &plate.element()).unwrap();
        assert_relative_eq!(out.photon_number(), s.photon_number(), max_relative = 1e-12);
        for c in out.covariances() {
            assert_matrix_close(c, &Matrix4::identity(), 1e-12);
        }
    }

    #[test]
    fn s2_setup_on_coherent_light_is_the_shot_noise_reference(power in 1.0f64..1e8) {
        let beam = make_coherent(power.sqrt(), &grid()).unwrap();
        let s = combine_on_pbs(&beam, &make_coherent(1e-9, &grid()).unwrap(), 0.0).unwrap();
        let out = measure(&DetectionSetup::canonical(StokesSetup::S2), &s).unwrap();
        let reference = calibrate_shot_noise(s.photon_number()).unwrap().reference;
        for v in out.fluctuation_variance {
            assert_relative_eq!(v, reference, max_relative = 1e-12);
        }
    }
}
