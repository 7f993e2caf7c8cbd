use num_complex::Complex64;
use proptest::prelude::*;

use raman_core::coherence::DensityMatrix;
use raman_core::medium::SyntheticCoefficients;
use raman_core::plates::{Axis, Material, PlateStack};
use raman_core::propagation::{
    flow_direction, pair_currents, propagate_field, uniform_coherence, FlowSchedule, PropagationConfig,
};
use raman_core::spectrum::{FieldState, ModeLadder};

fn ladder() -> ModeLadder {
    ModeLadder::from_wavelength(210.0, 124.7451, -1, 3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn photons_conserved_for_any_input(
        mags in prop::collection::vec(0.0f64..1e7, 5),
        phases in prop::collection::vec(-3.2f64..3.2, 5),
        coh in 0.01f64..0.5,
        coh_phase in -3.2f64..3.2,
    ) {
        let l = ladder();
        let m = SyntheticCoefficients::default().medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5).unwrap();
        let amps = mags.iter().zip(&phases).map(|(a, p)| Complex64::from_polar(*a, *p)).collect();
        let fs = FieldState::new(l, vec![0.0], amps).unwrap();
        prop_assume!(fs.total_photons() > 0.0);
        let cs = uniform_coherence(&fs, DensityMatrix::pure_with_coherence(coh, coh_phase).unwrap());
        let r = propagate_field(&fs, &cs, &m, &PropagationConfig::new(2e-4, 200), &FlowSchedule::default()).unwrap();
        prop_assert!(r.ledger_error() < 1e-9);
    }

    #[test]
    fn common_phase_leaves_flow_unchanged(
        phases in prop::collection::vec(-3.2f64..3.2, 5),
        shift in -3.2f64..3.2,
        coh_phase in -3.2f64..3.2,
    ) {
        let l = ladder();
        let m = SyntheticCoefficients::default().medium_for(&l, 2.6e24, 0.0, [0.0; 3], 0.5).unwrap();
        let c = m.for_ladder(&l).unwrap();
        let rho = DensityMatrix::pure_with_coherence(0.3, coh_phase).unwrap();
        let field = |s: f64| -> Vec<Complex64> { phases.iter().map(|p| Complex64::from_polar(1e7, p + s)).collect() };
        let a = pair_currents(&field(0.0), &c, &rho, m.density);
        let b = pair_currents(&field(shift), &c, &rho, m.density);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-30));
        }
        let shifted: Vec<f64> = phases.iter().map(|p| p + shift).collect();
        prop_assert_eq!(flow_direction(&phases, &c.d, rho.rho01), flow_direction(&shifted, &c.d, rho.rho01));
    }

    #[test]
    fn plate_phase_is_additive_in_thickness(a in 1e-6f64..60e-6, b in 1e-6f64..60e-6, nm in 120.0f64..700.0) {
        let mat = Material::mgf2();
        let disp = mat.axis(Axis::Ordinary);
        let lam = nm * 1e-9;
        let sum = disp.phase(lam, a).unwrap() + disp.phase(lam, b).unwrap();
        let whole = disp.phase(lam, a + b).unwrap();
        prop_assert!((sum - whole).abs() < 1e-9 * whole.abs());
    }

    #[test]
    fn stack_csv_round_trips(th in prop::collection::vec(1e-6f64..1e-4, 1..6)) {
        let n = th.len();
        let pos: Vec<f64> = (0..n).map(|k| 0.01 + 0.02 * k as f64).collect();
        let base = PlateStack::new(
            (0..n).map(|k| raman_core::plates::Plate {
                position: pos[k],
                thickness: th[k],
                material: "MgF2".into(),
                axis: Axis::Ordinary,
            }).collect(),
        ).unwrap();
        let back = PlateStack::from_csv(&base.to_csv()).unwrap();
        prop_assert_eq!(back, base);
    }
}
