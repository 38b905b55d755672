//! Randomized invariants over the public API.

use proptest::prelude::*;

use rotcool::basis::{build_dipole_matrix, build_h0, thermal_populations, MolecularParams, RotorBasis};
use rotcool::dissipation::{branching_matrix, decay_rates, steady_state, CycleModel};
use rotcool::operator::unitarity_deviation;
use rotcool::propagation::{ControlField, ControlledHamiltonian};
use rotcool::typicality::{build_ensemble, ensemble_average};
use rotcool::wigner::wigner3j;
use rotcool::C64;

fn model(j_max: i32) -> CycleModel {
    let p = MolecularParams::default().with_j_max(j_max);
    let basis = RotorBasis::new(&p).unwrap();
    let ham = ControlledHamiltonian::new(build_h0(&basis, &p), build_dipole_matrix(&basis, &p), basis.n_ground()).unwrap();
    CycleModel::new(basis, ham, &p).unwrap()
}

fn field_strategy() -> impl Strategy<Value = ControlField> {
    (prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..30), 0.01f64..0.4)
        .prop_map(|(s, dt)| ControlField::new(dt, s.into_iter().map(|(a, b)| C64::new(a, b)).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_propagators_are_unitary(eps_re in -5.0f64..5.0, eps_im in -5.0f64..5.0, dt in 1e-3f64..2.0) {
        let m = model(2);
        let u = m.hamiltonian.step_propagator(C64::new(eps_re, eps_im), dt).unwrap();
        prop_assert!(unitarity_deviation(u.matrix()) <= 1e-10);
    }

    #[test]
    fn cycle_maps_are_stochastic_with_exact_steady_state(field in field_strategy()) {
        let m = model(2);
        let map = m.cycle_map(&field).unwrap();
        let (col, min) = map.stochasticity_defect();
        prop_assert!(col <= 1e-10 && min >= -1e-12);
        if field.max_abs() > 0.05 {
            let ss = steady_state(&map).unwrap();
            prop_assert!(ss.residual <= 1e-12);
            prop_assert!(ss.distribution.iter().all(|&x| x >= 0.0));
            prop_assert!((ss.distribution.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn branching_is_scale_free(mu0 in 0.01f64..100.0, gamma0 in 1.0f64..1e9) {
        let p = MolecularParams::default().with_j_max(3);
        let q = MolecularParams { mu0, gamma0, ..p.clone() };
        let basis = RotorBasis::new(&p).unwrap();
        let a = branching_matrix(&decay_rates(&basis, &p), &basis).unwrap();
        let b = branching_matrix(&decay_rates(&basis, &q), &basis).unwrap();
        prop_assert!((a.matrix() - b.matrix()).amax() <= 1e-14);
    }

    #[test]
    fn rp_members_are_normalized_and_diagonal_exact(seed in any::<u64>(), l in 1usize..6, t in 1.0f64..100.0) {
        let p = MolecularParams { temperature: t, ..MolecularParams::default().with_j_max(3) };
        let w = thermal_populations(&p).unwrap();
        let e = build_ensemble(l, &w, 46, seed).unwrap();
        for m in &e.members {
            prop_assert!((m.norm() - 1.0).abs() <= 1e-12);
        }
        let a = ensemble_average(&e);
        for (i, wi) in w.iter().enumerate() {
            prop_assert!((a[(i, i)].re - wi).abs() <= 1e-14);
        }
    }

    #[test]
    fn wigner_symmetries(j1 in 0i32..8, j2 in 0i32..8, j3 in 0i32..8, m1 in -8i32..=8, m2 in -8i32..=8) {
        let m3 = -m1 - m2;
        let v = wigner3j(j1, j2, j3, m1, m2, m3);
        let sign = if (j1 + j2 + j3) % 2 == 0 { 1.0 } else { -1.0 };
        // even permutation, odd permutation, and sign reversal of all m
        prop_assert!((v - wigner3j(j2, j3, j1, m2, m3, m1)).abs() <= 1e-14);
        prop_assert!((v - sign * wigner3j(j2, j1, j3, m2, m1, m3)).abs() <= 1e-14);
        prop_assert!((v - sign * wigner3j(j1, j2, j3, -m1, -m2, -m3)).abs() <= 1e-14);
    }
}
