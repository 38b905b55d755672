use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::basis::{build_dipole_matrix, build_h0, BasisState, MolecularParams, PhaseConvention};

fn system(params: &MolecularParams) -> (RotorBasis, ControlledHamiltonian) {
    let basis = RotorBasis::new(params).unwrap();
    let ham =
        ControlledHamiltonian::new(build_h0(&basis, params), build_dipole_matrix(&basis, params), basis.n_ground())
            .unwrap();
    (basis, ham)
}

fn random_ground_state(rng: &mut impl Rng, basis: &RotorBasis, weight: f64) -> StateVector {
    let mut v = DVector::from_element(basis.len(), C64::new(0.0, 0.0));
    for i in 0..basis.n_ground() {
        v[i] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let n = v.norm();
    StateVector::new(v / C64::new(n, 0.0), weight)
}

fn random_field(rng: &mut impl Rng, m: usize, dt: f64, amp: f64) -> ControlField {
    let s = (0..m).map(|_| C64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp))).collect();
    ControlField::new(dt, s).unwrap()
}

#[test]
fn whole_basis_target_is_identity() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let t = build_target_operator(&TargetSpec { j_cut_g: Some(1), j_cut_e: Some(1) }, &basis).unwrap();
    assert_eq!(t.matrix(), &DMatrix::identity(basis.len(), basis.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = vec![random_ground_state(&mut rng, &basis, 1.0)];
    let f = random_field(&mut rng, 20, 0.1, 1.0);
    assert_abs_diff_eq!(objective_value(&ham, &s, &f, &t).unwrap(), 1.0, epsilon = 1e-12);
}

#[test]
fn default_cut_excludes_top_levels() {
    let p = MolecularParams::default();
    let basis = RotorBasis::new(&p).unwrap();
    let t = build_target_operator(&TargetSpec::default(), &basis).unwrap();
    let d = t.diagonal().unwrap();
    for (s, &w) in basis.states().iter().zip(d) {
        assert_eq!(w == 0.0, s.j == 11, "{s}");
    }
    validate_target(&t).unwrap();
}

#[test]
fn empty_target_is_an_error() {
    let p = MolecularParams::default().with_j_max(1);
    let basis = RotorBasis::new(&p).unwrap();
    let spec = TargetSpec { j_cut_g: Some(-1), j_cut_e: Some(0) };
    assert!(matches!(build_target_operator(&spec, &basis), Err(Error::EmptyTarget)));
}

#[test]
fn single_state_target_zero_field() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let mut allowed = vec![false; basis.len()];
    allowed[2] = true;
    let t = TargetOperator::projector(&allowed).unwrap();
    let s = vec![StateVector::basis(basis.len(), 2)];
    let f = ControlField::zeros(10, 0.1).unwrap();
    assert_abs_diff_eq!(objective_value(&ham, &s, &f, &t).unwrap(), 1.0, epsilon = 1e-14);
}

#[test]
fn half_in_half_out_gives_one_half() {
    let p = MolecularParams::default().with_j_max(2);
    let (basis, ham) = system(&p);
    let t = build_target_operator(&TargetSpec::default(), &basis).unwrap();
    let mut v = DVector::from_element(basis.len(), C64::new(0.0, 0.0));
    v[0] = C64::new(0.5f64.sqrt(), 0.0);
    v[basis.index_of(&BasisState::ground(2, 1)).unwrap()] = C64::new(0.0, 0.5f64.sqrt());
    let f = ControlField::zeros(10, 0.1).unwrap();
    let j = objective_value(&ham, &[StateVector::new(v, 1.0)], &f, &t).unwrap();
    assert_abs_diff_eq!(j, 0.5, epsilon = 1e-15);
}

#[test]
fn weights_must_sum_to_one() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let t = TargetOperator::identity(basis.len());
    let s = vec![StateVector::basis(basis.len(), 0), StateVector::basis(basis.len(), 1)];
    let f = ControlField::zeros(3, 0.1).unwrap();
    assert!(matches!(objective_value(&ham, &s, &f, &t), Err(Error::InvalidWeights(_))));
}

#[test]
fn costate_boundary_cases() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let psi0 = random_ground_state(&mut rng, &basis, 1.0);
    let f = random_field(&mut rng, 25, 0.1, 1.0);
    let fwd = crate::propagation::propagate_forward(&ham, &psi0, &f, TrajectoryStorage::Full).unwrap();
    let finals = vec![fwd.final_state()];

    let id = TargetOperator::identity(basis.len());
    let chi = backward_costates(&ham, &finals, &id, &f, TrajectoryStorage::Full).unwrap();
    for k in 0..=f.len() {
        assert!((chi[0].state(k) - fwd.state(k)).camax() < 1e-10);
    }

    let zero = TargetOperator::from_matrix(DMatrix::zeros(basis.len(), basis.len())).unwrap();
    let chi = backward_costates(&ham, &finals, &zero, &f, TrajectoryStorage::Full).unwrap();
    assert_eq!(chi[0].state(0).camax(), 0.0);

    let proj = build_target_operator(&TargetSpec { j_cut_g: Some(0), j_cut_e: Some(1) }, &basis).unwrap();
    let chi = backward_costates(&ham, &finals, &proj, &f, TrajectoryStorage::Full).unwrap();
    let contrib = proj.expectation(&finals[0].amplitudes);
    assert_abs_diff_eq!(chi[0].final_state().norm().powi(2), contrib, epsilon = 1e-12);
}

#[test]
fn field_update_scaling() {
    let eps = C64::new(0.3, -0.2);
    assert_eq!(field_update(eps, C64::new(0.0, 0.0), 1.0, 0.1).unwrap(), eps);
    let g = C64::new(0.7, 0.4);
    let d1 = field_update(eps, g, 2.0, 0.1).unwrap() - eps;
    let d2 = field_update(eps, g, 4.0, 0.1).unwrap() - eps;
    assert_abs_diff_eq!((d1 - d2 * 2.0).norm(), 0.0, epsilon = 1e-15);
    assert!(matches!(field_update(eps, g, 0.0, 0.1), Err(Error::NonPositiveAlpha(_))));
    assert!(matches!(field_update(eps, g, -1.0, 0.1), Err(Error::NonPositiveAlpha(_))));
}

#[test]
fn gradient_matches_finite_differences() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let t = build_target_operator(&TargetSpec { j_cut_g: Some(0), j_cut_e: Some(1) }, &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states: Vec<StateVector> = (0..2).map(|_| random_ground_state(&mut rng, &basis, 0.5)).collect();
    let f = random_field(&mut rng, 30, 0.2, 1.5);
    let g = functional_gradient(&ham, &states, &f, &t).unwrap();
    let h = 1e-5;
    for k in [0, 7, 15, 29] {
        for (dir, get) in [(C64::new(h, 0.0), g[k].re), (C64::new(0.0, h), g[k].im)] {
            let mut fp = f.clone();
            fp.samples_mut()[k] += dir;
            let mut fm = f.clone();
            fm.samples_mut()[k] -= dir;
            let fd = (objective_value(&ham, &states, &fp, &t).unwrap() - objective_value(&ham, &states, &fm, &t).unwrap())
                / (2.0 * h);
            assert!((fd - get).abs() <= 1e-6 * get.abs().max(1e-3), "k={k}: fd {fd} vs {get}");
        }
    }
}

#[test]
fn guess_at_target_returns_immediately() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let t = TargetOperator::identity(basis.len());
    let guess = ControlField::constant(10, 0.1, C64::new(0.2, 0.0)).unwrap();
    let cfg = KrotovConfig::new(1.0, 50, 0.99, guess.clone());
    let (field, run) = optimize(&ham, &[StateVector::basis(basis.len(), 0)], &t, &cfg).unwrap();
    assert_eq!(run.iterations(), 0);
    assert_eq!(run.stop_reason, StopReason::TargetReached);
    assert_eq!(field, guess);
}

#[test]
fn zero_costates_stagnate() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    // initial state outside the target and a zero field: χ(T) = 0
    let mut allowed = vec![true; basis.len()];
    allowed[0] = false;
    let t = TargetOperator::projector(&allowed).unwrap();
    let guess = ControlField::zeros(10, 0.1).unwrap();
    let cfg = KrotovConfig::new(1.0, 50, 0.99, guess.clone());
    let (field, run) = optimize(&ham, &[StateVector::basis(basis.len(), 0)], &t, &cfg).unwrap();
    assert_eq!(run.stop_reason, StopReason::Stagnation);
    assert_eq!(run.iterations(), STAGNATION_WINDOW);
    assert_eq!(field, guess);
}

/// J = 0 ground level coupled to the J = 1 excited levels only: the first
/// update from a weak guess must raise the excited population.
#[test]
fn two_level_first_iteration_increases_fitness() {
    let p = MolecularParams { j_max_g: 0, j_max_e: 1, ..MolecularParams::default() };
    let (basis, ham) = system(&p);
    let allowed: Vec<bool> = basis.states().iter().map(|s| !s.is_ground()).collect();
    let t = TargetOperator::projector(&allowed).unwrap();
    let guess = ControlField::constant(40, 0.1, C64::new(0.01, 0.0)).unwrap();
    let mut cfg = KrotovConfig::new(0.5, 1, 0.999, guess);
    cfg.cache_budget_bytes = 0;
    let (_, run) = optimize(&ham, &[StateVector::basis(basis.len(), 0)], &t, &cfg).unwrap();
    assert_eq!(run.iterations(), 1);
    assert!(run.fitness[1] > run.fitness[0] + 1e-6, "{:?}", run.fitness);
}

#[test]
fn monotonic_and_cache_independent() {
    let p = MolecularParams::default().with_j_max(2);
    let (basis, ham) = system(&p);
    let t = build_target_operator(&TargetSpec::default(), &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let states: Vec<StateVector> = (0..2).map(|_| random_ground_state(&mut rng, &basis, 0.5)).collect();
    let guess = ControlField::constant(100, 0.1, C64::new(0.3, 0.0)).unwrap();
    let mut cfg = KrotovConfig::new(2.0, 15, 0.9999, guess);
    let (f1, r1) = optimize(&ham, &states, &t, &cfg).unwrap();
    for w in r1.fitness.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "{:?}", r1.fitness);
    }
    assert!(r1.final_fitness() > r1.fitness[0]);
    cfg.cache_budget_bytes = 0;
    let (f2, r2) = optimize(&ham, &states, &t, &cfg).unwrap();
    assert_eq!(r1.fitness, r2.fitness);
    assert_eq!(f1, f2);
}

#[test]
fn global_phase_is_irrelevant() {
    let p = MolecularParams::default().with_j_max(2);
    let (basis, ham) = system(&p);
    let t = build_target_operator(&TargetSpec::default(), &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let states: Vec<StateVector> = (0..2).map(|_| random_ground_state(&mut rng, &basis, 0.5)).collect();
    let rotated: Vec<StateVector> = states
        .iter()
        .enumerate()
        .map(|(i, s)| StateVector::new(&s.amplitudes * C64::from_polar(1.0, 0.7 + i as f64), s.weight))
        .collect();
    let guess = ControlField::constant(60, 0.1, C64::new(0.3, 0.1)).unwrap();
    let cfg = KrotovConfig::new(2.0, 5, 0.9999, guess);
    let (f1, r1) = optimize(&ham, &states, &t, &cfg).unwrap();
    let (f2, r2) = optimize(&ham, &rotated, &t, &cfg).unwrap();
    for (a, b) in r1.fitness.iter().zip(&r2.fitness) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    for (a, b) in f1.samples().iter().zip(f2.samples()) {
        assert!((a - b).norm() < 1e-10);
    }
}

/// Flipping the sign of every dipole element is a gauge change on the
/// excited surface; ground-supported ensembles see identical histories.
#[test]
fn phase_convention_does_not_change_the_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let base = MolecularParams::default().with_j_max(2);
    let alt = MolecularParams { phase: PhaseConvention::GroundReferenced, ..base.clone() };
    let (basis, ham_a) = system(&base);
    let (_, ham_b) = system(&alt);
    let t = build_target_operator(&TargetSpec::default(), &basis).unwrap();
    let states: Vec<StateVector> = (0..2).map(|_| random_ground_state(&mut rng, &basis, 0.5)).collect();
    let cfg = KrotovConfig::new(2.0, 5, 0.9999, ControlField::constant(60, 0.1, C64::new(0.3, 0.0)).unwrap());
    let (_, ra) = optimize(&ham_a, &states, &t, &cfg).unwrap();
    let (_, rb) = optimize(&ham_b, &states, &t, &cfg).unwrap();
    for (a, b) in ra.fitness.iter().zip(&rb.fitness) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn run_csv_has_one_row_per_iteration() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let t = build_target_operator(&TargetSpec { j_cut_g: Some(0), j_cut_e: Some(1) }, &basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = vec![random_ground_state(&mut rng, &basis, 1.0)];
    let mut cfg = KrotovConfig::new(1.0, 3, 0.99999, ControlField::constant(20, 0.1, C64::new(0.2, 0.0)).unwrap());
    cfg.snapshot_every = 2;
    let (_, run) = optimize(&ham, &s, &t, &cfg).unwrap();
    assert_eq!(run.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 2]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    run.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iteration,fitness,penalty,field_norm\n"));
    assert_eq!(text.lines().count(), run.fitness.len() + 1);
}

#[test]
fn bad_config_rejected() {
    let p = MolecularParams::default().with_j_max(1);
    let (basis, ham) = system(&p);
    let t = TargetOperator::identity(basis.len());
    let s = vec![StateVector::basis(basis.len(), 0)];
    let g = ControlField::zeros(3, 0.1).unwrap();
    assert!(matches!(optimize(&ham, &s, &t, &KrotovConfig::new(0.0, 3, 0.9, g.clone())), Err(Error::NonPositiveAlpha(_))));
    assert!(optimize(&ham, &s, &t, &KrotovConfig::new(1.0, 3, 1.5, g)).is_err());
}
