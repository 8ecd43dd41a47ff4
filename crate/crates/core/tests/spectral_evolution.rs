mod common;

use common::*;
use cqdyn::evolution::{evolve, evolve_exact, step_rk4, EvolveOptions, FaultInjection};
use cqdyn::generator::build_liouvillian_matrix;
use cqdyn::models::{builtin, random_spec, two_block_metastable, SHIPPED_MODELS};
use cqdyn::operator::C64;
use cqdyn::random::rng;
use cqdyn::spectral::{
    asymptotic_projection, classify_spectrum, eigenvalues, metastable_gap, steady_states, Asymptotic, EigenClass,
    DEFAULT_TOL_ZERO,
};
use cqdyn::{DenseOperator, Error, HybridObservable, HybridState, PhaseSpacePoint, ToyModelParams};

#[test]
fn toy_liouvillian_spectrum() {
    for kappa in [0.5, 2.0] {
        let m = cqdyn::models::toy_model(&ToyModelParams { kappa, ..Default::default() }).unwrap();
        let l = build_liouvillian_matrix(&m.spec).unwrap();
        assert_eq!(l.nrows(), 8);
        let rep = classify_spectrum(&l, DEFAULT_TOL_ZERO).unwrap();
        assert_eq!(rep.zero_multiplicity, 1);
        let decaying: Vec<_> = rep.eigenvalues.iter().filter(|z| z.norm() > 1e-10).collect();
        assert_eq!(decaying.len(), 7);
        assert!(decaying.iter().all(|z| (**z - C64::new(-kappa, 0.0)).norm() < 1e-10));
        assert_eq!(rep.count(EigenClass::DecayingReal), 7);

        let steady = steady_states(&l, m.spec.grid(), 2, DEFAULT_TOL_ZERO).unwrap();
        assert_eq!(steady.states.len(), 1);
        let s = steady.states[0].as_ref().unwrap();
        let origin = m.spec.grid().locate(&PhaseSpacePoint::origin(3)).unwrap();
        for c in 0..m.spec.grid().len() {
            let want = if c == origin { DenseOperator::identity(2).scale_real(0.5) } else { DenseOperator::zeros(2) };
            assert!((s.block(c) - &want).max_abs() < 1e-10);
        }
    }
}

#[test]
fn toy_asymptotic_state_carries_no_angular_momentum() {
    let m = builtin("toy").unwrap();
    let l = build_liouvillian_matrix(&m.spec).unwrap();
    let Asymptotic::Limit(s) = asymptotic_projection(&l, &m.initial, DEFAULT_TOL_ZERO).unwrap() else {
        panic!("toy model has no rotating modes");
    };
    for a in 0..3 {
        assert!(s.expectation(&HybridObservable::angular_momentum(a, 1.0)).norm() < 1e-10);
    }
    assert!(s.check_normalization() < 1e-10);
}

#[test]
fn pure_hamiltonian_pattern() {
    let m = builtin("pure_hamiltonian").unwrap();
    let l = build_liouvillian_matrix(&m.spec).unwrap();
    let rep = classify_spectrum(&l, DEFAULT_TOL_ZERO).unwrap();
    assert_eq!(rep.count(EigenClass::Stationary), 2);
    assert_eq!(rep.count(EigenClass::Rotating), 2);
    // H = σz splits the levels by 2
    let mut im: Vec<f64> = rep.eigenvalues.iter().map(|z| z.im).collect();
    im.sort_by(f64::total_cmp);
    for (a, b) in im.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(asymptotic_projection(&l, &m.initial, DEFAULT_TOL_ZERO).unwrap(), Asymptotic::Orbit { .. }));
}

#[test]
fn shipped_spectra_are_contractive() {
    for name in SHIPPED_MODELS {
        let m = builtin(name).unwrap();
        let l = build_liouvillian_matrix(&m.spec).unwrap();
        let eig = eigenvalues(&l).unwrap();
        let scale = eig.iter().map(|z| z.norm()).fold(1.0, f64::max);
        assert!(eig.iter().all(|z| z.re <= 1e-9 * scale), "{name}");
        assert!(classify_spectrum(&l, DEFAULT_TOL_ZERO).is_ok(), "{name}");
    }
}

#[test]
fn zero_generator_is_all_stationary() {
    let m = builtin("zero").unwrap();
    let l = build_liouvillian_matrix(&m.spec).unwrap();
    let rep = classify_spectrum(&l, DEFAULT_TOL_ZERO).unwrap();
    assert_eq!(rep.zero_multiplicity, 4);
    assert_eq!(rep.steady_basis.ncols(), 4);
    assert!(rep.metastable.is_none());
}

#[test]
fn depolarizing_relaxes_to_maximally_mixed() {
    let m = builtin("depolarizing").unwrap();
    let l = build_liouvillian_matrix(&m.spec).unwrap();
    let rep = classify_spectrum(&l, DEFAULT_TOL_ZERO).unwrap();
    assert_eq!(rep.zero_multiplicity, 1);
    let Asymptotic::Limit(s) = asymptotic_projection(&l, &m.initial, DEFAULT_TOL_ZERO).unwrap() else { panic!() };
    assert!((s.block(0) - &DenseOperator::identity(2).scale_real(0.5)).max_abs() < 1e-12);
}

#[test]
fn metastable_gap_of_two_block_model() {
    let m = two_block_metastable(1.0, 1e-3, 0.9e-3).unwrap();
    let l = build_liouvillian_matrix(&m.spec).unwrap();
    let rep = classify_spectrum(&l, DEFAULT_TOL_ZERO).unwrap();
    let gap = rep.metastable.expect("gap");
    assert!(gap.ratio >= 990.0);
    assert!((gap.timescale - 1000.0).abs() <= 10.0);
    assert!(gap.relaxation_onset <= 1.01);
    // a manufactured spectrum
    let eig = [0.0, -1e-3, -1e-3, -0.5, -1.0].map(|x| C64::new(x, 0.0));
    let g = metastable_gap(&eig, 100.0, 1e-9).unwrap();
    assert_eq!(g.m, 3);
    assert!((g.ratio - 500.0).abs() < 1e-9);
    assert!(metastable_gap(&eig, 1000.0, 1e-9).is_none());
}

#[test]
fn rk4_matches_matrix_exponential_on_shipped_models() {
    for name in SHIPPED_MODELS {
        let m = builtin(name).unwrap();
        if m.spec.state_len() > 512 {
            continue;
        }
        let l = build_liouvillian_matrix(&m.spec).unwrap();
        let exact = evolve_exact(&l, &m.initial, 1.0).unwrap();
        let traj = evolve(&m.spec, &m.initial, &EvolveOptions::new(1.0, 1e-3)).unwrap();
        assert!(traj.final_state.as_ref().unwrap().sup_distance(&exact) <= 1e-6, "{name}");
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    let mut r = rng(12);
    let (spec, rho) = random_spec(&mut r, 4).unwrap();
    let l = build_liouvillian_matrix(&spec).unwrap();
    let exact = evolve_exact(&l, &rho, 1.0).unwrap();
    let err = |n: usize| {
        let mut s = rho.clone();
        for _ in 0..n {
            s = step_rk4(&spec, &s, 1.0 / n as f64).unwrap();
        }
        s.sup_distance(&exact)
    };
    let (e1, e2) = (err(20), err(40));
    let order = (e1 / e2).log2();
    assert!((3.7..4.4).contains(&order), "order {order}");
}

#[test]
fn random_specs_keep_trace_over_long_runs() {
    let mut r = rng(77);
    for _ in 0..5 {
        let cells = rand::Rng::gen_range(&mut r, 1..=32);
        let (spec, rho) = random_spec(&mut r, cells).unwrap();
        let opts = EvolveOptions::new(10.0, 1e-3);
        let traj = evolve(&spec, &rho, &opts).unwrap();
        assert!(traj.trace_dev.iter().all(|d| *d <= 1e-8));
        assert!((total_trace(traj.final_state.as_ref().unwrap()) - C64::new(1.0, 0.0)).norm() <= 1e-8);
    }
}

#[test]
fn monitors_abort_on_injected_fault() {
    let m = builtin("depolarizing").unwrap();
    let mut opts = EvolveOptions::new(1.0, 1e-2);
    opts.fault = Some(FaultInjection { step: 10, magnitude: 1e-3 });
    match evolve(&m.spec, &m.initial, &opts) {
        Err(Error::MonitorAbort { time, .. }) => assert!((time - 0.1).abs() < 0.02),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn trajectory_series_and_csv() {
    let m = builtin("depolarizing").unwrap();
    let mut opts = EvolveOptions::new(1.0, 1e-2);
    for o in &m.observables {
        opts = opts.observe(o.clone());
    }
    let traj = evolve(&m.spec, &m.initial, &opts).unwrap();
    // ⟨σz⟩ = e^{−γt} for depolarization at γ = 1
    let sz = traj.series("sigma_z").unwrap();
    for (t, v) in traj.times.iter().zip(sz) {
        assert!((v - (-t).exp()).abs() < 1e-9);
    }
    let csv = traj.to_csv();
    assert!(!csv.contains('\r'));
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,"));
    assert_eq!(csv.lines().count(), traj.times.len() + 1);
    assert!(matches!(EvolveOptions::new(1.0, 0.0).steps(), Err(Error::Config(msg)) if msg.contains("integration.dt")));
}
