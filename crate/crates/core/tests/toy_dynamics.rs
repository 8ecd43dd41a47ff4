mod common;

use cqdyn::audit::{
    consistency_suite, noether_audit, so3_family, symmetry_test_states, AuditProbe, CheckStatus, ConsistencyOptions,
};
use cqdyn::evolution::{evolve_atomic_toy, step_rk4};
use cqdyn::generator::check_diffusion_decoherence;
use cqdyn::models::{spec_backreaction, toy_model};
use cqdyn::operator::{eig_hermitian, pauli, C64};
use cqdyn::state::Atom;
use cqdyn::toy::{
    nonconservation_demo, toy_analytic_state, toy_generator, AngularMomentumRecord, FinalState, WeightedPoint,
};
use cqdyn::{
    CMatrix, DenseOperator, HybridObservable, HybridState, HybridStateAtomic, PhaseSpacePoint, ToyModelParams,
};

/// `J_a(t)` from the closed-form state: the initial atom keeps weight
/// `e^{−κt}`, the atom at the origin carries no orbital or spin charge.
fn oracle_j(params: &ToyModelParams, t: f64, axis: usize) -> f64 {
    let [q, p] = [params.q0, params.p0];
    let l = [q[1] * p[2] - q[2] * p[1], q[2] * p[0] - q[0] * p[2], q[0] * p[1] - q[1] * p[0]];
    let s = params.rho_i.matrix() * pauli()[axis].matrix();
    (l[axis] + 0.5 * params.hbar * s.trace().re) * (-params.kappa * t).exp()
}

#[test]
fn atomic_angular_momentum_matches_closed_form() {
    let params = ToyModelParams::default();
    let init = params.initial_state();
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let t = 10.0 * k as f64 / 999.0;
        let s = evolve_atomic_toy(&params, &init, t).unwrap();
        for a in 0..3 {
            let j = s.expectation_real(&HybridObservable::angular_momentum(a, 1.0)).unwrap();
            worst = worst.max((j - oracle_j(&params, t, a)).abs());
        }
        let jz = s.expectation(&HybridObservable::angular_momentum(2, 1.0)).re;
        assert!((jz - 1.5 * (-0.5 * t).exp()).abs() <= 1e-12);
    }
    assert!(worst <= 1e-12);
}

#[test]
fn separate_orbital_and_spin_parts_with_hbar() {
    let params = ToyModelParams { hbar: 0.25, kappa: 1.3, ..Default::default() };
    for t in [0.0, 0.4, 3.0] {
        let rec =
            AngularMomentumRecord::measure(t, &evolve_atomic_toy(&params, &params.initial_state(), t).unwrap(), 0.25);
        let decay = (-1.3 * t).exp();
        assert!((rec.l_orbital[2] - decay).abs() < 1e-14);
        assert!((rec.s_spin[2] - 0.125 * decay).abs() < 1e-14);
    }
}

#[test]
fn grid_rk4_tracks_closed_form() {
    let params = ToyModelParams::default();
    let model = toy_model(&params).unwrap();
    let mut state = model.initial.clone();
    let obs = HybridObservable::angular_momentum(2, 1.0);
    let dt = 1e-3;
    let mut worst = 0.0f64;
    for k in 1..=10_000 {
        state = step_rk4(&model.spec, &state, dt).unwrap();
        if k % 100 == 0 {
            let t = k as f64 * dt;
            worst = worst.max((state.expectation(&obs).re - oracle_j(&params, t, 2)).abs());
        }
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn analytic_state_agrees_with_propagator() {
    let params = ToyModelParams { kappa: 0.8, ..Default::default() };
    for t in [0.0, 0.1, 1.0, 5.0] {
        let a = toy_analytic_state(&params, t).unwrap();
        let b = evolve_atomic_toy(&params, &params.initial_state(), t).unwrap();
        assert!(a.sup_distance(&b) < 1e-15);
    }
}

#[test]
fn toy_channel_is_completely_positive() {
    // Choi matrix Σ |i⟩⟨j| ⊗ Φ(|i⟩⟨j|) of the map ρᵢ ↦ block at each atom
    let params = ToyModelParams { kappa: 0.7, ..Default::default() };
    let z0 = params.z0();
    let origin = PhaseSpacePoint::origin(3);
    for t in [0.0, 0.3, 1.0, 4.0] {
        for at in [&z0, &origin] {
            let mut choi = CMatrix::zeros(4, 4);
            for i in 0..2 {
                for j in 0..2 {
                    let mut e = CMatrix::zeros(2, 2);
                    e[(i, j)] = C64::new(1.0, 0.0);
                    let input = HybridStateAtomic::delta(z0.clone(), DenseOperator::new(e).unwrap());
                    let out = evolve_atomic_toy(&params, &input, t).unwrap().block_at(at);
                    for a in 0..2 {
                        for b in 0..2 {
                            choi[(2 * i + a, 2 * j + b)] = out.matrix()[(a, b)];
                        }
                    }
                }
            }
            let (eig, _) = eig_hermitian(&DenseOperator::new(choi).unwrap()).unwrap();
            assert!(eig[0] >= -1e-10, "t {t}: {eig:?}");
        }
    }
}

#[test]
fn purity_follows_closed_form_and_decreases() {
    let params = ToyModelParams::default();
    let mut last = f64::INFINITY;
    for k in 0..200 {
        let t = 0.05 * k as f64;
        let s = evolve_atomic_toy(&params, &params.initial_state(), t).unwrap();
        let p = s.purity();
        let a = (-params.kappa * t).exp();
        assert!((p - 0.5 * (1.0 + a * a)).abs() < 1e-14);
        if k > 0 {
            assert!(p < last);
        }
        last = p;
    }
}

#[test]
fn zero_charge_stays_zero_and_small_kappa_nearly_conserves() {
    let centered = ToyModelParams {
        q0: [0.0; 3],
        p0: [0.0; 3],
        rho_i: DenseOperator::identity(2).scale_real(0.5),
        ..Default::default()
    };
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
    let r = nonconservation_demo(&centered, &grid, 0).unwrap();
    assert!(r.j_conserved);
    assert!(r.j_drift == 0.0);

    let weak = ToyModelParams { kappa: 1e-8, ..Default::default() };
    let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
    let r = nonconservation_demo(&weak, &grid, 0).unwrap();
    // drift is κ·t·|J(0)| to first order
    assert!(r.j_drift <= 1e-8 * 1.5 * (1.0 + 1e-6));
    assert!(r.j_drift > 0.0);
}

#[test]
fn noether_audit_separates_symmetry_from_conservation() {
    let params = ToyModelParams::default();
    let gen = toy_generator(&params).unwrap();
    let model = toy_model(&params).unwrap();
    let probe = AuditProbe {
        initial: model.initial.clone(),
        horizon: 2.0,
        dt: 1e-3,
        samples: 10,
        symmetry_states: symmetry_test_states(7, &params.initial_state()),
    };
    let family = so3_family(7, 30);
    for a in 0..3 {
        let v = noether_audit(&model.spec, &gen, &family, &HybridObservable::angular_momentum(a, 1.0), &probe).unwrap();
        assert!(v.symmetric);
        assert!(!v.conserved);
        assert!(v.symmetry_residual <= 1e-11);
        assert!((v.conservation_residual - params.kappa).abs() <= 1e-9);
        assert!(v.internally_consistent, "{}", v.rate_disagreement);
        for s in &v.rate_samples {
            let j = oracle_j(&params, s.t, a);
            assert!((s.pairing + params.kappa * j).abs() < 1e-6);
        }
    }
    // rescaling the observable leaves the verdict unchanged
    let obs = HybridObservable::angular_momentum(2, 1.0);
    let v1 = noether_audit(&model.spec, &gen, &family, &obs, &probe).unwrap();
    let v2 = noether_audit(&model.spec, &gen, &family, &obs.scaled(37.0), &probe).unwrap();
    assert_eq!((v1.symmetric, v1.conserved), (v2.symmetric, v2.conserved));
    assert!((v1.conservation_residual - v2.conservation_residual).abs() < 1e-12);
}

#[test]
fn off_origin_final_state_breaks_the_symmetry() {
    let params = ToyModelParams {
        final_state: FinalState::Atoms { points: vec![WeightedPoint { q: [0.5, 0.0, 0.0], p: [0.0; 3], weight: 1.0 }] },
        ..Default::default()
    };
    let r = nonconservation_demo(&params, &[0.0, 1.0], 3).unwrap();
    assert!(!r.eom_rotationally_invariant);
    assert!(r.symmetry_residual > 1e-3);
}

#[test]
fn consistency_suite_on_toy() {
    let params = ToyModelParams::default();
    let model = toy_model(&params).unwrap();
    let opts = ConsistencyOptions { conservation_laws: model.observables.clone(), samples: 50, ..Default::default() };
    let report = consistency_suite(&model.spec, &model.initial, 5.0, &opts).unwrap();
    for req in ["I", "II", "III", "IV"] {
        assert_eq!(report.entry(req).unwrap().status, CheckStatus::Pass, "{req}");
    }
    assert_eq!(report.entry("V(a)").unwrap().status, CheckStatus::Fail);
    assert_eq!(report.entry("VI").unwrap().status, CheckStatus::Pass);
    for w in report.purity.windows(2) {
        assert!(w[1].1 < w[0].1);
    }
    for (t, p) in &report.purity {
        assert!((p - 0.5 * (1.0 + (-2.0 * params.kappa * t).exp())).abs() < 1e-9);
    }
}

#[test]
fn toy_backreaction_passes_diffusion_decoherence() {
    let params = ToyModelParams::default();
    let model = toy_model(&params).unwrap();
    // relaxed state sits at the origin, where every jump has zero displacement
    let l = cqdyn::generator::build_liouvillian_matrix(&model.spec).unwrap();
    let late = match cqdyn::spectral::asymptotic_projection(&l, &model.initial, 1e-9).unwrap() {
        cqdyn::spectral::Asymptotic::Limit(s) => s,
        other => panic!("{other:?}"),
    };
    let summary = spec_backreaction(&model.spec, &late).unwrap();
    assert!(summary.d1.iter().all(|x| x.abs() < 1e-12));
    assert!(summary.d2.iter().flatten().all(|x| x.abs() < 1e-12));
    assert!((summary.d0 - 0.75 * params.kappa).abs() < 1e-12);
    let v = check_diffusion_decoherence(&summary);
    assert!(v.pass && v.componentwise_pass && v.forms_agree);

    // from z₀ the single jump Δ = −z₀ gives d0 = 3κ/4, d1 = 3κΔ/4,
    // d2 = κΔΔᵀ/2, so the margin is (3/16)κ²ΔΔᵀ
    let summary = spec_backreaction(&model.spec, &model.initial).unwrap();
    let dz = params.z0().coords().iter().map(|x| -x).collect::<Vec<_>>();
    let k = params.kappa;
    assert!((summary.d0 - 0.75 * k).abs() < 1e-12);
    for i in 0..6 {
        assert!((summary.d1[i] - 0.75 * k * dz[i]).abs() < 1e-12);
        for j in 0..6 {
            assert!((summary.d2[i][j] - 0.5 * k * dz[i] * dz[j]).abs() < 1e-12);
        }
    }
    let v = check_diffusion_decoherence(&summary);
    assert!(v.pass && v.forms_agree);
}

#[test]
fn atomic_generator_matches_grid_generator() {
    use cqdyn::AtomicGenerator;
    let params = ToyModelParams { kappa: 0.9, ..Default::default() };
    let gen = toy_generator(&params).unwrap();
    let spec = gen.grid_spec().unwrap();
    let mut r = cqdyn::random::rng(5);
    for _ in 0..10 {
        let blocks: Vec<Atom> = spec
            .grid()
            .points()
            .iter()
            .map(|z| Atom { z: z.clone(), block: cqdyn::random::random_density(&mut r, 2).scale_real(0.5) })
            .collect();
        let atomic = HybridStateAtomic::new(blocks).unwrap();
        let grid_state = atomic.to_grid(spec.grid()).unwrap();
        let a = gen.apply_atomic(&atomic).unwrap();
        let g = spec.apply(&grid_state).unwrap();
        for (c, z) in spec.grid().points().iter().enumerate() {
            assert!((&a.block_at(z) - g.block(c)).max_abs() < 1e-14);
        }
    }
}
