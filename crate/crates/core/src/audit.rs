//! Symmetry and conservation audits.
//!
//! A symmetry is checked as covariance of the generator, `𝒰∘ℒ = ℒ∘𝒰` on a
//! finite family of atomic test states. Conservation of `A` is checked via
//! `ℒ†A = 0` and, independently, via `d⟨A⟩/dt` along a trajectory. In
//! completely positive hybrid dynamics the two can disagree.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::step_rk4;
use crate::generator::{build_liouvillian_matrix, AtomicGenerator, CouplingSpec};
use crate::operator::{eig_hermitian, CMatrix, DenseOperator, C64};
use crate::phase_space::{PhaseSpacePoint, Rotation3};
use crate::random::{normal, random_psd, random_rotation, random_unitary, rng, SeededRng};
use crate::state::{rotate_state, Atom, HybridObservable, HybridState, HybridStateAtomic, HybridStateGrid};

/// Random normalized atomic state on `R⁶` with up to `max_atoms` atoms.
pub fn random_atomic_state(r: &mut SeededRng, max_atoms: usize) -> HybridStateAtomic {
    let n = r.gen_range(1..=max_atoms.max(1));
    let mut atoms: Vec<Atom> = (0..n)
        .map(|_| {
            let z = PhaseSpacePoint { q: (0..3).map(|_| normal(r)).collect(), p: (0..3).map(|_| normal(r)).collect() };
            Atom { z, block: DenseOperator::from_matrix(random_psd(r, 2, 1.0)) }
        })
        .collect();
    let total: f64 = atoms.iter().map(|a| a.block.trace().re).sum();
    for a in &mut atoms {
        a.block = a.block.scale_real(1.0 / total);
    }
    HybridStateAtomic::new(atoms).expect("non-empty")
}

/// Ten seeded random atomic states followed by `canonical`.
pub fn symmetry_test_states(seed: u64, canonical: &HybridStateAtomic) -> Vec<HybridStateAtomic> {
    let mut r = rng(seed ^ 0x5eed_5747);
    let mut states: Vec<HybridStateAtomic> = (0..10).map(|_| random_atomic_state(&mut r, 3)).collect();
    states.push(canonical.clone());
    states
}

/// `max_ρ̂ ‖𝒰(ℒρ̂) − ℒ(𝒰ρ̂)‖` over `states`, with `𝒰 = rotate_state(R, U, ·)`.
pub fn symmetry_check(
    generator: &dyn AtomicGenerator,
    r: &Rotation3,
    u: &DenseOperator,
    states: &[HybridStateAtomic],
) -> Result<f64> {
    let rotate = |s: &HybridStateAtomic| {
        rotate_state(r, u, s).map_err(|e| match e {
            Error::Validation(m) | Error::Shape { expected: m, .. } | Error::InvalidDimension(m) => {
                Error::UnsupportedSymmetry(m)
            }
            other => other,
        })
    };
    let mut worst = 0.0f64;
    for s in states {
        let lhs = rotate(&generator.apply_atomic(s)?)?;
        let rhs = generator.apply_atomic(&rotate(s)?)?;
        worst = worst.max(lhs.sup_distance(&rhs));
    }
    Ok(worst)
}

fn pairing_norm(field: &[DenseOperator], vol: f64) -> f64 {
    field.iter().map(|a| a.hs_inner(a).re).sum::<f64>().mul_add(vol, 0.0).sqrt()
}

/// `‖ℒ†A‖ / ‖A‖` in the norm `‖A‖² = ∫ Tr[A†A] dz`.
pub fn conservation_check(spec: &CouplingSpec, obs: &HybridObservable) -> Result<f64> {
    conservation_check_field(spec, &obs.on_grid(spec.grid()))
}

pub fn conservation_check_field(spec: &CouplingSpec, field: &[DenseOperator]) -> Result<f64> {
    let vol = spec.grid().cell_volume();
    let norm = pairing_norm(field, vol);
    if norm == 0.0 {
        return Ok(0.0);
    }
    let adj = spec.apply_adjoint(field)?;
    Ok(pairing_norm(&adj, vol) / norm)
}

/// `d⟨A⟩/dt = ⟨ℒ†A, ρ̂⟩`.
pub fn rate_of_change(spec: &CouplingSpec, obs: &HybridObservable, rho: &HybridStateGrid) -> Result<f64> {
    let adj = spec.apply_adjoint(&obs.on_grid(spec.grid()))?;
    Ok(rho.pair_with(&adj).re)
}

/// Rotations `(R, U)` about a fixed axis at evenly spaced angles.
pub fn u1_family(axis: [f64; 3], count: usize) -> Result<Vec<(Rotation3, DenseOperator)>> {
    (0..count).map(|k| Rotation3::about_axis(axis, std::f64::consts::TAU * (k as f64 + 0.5) / count as f64)).collect()
}

/// Haar-random rotations with their spin-½ representatives.
pub fn so3_family(seed: u64, count: usize) -> Vec<(Rotation3, DenseOperator)> {
    let mut r = rng(seed);
    (0..count).map(|_| random_rotation(&mut r)).collect()
}

/// Trajectory probe for the rate-of-change comparison.
#[derive(Clone, Debug)]
pub struct AuditProbe {
    pub initial: HybridStateGrid,
    pub horizon: f64,
    pub dt: f64,
    pub samples: usize,
    pub symmetry_states: Vec<HybridStateAtomic>,
}

/// Finite-difference step for `d⟨A⟩/dt`.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct RateSample {
    pub t: f64,
    /// `⟨ℒ†A, ρ̂(t)⟩`.
    pub pairing: f64,
    /// Central difference of `⟨A⟩` with step [`FD_STEP`].
    pub finite_difference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditVerdict {
    pub observable: String,
    pub symmetric: bool,
    pub conserved: bool,
    pub symmetry_residual: f64,
    pub conservation_residual: f64,
    #[serde(rename = "dJdt_samples")]
    pub rate_samples: Vec<RateSample>,
    /// Largest disagreement between the two rate estimates.
    pub rate_disagreement: f64,
    /// False when the two rate estimates disagree beyond `1e-7`.
    pub internally_consistent: bool,
}

fn expectation_after(spec: &CouplingSpec, rho: &HybridStateGrid, obs: &HybridObservable, h: f64) -> Result<f64> {
    let s = crate::evolution::rk4_signed(spec, rho, h)?;
    Ok(s.expectation(obs).re)
}

/// Combines the symmetry check over `family` with the conservation check
/// on `obs`.
pub fn noether_audit(
    spec: &CouplingSpec,
    generator: &dyn AtomicGenerator,
    family: &[(Rotation3, DenseOperator)],
    obs: &HybridObservable,
    probe: &AuditProbe,
) -> Result<AuditVerdict> {
    let mut sym = 0.0f64;
    for (r, u) in family {
        sym = sym.max(symmetry_check(generator, r, u, &probe.symmetry_states)?);
    }
    let cons = conservation_check(spec, obs)?;
    let rates = rate_probe(spec, obs, &probe.initial, probe.horizon, probe.dt, probe.samples)?;
    Ok(AuditVerdict {
        observable: obs.label.clone(),
        symmetric: sym <= 1e-10,
        conserved: cons <= 1e-8 && rates.max_rate <= 1e-8 * rates.scale,
        symmetry_residual: sym,
        conservation_residual: cons,
        internally_consistent: rates.disagreement <= 1e-7,
        rate_disagreement: rates.disagreement,
        rate_samples: rates.samples,
    })
}

/// `d⟨A⟩/dt` along an RK4 trajectory, from the adjoint pairing and from a
/// central difference.
#[derive(Clone, Debug)]
pub struct RateProbe {
    pub samples: Vec<RateSample>,
    pub disagreement: f64,
    /// Largest `|d⟨A⟩/dt|` seen.
    pub max_rate: f64,
    /// Largest `|⟨A⟩|` seen, floored at 1.
    pub scale: f64,
}

pub fn rate_probe(
    spec: &CouplingSpec,
    obs: &HybridObservable,
    initial: &HybridStateGrid,
    horizon: f64,
    dt: f64,
    samples: usize,
) -> Result<RateProbe> {
    let adj = spec.apply_adjoint(&obs.on_grid(spec.grid()))?;
    let steps = crate::evolution::EvolveOptions::new(horizon, dt).steps()?;
    let every = (steps / samples.max(1)).max(1);
    let mut state = initial.clone();
    let mut out = Vec::new();
    let mut scale = 1.0f64;
    for k in 0..=steps {
        if k % every == 0 {
            let t = k as f64 * dt;
            let pairing = state.pair_with(&adj).re;
            let plus = expectation_after(spec, &state, obs, FD_STEP)?;
            let minus = expectation_after(spec, &state, obs, -FD_STEP)?;
            scale = scale.max(state.expectation(obs).re.abs());
            out.push(RateSample { t, pairing, finite_difference: (plus - minus) / (2.0 * FD_STEP) });
        }
        if k < steps {
            state = step_rk4(spec, &state, dt)?;
        }
    }
    let disagreement = out.iter().map(|s| (s.pairing - s.finite_difference).abs()).fold(0.0, f64::max);
    let max_rate = out.iter().map(|s| s.pairing.abs()).fold(0.0, f64::max);
    Ok(RateProbe { samples: out, disagreement, max_rate, scale })
}

/// Hermitian fields spanning the kernel of `ℒ†` (observables with
/// `d⟨A⟩/dt = 0` for every state).
pub fn conserved_observable_search(spec: &CouplingSpec) -> Result<Vec<Vec<DenseOperator>>> {
    let l = build_liouvillian_matrix(spec)?;
    let kernel = crate::spectral::null_space(&l.adjoint(), 1e-9)?;
    let d = spec.dim();
    let n = spec.grid().len();
    // Hermitian parts of the kernel vectors, orthonormalized over the reals
    let mut basis: Vec<DVector<C64>> = Vec::new();
    for v in kernel.column_iter() {
        for phase in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
            let v = v.clone_owned() * phase;
            let field = HybridStateGrid::from_vector(spec.grid().clone(), d, &v)?;
            let herm: Vec<DenseOperator> = field.blocks().iter().map(|b| b.hermitian_part()).collect();
            let mut w = HybridStateGrid::new(spec.grid().clone(), herm)?.to_vector();
            for b in &basis {
                let c = b.dotc(&w).re;
                w -= b * C64::new(c, 0.0);
            }
            let norm = w.norm();
            if norm > 1e-6 {
                basis.push(w / C64::new(norm, 0.0));
            }
        }
    }
    basis
        .into_iter()
        .map(|v| HybridStateGrid::from_vector(spec.grid().clone(), d, &v).map(|s| s.blocks().to_vec()))
        .collect::<Result<Vec<_>>>()
        .map(|fields| fields.into_iter().filter(|f| f.len() == n).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyEntry {
    pub requirement: String,
    pub status: CheckStatus,
    pub residual: f64,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub entries: Vec<ConsistencyEntry>,
    /// `(t, Tr ρ²)` of the reduced quantum state.
    pub purity: Vec<(f64, f64)>,
}

impl ConsistencyReport {
    pub fn entry(&self, requirement: &str) -> Option<&ConsistencyEntry> {
        self.entries.iter().find(|e| e.requirement == requirement)
    }
}

#[derive(Clone, Debug)]
pub struct ConsistencyOptions {
    pub dt: f64,
    pub samples: usize,
    pub seed: u64,
    /// Observables expected to be conserved (requirement V(a)).
    pub conservation_laws: Vec<HybridObservable>,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        Self { dt: 1e-3, samples: 20, seed: 0, conservation_laws: Vec::new() }
    }
}

const SUITE_TOL: f64 = 1e-9;

fn entry(requirement: &str, ok: bool, residual: f64, note: impl Into<String>) -> ConsistencyEntry {
    ConsistencyEntry {
        requirement: requirement.into(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        residual,
        note: note.into(),
    }
}

/// Requirements I–IV, V(a) and VI evaluated along a trajectory of length
/// `horizon`.
pub fn consistency_suite(
    spec: &CouplingSpec,
    rho0: &HybridStateGrid,
    horizon: f64,
    opts: &ConsistencyOptions,
) -> Result<ConsistencyReport> {
    let steps = crate::evolution::EvolveOptions::new(horizon, opts.dt).steps()?;
    let every = (steps / opts.samples.max(1)).max(1);
    let vol = spec.grid().cell_volume();
    let mut samples: Vec<(f64, HybridStateGrid)> = Vec::new();
    let mut state = rho0.clone();
    for k in 0..=steps {
        if k % every == 0 || k == steps {
            samples.push((k as f64 * opts.dt, state.clone()));
        }
        if k < steps {
            state = step_rk4(spec, &state, opts.dt)?;
        }
    }

    let mut entries = Vec::new();

    // I: classical marginal is a probability density
    let mut worst_neg = 0.0f64;
    let mut worst_norm = 0.0f64;
    for (_, s) in &samples {
        let density = s.reduce_classical();
        let min = density.values().iter().copied().fold(f64::INFINITY, f64::min);
        worst_neg = worst_neg.max(-min);
        worst_norm = worst_norm.max((density.values().iter().sum::<f64>() * vol - 1.0).abs());
    }
    entries.push(entry(
        "I",
        worst_neg <= SUITE_TOL && worst_norm <= SUITE_TOL,
        worst_neg.max(worst_norm),
        "classical marginal non-negative and normalized",
    ));

    // II: quantum marginal is positive semidefinite
    let mut worst = 0.0f64;
    for (_, s) in &samples {
        let (eig, _) = eig_hermitian(&s.reduce_quantum().hermitian_part())?;
        worst = worst.max(-eig[0]);
    }
    entries.push(entry("II", worst <= SUITE_TOL, worst.max(0.0), "quantum marginal positive semidefinite"));

    // III: uncoupled limit reduces to Liouville and von Neumann evolution
    let free = spec.uncoupled()?;
    let constant_h = (1..spec.grid().len()).all(|c| (spec.hamiltonian(c) - spec.hamiltonian(0)).max_abs() == 0.0);
    let mut resid = 0.0f64;
    for (_, s) in &samples {
        let out = free.apply(s)?;
        let classical = free.apply_classical_moments(s)?;
        for (a, b) in out.blocks().iter().zip(classical.blocks()) {
            resid = resid.max((a.trace() - b.trace()).norm());
        }
        if constant_h {
            let integrated = out.reduce_quantum();
            let rho = s.reduce_quantum();
            let vn = crate::operator::commutator(spec.hamiltonian(0), &rho)?.scale(C64::new(0.0, -1.0));
            resid = resid.max((&integrated - &vn).max_abs());
        }
    }
    let note = if constant_h {
        "classical marginal obeys the Liouville equation; quantum marginal obeys von Neumann"
    } else {
        "classical marginal obeys the Liouville equation; H(z) varies, quantum marginal check skipped"
    };
    entries.push(entry("III", resid <= SUITE_TOL, resid, note));

    // IV: unitary equivariance of the uncoupled evolution
    let mut r = rng(opts.seed ^ 0xe9u64);
    let u = random_unitary(&mut r, spec.dim());
    let rotated_h: Vec<DenseOperator> = (0..spec.grid().len()).map(|c| spec.hamiltonian(c).conjugate_by(&u)).collect();
    let free_rot = free.with_hamiltonians(rotated_h)?.uncoupled()?;
    let mut resid = 0.0f64;
    for (_, s) in samples.iter().take(3) {
        let conj = HybridStateGrid::new(s.grid().clone(), s.blocks().iter().map(|b| b.conjugate_by(&u)).collect())?;
        let lhs = free_rot.apply(&conj)?;
        let rhs = free.apply(s)?;
        for (a, b) in lhs.blocks().iter().zip(rhs.blocks()) {
            resid = resid.max((a - &b.conjugate_by(&u)).max_abs());
        }
    }
    entries.push(entry("IV", resid <= SUITE_TOL, resid, "uncoupled evolution commutes with unitary conjugation"));

    // V(a): standard conservation laws
    if opts.conservation_laws.is_empty() {
        entries.push(ConsistencyEntry {
            requirement: "V(a)".into(),
            status: CheckStatus::NotApplicable,
            residual: 0.0,
            note: "no conservation laws supplied".into(),
        });
    } else {
        let mut worst = 0.0f64;
        let mut violated = Vec::new();
        for obs in &opts.conservation_laws {
            let adj = spec.apply_adjoint(&obs.on_grid(spec.grid()))?;
            let mut rate = 0.0f64;
            let mut scale = 1.0f64;
            for (_, s) in &samples {
                rate = rate.max(s.pair_with(&adj).re.abs());
                scale = scale.max(s.expectation(obs).re.abs());
            }
            if rate > 1e-8 * scale {
                violated.push(obs.label.clone());
            }
            worst = worst.max(rate);
        }
        let note = if violated.is_empty() {
            "all supplied observables conserved".to_string()
        } else {
            format!("d<A>/dt != 0 for {}", violated.join(", "))
        };
        entries.push(entry("V(a)", violated.is_empty(), worst, note));
    }

    // VI: purity of the reduced quantum state can change
    let purity: Vec<(f64, f64)> = samples.iter().map(|(t, s)| (*t, s.purity())).collect();
    let (lo, hi) = purity.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, p)| (a.min(*p), b.max(*p)));
    let spread = hi - lo;
    let note = if spread > SUITE_TOL { "purity changes in time" } else { "purity constant: no backreaction channel" };
    entries.push(entry("VI", spread > SUITE_TOL, spread, note));

    Ok(ConsistencyReport { entries, purity })
}

/// `‖ρ̂‖` in the pairing norm.
pub fn state_norm(rho: &HybridStateGrid) -> f64 {
    pairing_norm(rho.blocks(), rho.grid().cell_volume())
}

/// Field of `A(z)` evaluated on a spec's cells, as a dense matrix list.
pub fn observable_field(spec: &CouplingSpec, obs: &HybridObservable) -> Vec<CMatrix> {
    obs.on_grid(spec.grid()).into_iter().map(|o| o.into_matrix()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::LocalAtomicGenerator;
    use crate::operator::{make_su_basis, pauli};
    use crate::phase_space::{build_grid, Axis};
    use crate::toy::{toy_generator, FinalState, ToyModelParams};
    use std::sync::Arc;

    fn toy_probe(params: &ToyModelParams, spec: &CouplingSpec) -> AuditProbe {
        AuditProbe {
            initial: params.initial_state().to_grid(spec.grid()).unwrap(),
            horizon: 2.0,
            dt: 1e-2,
            samples: 5,
            symmetry_states: symmetry_test_states(1, &params.initial_state()),
        }
    }

    #[test]
    fn toy_symmetry_residual_is_tiny() {
        let g = toy_generator(&ToyModelParams::default()).unwrap();
        let states = symmetry_test_states(3, &ToyModelParams::default().initial_state());
        for (r, u) in so3_family(11, 30) {
            assert!(symmetry_check(&g, &r, &u, &states).unwrap() <= 1e-11);
        }
        let id = symmetry_check(&g, &Rotation3::identity(), &DenseOperator::identity(2), &states).unwrap();
        assert_eq!(id, 0.0);
    }

    #[test]
    fn displaced_final_state_breaks_covariance() {
        let p =
            ToyModelParams { final_state: FinalState::Delta { q: [0.5, 0.0, 0.0], p: [0.0; 3] }, ..Default::default() };
        let g = toy_generator(&p).unwrap();
        let states = symmetry_test_states(3, &p.initial_state());
        let (r, u) = Rotation3::about_axis([0.0, 0.0, 1.0], 1.0).unwrap();
        assert!(symmetry_check(&g, &r, &u, &states).unwrap() > 1e-3);
    }

    #[test]
    fn conservation_examples() {
        let p = ToyModelParams::default();
        let spec = toy_generator(&p).unwrap().grid_spec().unwrap();
        assert!(conservation_check(&spec, &HybridObservable::identity(2)).unwrap() < 1e-15);
        let r = conservation_check(&spec, &HybridObservable::angular_momentum(2, 1.0)).unwrap();
        assert!((r - p.kappa).abs() < 1e-12);
        // rescaling the observable leaves the residual unchanged
        let r3 = conservation_check(&spec, &HybridObservable::angular_momentum(2, 1.0).scaled(3.0)).unwrap();
        assert!((r - r3).abs() < 1e-14);

        let grid = Arc::new(build_grid(&[Axis::new(-0.5, 0.5, 1), Axis::new(-0.5, 0.5, 1)]).unwrap());
        let z = pauli()[2].clone();
        let closed =
            CouplingSpec::builder(make_su_basis(2).unwrap(), grid).hamiltonian(move |_| z.clone()).build().unwrap();
        assert!(conservation_check(&closed, &HybridObservable::quantum("H", pauli()[2].clone())).unwrap() < 1e-15);
    }

    #[test]
    fn toy_verdict_is_symmetric_not_conserved() {
        let p = ToyModelParams::default();
        let g = toy_generator(&p).unwrap();
        let spec = g.grid_spec().unwrap();
        let probe = toy_probe(&p, &spec);
        let fam = so3_family(5, 30);
        let v = noether_audit(&spec, &g, &fam, &HybridObservable::angular_momentum(2, 1.0), &probe).unwrap();
        assert!(v.symmetric && !v.conserved);
        assert!(v.internally_consistent, "disagreement {}", v.rate_disagreement);
        let v = noether_audit(&spec, &g, &fam, &HybridObservable::identity(2), &probe).unwrap();
        assert!(v.symmetric && v.conserved);
    }

    #[test]
    fn closed_qubit_is_noether() {
        let grid = Arc::new(build_grid(&[Axis::new(-0.5, 0.5, 1), Axis::new(-0.5, 0.5, 1)]).unwrap());
        let z = pauli()[2].clone();
        let zz = z.clone();
        let spec = CouplingSpec::builder(make_su_basis(2).unwrap(), grid.clone())
            .hamiltonian(move |_| zz.clone())
            .build()
            .unwrap();
        let gen = LocalAtomicGenerator::new(make_su_basis(2).unwrap(), z.clone(), CMatrix::zeros(4, 4)).unwrap();
        let init = HybridStateGrid::new(grid, vec![crate::operator::plus_state()]).unwrap();
        let probe = AuditProbe {
            initial: init,
            horizon: 1.0,
            dt: 1e-2,
            samples: 4,
            symmetry_states: symmetry_test_states(
                2,
                &HybridStateAtomic::delta(PhaseSpacePoint::origin(3), crate::operator::plus_state()),
            ),
        };
        let fam = u1_family([0.0, 0.0, 1.0], 8).unwrap();
        let v = noether_audit(&spec, &gen, &fam, &HybridObservable::quantum("sigma_z", z), &probe).unwrap();
        assert!(v.symmetric && v.conserved);
    }

    #[test]
    fn toy_consistency_suite() {
        let p = ToyModelParams::default();
        let spec = toy_generator(&p).unwrap().grid_spec().unwrap();
        let init = p.initial_state().to_grid(spec.grid()).unwrap();
        let opts = ConsistencyOptions {
            conservation_laws: (0..3).map(|a| HybridObservable::angular_momentum(a, 1.0)).collect(),
            ..Default::default()
        };
        let rep = consistency_suite(&spec, &init, 2.0, &opts).unwrap();
        for req in ["I", "II", "III", "IV", "VI"] {
            assert_eq!(rep.entry(req).unwrap().status, CheckStatus::Pass, "{req}: {:?}", rep.entry(req));
        }
        assert_eq!(rep.entry("V(a)").unwrap().status, CheckStatus::Fail);
        for (t, purity) in &rep.purity {
            let w = (-p.kappa * t).exp();
            assert!((purity - 0.5 * (1.0 + w * w)).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_system_purity_is_flagged_constant() {
        let grid = Arc::new(build_grid(&[Axis::new(-0.5, 0.5, 1), Axis::new(-0.5, 0.5, 1)]).unwrap());
        let z = pauli()[2].clone();
        let spec = CouplingSpec::builder(make_su_basis(2).unwrap(), grid.clone())
            .hamiltonian(move |_| z.clone())
            .build()
            .unwrap();
        let init = HybridStateGrid::new(grid, vec![crate::operator::plus_state()]).unwrap();
        let rep = consistency_suite(&spec, &init, 1.0, &ConsistencyOptions { dt: 1e-2, ..Default::default() }).unwrap();
        let vi = rep.entry("VI").unwrap();
        assert_eq!(vi.status, CheckStatus::Fail);
        assert!(vi.note.contains("no backreaction channel"));
        assert_eq!(rep.entry("V(a)").unwrap().status, CheckStatus::NotApplicable);
    }

    #[test]
    fn conserved_search_finds_identity_and_h() {
        let grid = Arc::new(build_grid(&[Axis::new(-0.5, 0.5, 1), Axis::new(-0.5, 0.5, 1)]).unwrap());
        let z = pauli()[2].clone();
        let spec =
            CouplingSpec::builder(make_su_basis(2).unwrap(), grid).hamiltonian(move |_| z.clone()).build().unwrap();
        let found = conserved_observable_search(&spec).unwrap();
        // commutant of σz: span{𝕀, σz}
        assert_eq!(found.len(), 2);
        for f in &found {
            assert!(conservation_check_field(&spec, f).unwrap() < 1e-10);
            assert!(f[0].is_hermitian(1e-12));
        }
    }
}
