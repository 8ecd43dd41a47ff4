//! Qubit coupled to a classical particle in three dimensions:
//!
//! ```text
//! ∂ρ̂/∂t = −κ ρ̂(z) + (κ/4) ρ_f(z) ∫ (ρ̂(z′) + Σ_a σ_a ρ̂(z′) σ_a) dz′
//! ```
//!
//! with solution `e^{−κt} δ(z − z₀) ρᵢ + ½(1 − e^{−κt}) ρ_f(z) 𝕀` and total
//! angular momentum `J_a(t) = e^{−κt}[(q₀ × p₀)_a + (ℏ/2) Tr σ_a ρᵢ]` for
//! `ρ_f = δ(z)`. The equation of motion is rotationally invariant, yet `J`
//! decays.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::{conservation_check, symmetry_check, symmetry_test_states};
use crate::error::{Error, Result};
use crate::evolution::{evolve_atomic_toy, step_rk4};
use crate::generator::{AtomicGenerator, CouplingSpec};
use crate::operator::{make_su_basis, pauli, validate_density, CMatrix, DenseOperator, C64};
use crate::phase_space::{cross, PhaseSpaceGrid, PhaseSpacePoint};
use crate::random::{random_rotation, rng};
use crate::state::{Atom, HybridObservable, HybridState, HybridStateAtomic, HybridStateGrid};

/// Location of the classical profile `ρ_f` the decohered state relaxes to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalState {
    /// `δ³(q) δ³(p)`.
    #[default]
    Origin,
    /// `δ(z − z_f)`; breaks rotational symmetry unless `z_f = 0`.
    Delta { q: [f64; 3], p: [f64; 3] },
    /// Weighted point masses (weights are normalized to 1).
    Atoms { points: Vec<WeightedPoint> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub q: [f64; 3],
    pub p: [f64; 3],
    pub weight: f64,
}

fn point3(q: [f64; 3], p: [f64; 3]) -> PhaseSpacePoint {
    PhaseSpacePoint { q: q.to_vec(), p: p.to_vec() }
}

impl FinalState {
    /// `(z_f, w_f)` with weights summing to one.
    pub fn atoms(&self) -> Result<Vec<(PhaseSpacePoint, f64)>> {
        match self {
            FinalState::Origin => Ok(vec![(PhaseSpacePoint::origin(3), 1.0)]),
            FinalState::Delta { q, p } => {
                if q.iter().chain(p).any(|x| !x.is_finite()) {
                    return Err(Error::Validation("final_state coordinates must be finite".into()));
                }
                Ok(vec![(point3(*q, *p), 1.0)])
            }
            FinalState::Atoms { points } => {
                let total: f64 = points.iter().map(|w| w.weight).sum();
                if points.is_empty() || points.iter().any(|w| !(w.weight >= 0.0)) || !(total > 0.0) {
                    return Err(Error::Validation("final_state weights must be non-negative with positive sum".into()));
                }
                Ok(points.iter().map(|w| (point3(w.q, w.p), w.weight / total)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelParams {
    pub kappa: f64,
    pub q0: [f64; 3],
    pub p0: [f64; 3],
    pub rho_i: DenseOperator,
    pub hbar: f64,
    pub final_state: FinalState,
}

impl Default for ToyModelParams {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            q0: [1.0, 0.0, 0.0],
            p0: [0.0, 1.0, 0.0],
            rho_i: DenseOperator::projector(2, 0),
            hbar: 1.0,
            final_state: FinalState::Origin,
        }
    }
}

impl ToyModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Validation(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::Validation(format!("hbar must be positive, got {}", self.hbar)));
        }
        if self.q0.iter().chain(&self.p0).any(|x| !x.is_finite()) {
            return Err(Error::Validation("q0 and p0 must be finite".into()));
        }
        if self.rho_i.dim() != 2 {
            return Err(Error::InvalidDimension(format!("rho_i must be 2x2, got {0}x{0}", self.rho_i.dim())));
        }
        let report = validate_density(&self.rho_i, 1e-10);
        if !report.valid {
            return Err(Error::Validation(format!(
                "rho_i is not a density matrix (min eigenvalue {:e}, trace deviation {:e}, hermiticity residual {:e})",
                report.min_eigenvalue, report.trace_deviation, report.hermiticity_residual
            )));
        }
        self.final_state.atoms()?;
        Ok(())
    }

    pub fn z0(&self) -> PhaseSpacePoint {
        point3(self.q0, self.p0)
    }

    /// `δ(z − z₀) ρᵢ`.
    pub fn initial_state(&self) -> HybridStateAtomic {
        HybridStateAtomic::delta(self.z0(), self.rho_i.clone())
    }

    /// Copy with `q₀, p₀` rotated by `R` and `ρᵢ ↦ U ρᵢ U†`.
    pub fn rotated(&self, r: &crate::phase_space::Rotation3, u: &DenseOperator) -> Self {
        Self { q0: r.apply(self.q0), p0: r.apply(self.p0), rho_i: self.rho_i.conjugate_by(u), ..self.clone() }
    }
}

/// Toy generator in its explicit four-channel form.
#[derive(Clone, Debug)]
pub struct ToyGenerator {
    params: ToyModelParams,
    finals: Vec<(PhaseSpacePoint, f64)>,
}

pub fn toy_generator(params: &ToyModelParams) -> Result<ToyGenerator> {
    params.validate()?;
    Ok(ToyGenerator { params: params.clone(), finals: params.final_state.atoms()? })
}

impl ToyGenerator {
    pub fn params(&self) -> &ToyModelParams {
        &self.params
    }

    /// `−κρ̂ + (κ/2) ρ_f (∫Tr ρ̂) 𝕀`, the twirl-collapsed right-hand side.
    pub fn apply_collapsed(&self, state: &HybridStateAtomic) -> Result<HybridStateAtomic> {
        let k = self.params.kappa;
        let total: f64 = state.atoms().iter().map(|a| a.block.trace().re).sum();
        let mut atoms: Vec<Atom> =
            state.atoms().iter().map(|a| Atom { z: a.z.clone(), block: a.block.scale_real(-k) }).collect();
        for (z, w) in &self.finals {
            atoms.push(Atom { z: z.clone(), block: DenseOperator::identity(2).scale_real(0.5 * k * w * total) });
        }
        HybridStateAtomic::new(atoms)
    }

    /// The same dynamics as a generic spec on the explicit cells
    /// `{z₀} ∪ supp ρ_f` (unit cell volume): Pauli basis, `λ = 0`,
    /// `W^{μν}(z|z′) = (κ/4) ρ_f(z) δ^{μν}`.
    pub fn grid_spec(&self) -> Result<CouplingSpec> {
        let mut points = vec![self.params.z0()];
        for (z, _) in &self.finals {
            if points.iter().all(|p| p.distance(z) > crate::state::ATOM_MERGE_DISTANCE) {
                points.push(z.clone());
            }
        }
        let grid = Arc::new(PhaseSpaceGrid::from_cells(points, 1.0)?);
        let mut profile = vec![0.0; grid.len()];
        for (z, w) in &self.finals {
            profile[grid.locate(z)?] += w / grid.cell_volume();
        }
        let rate = self.params.kappa / 4.0;
        CouplingSpec::builder(make_su_basis(2)?, grid)
            .kernel_cells(move |z, _| {
                (profile[z] > 0.0).then(|| CMatrix::identity(4, 4) * C64::new(rate * profile[z], 0.0))
            })
            .build()
    }

    /// The initial atom deposited on the cells of [`ToyGenerator::grid_spec`].
    pub fn grid_initial_state(&self, spec: &CouplingSpec) -> Result<HybridStateGrid> {
        self.params.initial_state().to_grid(spec.grid())
    }
}

impl AtomicGenerator for ToyGenerator {
    fn dim(&self) -> usize {
        2
    }

    fn apply_atomic(&self, state: &HybridStateAtomic) -> Result<HybridStateAtomic> {
        if state.dim() != 2 {
            return Err(Error::InvalidDimension(format!("toy model acts on qubits, got dimension {}", state.dim())));
        }
        let k = self.params.kappa;
        let sigma = pauli();
        // ∫ (ρ̂ + Σ_a σ_a ρ̂ σ_a) dz′, term by term
        let mut channel = DenseOperator::zeros(2);
        for a in state.atoms() {
            channel = &channel + &a.block;
            for s in &sigma {
                channel = &channel + &(&(s * &a.block) * s);
            }
        }
        let mut atoms: Vec<Atom> =
            state.atoms().iter().map(|a| Atom { z: a.z.clone(), block: a.block.scale_real(-k) }).collect();
        for (z, w) in &self.finals {
            atoms.push(Atom { z: z.clone(), block: channel.scale_real(k / 4.0 * w) });
        }
        HybridStateAtomic::new(atoms)
    }
}

/// `e^{−κt} δ(z − z₀) ρᵢ + ½(1 − e^{−κt}) ρ_f 𝕀`.
pub fn toy_analytic_state(params: &ToyModelParams, t: f64) -> Result<HybridStateAtomic> {
    params.validate()?;
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    let decay = (-params.kappa * t).exp();
    let mut atoms = vec![Atom { z: params.z0(), block: params.rho_i.scale_real(decay) }];
    if decay < 1.0 {
        for (z, w) in params.final_state.atoms()? {
            atoms.push(Atom { z, block: DenseOperator::identity(2).scale_real(0.5 * (1.0 - decay) * w) });
        }
    }
    HybridStateAtomic::new(atoms)
}

/// `(ℏ/2) e^{−κt} Tr[σ_a ρᵢ]`.
pub fn toy_spin_expectation(params: &ToyModelParams, t: f64, axis: usize) -> Result<f64> {
    if axis > 2 {
        return Err(Error::Validation(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    let s = pauli()[axis].trace_product(&params.rho_i).re;
    Ok(0.5 * params.hbar * (-params.kappa * t).exp() * s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AngularMomentumRecord {
    pub t: f64,
    pub l_orbital: [f64; 3],
    pub s_spin: [f64; 3],
    pub j_total: [f64; 3],
}

impl AngularMomentumRecord {
    fn new(t: f64, l_orbital: [f64; 3], s_spin: [f64; 3]) -> Self {
        let j_total = [l_orbital[0] + s_spin[0], l_orbital[1] + s_spin[1], l_orbital[2] + s_spin[2]];
        Self { t, l_orbital, s_spin, j_total }
    }

    /// Orbital and spin parts measured on a state.
    pub fn measure<S: HybridState>(t: f64, state: &S, hbar: f64) -> Self {
        let l = [0, 1, 2].map(|a| state.expectation(&HybridObservable::orbital(a)).re);
        let s = [0, 1, 2].map(|a| state.expectation(&HybridObservable::spin(a, hbar)).re);
        Self::new(t, l, s)
    }
}

/// Closed-form angular momentum. The final-state atoms contribute orbital
/// angular momentum `(1 − e^{−κt}) Σ w_f (q_f × p_f)` and no spin.
pub fn toy_angular_momentum(params: &ToyModelParams, t: f64) -> Result<AngularMomentumRecord> {
    params.validate()?;
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    let decay = (-params.kappa * t).exp();
    let mut l = cross(params.q0, params.p0).map(|x| x * decay);
    for (z, w) in params.final_state.atoms()? {
        let lf = z.angular_momentum();
        for a in 0..3 {
            l[a] += (1.0 - decay) * w * lf[a];
        }
    }
    let s = [0, 1, 2].map(|a| toy_spin_expectation(params, t, a).expect("valid axis"));
    Ok(AngularMomentumRecord::new(t, l, s))
}

/// Verdict of the symmetry-without-conservation demonstration.
#[derive(Clone, Debug, Serialize)]
pub struct NonconservationReport {
    pub eom_rotationally_invariant: bool,
    #[serde(rename = "J_conserved")]
    pub j_conserved: bool,
    /// Max over sampled `t` and axes of `|J_numeric − J_analytic|` (atomic).
    pub max_deviation_atomic: f64,
    /// Same for RK4 on the explicit-cell grid.
    pub max_deviation_grid: f64,
    pub symmetry_residual: f64,
    /// `‖ℒ†J_a‖ / ‖J_a‖`, largest over axes.
    pub conservation_residual: f64,
    /// `max |J(t) − J(0)|` along the atomic trajectory.
    pub j_drift: f64,
    pub records: Vec<AngularMomentumRecord>,
}

/// Number of random rotations in the covariance check.
pub const SYMMETRY_SAMPLES: usize = 30;

/// Evolves the toy model (exact atomic propagation and RK4 on the explicit
/// cells), compares `J(t)` with the closed form and checks rotational
/// covariance of the generator.
pub fn nonconservation_demo(params: &ToyModelParams, t_grid: &[f64], seed: u64) -> Result<NonconservationReport> {
    if t_grid.is_empty() {
        return Err(Error::Validation("time grid is empty".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid[0] < 0.0 {
        return Err(Error::Validation("time grid must be non-negative and non-decreasing".into()));
    }
    let gen = toy_generator(params)?;
    let init = params.initial_state();
    let j0 = AngularMomentumRecord::measure(0.0, &init, params.hbar).j_total;

    let mut records = Vec::with_capacity(t_grid.len());
    let mut max_atomic = 0.0f64;
    let mut drift = 0.0f64;
    for &t in t_grid {
        let s = evolve_atomic_toy(params, &init, t)?;
        let rec = AngularMomentumRecord::measure(t, &s, params.hbar);
        let exact = toy_angular_momentum(params, t)?;
        for a in 0..3 {
            max_atomic = max_atomic.max((rec.j_total[a] - exact.j_total[a]).abs());
            drift = drift.max((rec.j_total[a] - j0[a]).abs());
        }
        records.push(rec);
    }

    let spec = gen.grid_spec()?;
    let mut state = gen.grid_initial_state(&spec)?;
    let mut now = 0.0;
    let mut max_grid = 0.0f64;
    for &t in t_grid {
        let span = t - now;
        if span > 0.0 {
            let n = (span / 1e-3 - 1e-9).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for _ in 0..n {
                state = step_rk4(&spec, &state, h)?;
            }
            now = t;
        }
        let rec = AngularMomentumRecord::measure(t, &state, params.hbar);
        let exact = toy_angular_momentum(params, t)?;
        for a in 0..3 {
            max_grid = max_grid.max((rec.j_total[a] - exact.j_total[a]).abs());
        }
    }

    let mut r = rng(seed);
    let states = symmetry_test_states(seed, &init);
    let mut sym = 0.0f64;
    for _ in 0..SYMMETRY_SAMPLES {
        let (rot, u) = random_rotation(&mut r);
        sym = sym.max(symmetry_check(&gen, &rot, &u, &states)?);
    }
    let mut cons = 0.0f64;
    for a in 0..3 {
        cons = cons.max(conservation_check(&spec, &HybridObservable::angular_momentum(a, params.hbar))?);
    }
    let scale = j0.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    Ok(NonconservationReport {
        eom_rotationally_invariant: sym <= 1e-10,
        j_conserved: drift <= 1e-9 * scale,
        max_deviation_atomic: max_atomic,
        max_deviation_grid: max_grid,
        symmetry_residual: sym,
        conservation_residual: cons,
        j_drift: drift,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn params_validation() {
        assert!(ToyModelParams::default().validate().is_ok());
        assert!(ToyModelParams { kappa: 0.0, ..Default::default() }.validate().is_err());
        assert!(ToyModelParams { hbar: -1.0, ..Default::default() }.validate().is_err());
        let bad = DenseOperator::from_real_rows(2, &[1.2, 0.0, 0.0, -0.2]).unwrap();
        assert!(ToyModelParams { rho_i: bad, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn analytic_state_examples() {
        let p = ToyModelParams::default();
        let s0 = toy_analytic_state(&p, 0.0).unwrap();
        assert_eq!(s0.atoms().len(), 1);
        assert_eq!(s0.atoms()[0].block, p.rho_i);
        let s = toy_analytic_state(&p, 2.0 * LN_2).unwrap();
        assert!((&s.block_at(&p.z0()) - &p.rho_i.scale_real(0.5)).max_abs() < 1e-15);
        assert!(
            (&s.block_at(&PhaseSpacePoint::origin(3)) - &DenseOperator::identity(2).scale_real(0.25)).max_abs() < 1e-15
        );
        let late = toy_analytic_state(&p, 1e3).unwrap();
        assert!(
            (&late.block_at(&PhaseSpacePoint::origin(3)) - &DenseOperator::identity(2).scale_real(0.5)).max_abs()
                < 1e-15
        );
        assert!(toy_analytic_state(&p, -1.0).is_err());
        let centered = ToyModelParams { q0: [0.0; 3], p0: [0.0; 3], ..Default::default() };
        assert_eq!(toy_analytic_state(&centered, 1.0).unwrap().atoms().len(), 1);
    }

    #[test]
    fn spin_and_angular_momentum_examples() {
        let p = ToyModelParams::default();
        assert!((toy_spin_expectation(&p, 0.0, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((toy_spin_expectation(&p, 2.0 * LN_2, 2).unwrap() - 0.25).abs() < 1e-15);
        for t in [0.0, 1.0, 7.0] {
            assert_eq!(toy_spin_expectation(&p, t, 0).unwrap(), 0.0);
        }
        let j0 = toy_angular_momentum(&p, 0.0).unwrap();
        assert_eq!(j0.j_total, [0.0, 0.0, 1.5]);
        let j = toy_angular_momentum(&p, 2.0 * LN_2).unwrap();
        assert!((j.j_total[2] - 0.75).abs() < 1e-15);
        let jinf = toy_angular_momentum(&p, 1e3).unwrap();
        assert!(jinf.j_total.iter().all(|x| x.abs() < 1e-15));
        for k in 0..3 {
            assert_eq!(j.j_total[k], j.l_orbital[k] + j.s_spin[k]);
        }
    }

    #[test]
    fn explicit_channel_sum_collapses_by_twirl() {
        let g = toy_generator(&ToyModelParams::default()).unwrap();
        let mut r = rng(2);
        for _ in 0..10 {
            let s = crate::audit::random_atomic_state(&mut r, 3);
            let a = g.apply_atomic(&s).unwrap();
            let b = g.apply_collapsed(&s).unwrap();
            assert!(a.sup_distance(&b) < 1e-14);
        }
    }

    #[test]
    fn derivative_of_initial_state() {
        let p = ToyModelParams::default();
        let g = toy_generator(&p).unwrap();
        let d = g.apply_atomic(&p.initial_state()).unwrap();
        assert!((&d.block_at(&p.z0()) - &p.rho_i.scale_real(-0.5)).max_abs() < 1e-15);
        assert!(
            (&d.block_at(&PhaseSpacePoint::origin(3)) - &DenseOperator::identity(2).scale_real(0.25)).max_abs() < 1e-15
        );
        let total: f64 = d.atoms().iter().map(|a| a.block.trace().re).sum();
        assert!(total.abs() < 1e-15);
    }

    #[test]
    fn grid_spec_matches_atomic_generator() {
        let p = ToyModelParams::default();
        let g = toy_generator(&p).unwrap();
        let spec = g.grid_spec().unwrap();
        assert_eq!(spec.grid().len(), 2);
        let mut r = rng(5);
        for _ in 0..10 {
            let blocks = vec![
                DenseOperator::from_matrix(crate::random::random_psd(&mut r, 2, 1.0)),
                DenseOperator::from_matrix(crate::random::random_psd(&mut r, 2, 1.0)),
            ];
            let grid_state = HybridStateGrid::new(spec.grid().clone(), blocks.clone()).unwrap();
            let atomic = HybridStateAtomic::new(vec![
                Atom { z: spec.grid().point(0).clone(), block: blocks[0].clone() },
                Atom { z: spec.grid().point(1).clone(), block: blocks[1].clone() },
            ])
            .unwrap();
            let dg = spec.apply(&grid_state).unwrap();
            let da = g.apply_atomic(&atomic).unwrap();
            for c in 0..2 {
                assert!((dg.block(c) - &da.block_at(spec.grid().point(c))).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn demo_default_verdict() {
        let p = ToyModelParams::default();
        let ts: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let rep = nonconservation_demo(&p, &ts, 7).unwrap();
        assert!(rep.eom_rotationally_invariant);
        assert!(!rep.j_conserved);
        assert!(rep.max_deviation_atomic <= 1e-9);
        assert!(rep.max_deviation_grid <= 1e-6);
        assert!((rep.conservation_residual - p.kappa).abs() < 1e-9);
    }

    #[test]
    fn demo_small_kappa_and_zero_charge() {
        let ts: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let p = ToyModelParams { kappa: 1e-8, ..Default::default() };
        let rep = nonconservation_demo(&p, &ts, 1).unwrap();
        // |J(t) − J(0)| = |J(0)|(1 − e^{−κt}) ≤ |J(0)| κ t
        assert!(rep.j_drift <= 1.5 * 1e-8 * 1.0 + 1e-15);

        let zero = ToyModelParams {
            q0: [0.0; 3],
            p0: [0.0; 3],
            rho_i: DenseOperator::identity(2).scale_real(0.5),
            ..Default::default()
        };
        let rep = nonconservation_demo(&zero, &ts, 1).unwrap();
        assert!(rep.j_conserved);
        assert!(rep.records.iter().all(|r| r.j_total.iter().all(|x| x.abs() < 1e-15)));
    }

    #[test]
    fn displaced_final_state_breaks_symmetry() {
        let p = ToyModelParams {
            final_state: FinalState::Delta { q: [0.3, 0.0, 0.0], p: [0.0, 0.0, 0.2] },
            ..Default::default()
        };
        let rep = nonconservation_demo(&p, &[0.0, 1.0], 3).unwrap();
        assert!(!rep.eom_rotationally_invariant);
        assert!(rep.symmetry_residual > 1e-3);
    }
}
