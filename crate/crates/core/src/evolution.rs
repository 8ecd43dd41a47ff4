//! Time propagation of hybrid states.
//!
//! * [`step_rk4`] / [`evolve`]: fixed-step RK4 on grid states with monitors.
//! * [`evolve_exact`]: `expm(ℒt)` on the vectorized state.
//! * [`evolve_atomic_toy`]: closed-form propagation of atomic toy states.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{CouplingSpec, LIOUVILLIAN_CAP};
use crate::operator::{CMatrix, DenseOperator, C64};
use crate::state::{Atom, HybridObservable, HybridState, HybridStateAtomic, HybridStateGrid};
use crate::toy::ToyModelParams;

fn combine(base: &HybridStateGrid, terms: &[(f64, &HybridStateGrid)]) -> HybridStateGrid {
    let mut out = base.clone();
    for (c, block) in out.blocks_mut().iter_mut().enumerate() {
        let mut m = block.matrix().clone();
        for (w, s) in terms {
            m += s.block(c).matrix() * C64::new(*w, 0.0);
        }
        *block = DenseOperator::from_matrix(m);
    }
    out
}

fn rk4_raw(spec: &CouplingSpec, rho: &HybridStateGrid, dt: f64) -> Result<HybridStateGrid> {
    let k1 = spec.apply(rho)?;
    let k2 = spec.apply(&combine(rho, &[(dt / 2.0, &k1)]))?;
    let k3 = spec.apply(&combine(rho, &[(dt / 2.0, &k2)]))?;
    let k4 = spec.apply(&combine(rho, &[(dt, &k3)]))?;
    let mut next = combine(rho, &[(dt / 6.0, &k1), (dt / 3.0, &k2), (dt / 3.0, &k3), (dt / 6.0, &k4)]);
    for b in next.blocks_mut() {
        *b = b.hermitian_part();
    }
    Ok(next)
}

/// RK4 step that also accepts negative `dt` (for central differences).
pub(crate) fn rk4_signed(spec: &CouplingSpec, rho: &HybridStateGrid, dt: f64) -> Result<HybridStateGrid> {
    rk4_raw(spec, rho, dt)
}

fn is_finite(s: &HybridStateGrid) -> bool {
    s.blocks().iter().all(|b| b.matrix().iter().all(|z| z.re.is_finite() && z.im.is_finite()))
}

/// One classical RK4 step of `dρ̂/dt = ℒρ̂`, followed by re-Hermitization.
pub fn step_rk4(spec: &CouplingSpec, rho: &HybridStateGrid, dt: f64) -> Result<HybridStateGrid> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let next = rk4_raw(spec, rho, dt)?;
    if !is_finite(&next) {
        return Err(Error::NumericalBlowup { step: 1, time: dt });
    }
    Ok(next)
}

/// Deliberate corruption of the state, used to exercise the monitors.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultInjection {
    /// Applied right after this step.
    pub step: usize,
    /// Subtracted from the last diagonal entry of cell 0.
    pub magnitude: f64,
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub t_final: f64,
    pub dt: f64,
    /// Keep every k-th state (0 keeps none).
    pub snapshot_every: usize,
    /// Evaluate monitors every k-th step.
    pub monitor_every: usize,
    pub trace_tol: f64,
    pub positivity_tol: f64,
    pub observables: Vec<HybridObservable>,
    pub fault: Option<FaultInjection>,
}

impl EvolveOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            snapshot_every: 0,
            monitor_every: 1,
            trace_tol: 1e-6,
            positivity_tol: 1e-6,
            observables: Vec::new(),
            fault: None,
        }
    }

    pub fn observe(mut self, obs: HybridObservable) -> Self {
        self.observables.push(obs);
        self
    }

    /// Number of steps, requiring `t_final / dt` to be an integer.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("integration.dt must be positive".into()));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config("integration.t_final must be positive".into()));
        }
        if self.monitor_every == 0 {
            return Err(Error::Config("integration.monitor_every must be at least 1".into()));
        }
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final || n < 1.0 {
            return Err(Error::Config("integration.dt must divide integration.t_final".into()));
        }
        Ok(n as usize)
    }
}

/// Monitored trajectory. Series are sampled at `times`.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub trace_dev: Vec<f64>,
    pub min_eig: Vec<f64>,
    pub labels: Vec<String>,
    /// One series per observable, aligned with `times`.
    pub observables: Vec<Vec<f64>>,
    #[serde(skip)]
    pub snapshots: Vec<(f64, HybridStateGrid)>,
    #[serde(skip)]
    pub final_state: Option<HybridStateGrid>,
}

impl Trajectory {
    fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            times: Vec::new(),
            trace_dev: Vec::new(),
            min_eig: Vec::new(),
            labels,
            observables: vec![Vec::new(); n],
            snapshots: Vec::new(),
            final_state: None,
        }
    }

    /// Series for an observable label.
    pub fn series(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|i| self.observables[i].as_slice())
    }

    /// CSV with header `t,trace_dev,min_eig,<labels>` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,trace_dev,min_eig");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:.16e},{:.16e},{:.16e}", self.trace_dev[k], self.min_eig[k]);
            for s in &self.observables {
                let _ = write!(out, ",{:.16e}", s[k]);
            }
            out.push('\n');
        }
        out
    }
}

fn total_trace(s: &HybridStateGrid) -> f64 {
    let vol = s.grid().cell_volume();
    s.blocks().iter().map(|b| b.trace().re).sum::<f64>() * vol
}

fn record(traj: &mut Trajectory, t: f64, s: &HybridStateGrid, trace0: f64, opts: &EvolveOptions) -> Result<()> {
    let dev = (total_trace(s) - trace0).abs();
    let min = s.positivity_report().min_eigenvalue;
    traj.times.push(t);
    traj.trace_dev.push(dev);
    traj.min_eig.push(min);
    for (series, obs) in traj.observables.iter_mut().zip(&opts.observables) {
        series.push(s.expectation(obs).re);
    }
    if dev > opts.trace_tol {
        return Err(Error::MonitorAbort {
            time: t,
            reason: format!("trace deviation {dev:e} exceeds {:e}", opts.trace_tol),
        });
    }
    if min < -opts.positivity_tol {
        return Err(Error::MonitorAbort {
            time: t,
            reason: format!("minimum eigenvalue {min:e} below {:e}", -opts.positivity_tol),
        });
    }
    Ok(())
}

/// Repeated [`step_rk4`] with monitors at `t = k·dt` for every
/// `monitor_every`-th step (and at `t = 0`).
pub fn evolve(spec: &CouplingSpec, rho0: &HybridStateGrid, opts: &EvolveOptions) -> Result<Trajectory> {
    let steps = opts.steps()?;
    let mut traj = Trajectory::new(opts.observables.iter().map(|o| o.label.clone()).collect());
    let trace0 = total_trace(rho0);
    record(&mut traj, 0.0, rho0, trace0, opts)?;
    if opts.snapshot_every > 0 {
        traj.snapshots.push((0.0, rho0.clone()));
    }
    let mut s = rho0.clone();
    for k in 1..=steps {
        let t = k as f64 * opts.dt;
        s = rk4_raw(spec, &s, opts.dt)?;
        if !is_finite(&s) {
            return Err(Error::NumericalBlowup { step: k, time: t });
        }
        if let Some(f) = &opts.fault {
            if f.step == k {
                let blocks = s.blocks_mut();
                let d = blocks[0].dim();
                let mut m = blocks[0].matrix().clone();
                m[(d - 1, d - 1)] -= C64::new(f.magnitude, 0.0);
                blocks[0] = DenseOperator::from_matrix(m);
            }
        }
        if k % opts.monitor_every == 0 || k == steps {
            record(&mut traj, t, &s, trace0, opts)?;
        }
        if opts.snapshot_every > 0 && k % opts.snapshot_every == 0 {
            traj.snapshots.push((t, s.clone()));
        }
    }
    traj.final_state = Some(s);
    Ok(traj)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &CMatrix) -> f64 {
    a.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape { expected: "square matrix".into(), got: format!("{}x{}", a.nrows(), a.ncols()) });
    }
    let n = a.nrows();
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::NumericalBlowup { step: 0, time: 0.0 });
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * C64::new(2f64.powi(-s), 0.0);
    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let id = CMatrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9));
    let u = &a * (inner_u + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1));
    let inner_v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8));
    let v = inner_v + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or_else(|| Error::Validation("Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// `expm(ℒt)`.
pub fn propagator(liouvillian: &CMatrix, t: f64) -> Result<CMatrix> {
    let size = liouvillian.nrows();
    if size > LIOUVILLIAN_CAP {
        return Err(Error::Capacity { size, cap: LIOUVILLIAN_CAP });
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    expm(&(liouvillian * C64::new(t, 0.0)))
}

/// `vec ρ̂(t) = expm(ℒt) vec ρ̂₀`.
pub fn evolve_exact(liouvillian: &CMatrix, rho0: &HybridStateGrid, t: f64) -> Result<HybridStateGrid> {
    let v = rho0.to_vector();
    if v.len() != liouvillian.nrows() {
        return Err(Error::Shape {
            expected: format!("state of length {}", liouvillian.nrows()),
            got: v.len().to_string(),
        });
    }
    let out: DVector<C64> = propagator(liouvillian, t)? * v;
    HybridStateGrid::from_vector(rho0.grid().clone(), rho0.dim(), &out)
}

/// Exact toy-model propagation: every atom decays as `e^{−κt}` and the
/// final-state atoms collect `½(1 − e^{−κt})·T·w_f·𝕀`, with `T` the total
/// trace and `w_f` the final-state weights.
pub fn evolve_atomic_toy(params: &ToyModelParams, state: &HybridStateAtomic, t: f64) -> Result<HybridStateAtomic> {
    params.validate()?;
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    if state.dim() != 2 {
        return Err(Error::InvalidDimension(format!("toy model acts on qubits, got dimension {}", state.dim())));
    }
    let decay = (-params.kappa * t).exp();
    let total: f64 = state.atoms().iter().map(|a| a.block.trace().re).sum();
    let mut atoms: Vec<Atom> =
        state.atoms().iter().map(|a| Atom { z: a.z.clone(), block: a.block.scale_real(decay) }).collect();
    let gain = 0.5 * (1.0 - decay) * total;
    if gain != 0.0 {
        for (z, w) in params.final_state.atoms()? {
            atoms.push(Atom { z, block: DenseOperator::identity(2).scale_real(gain * w) });
        }
    }
    HybridStateAtomic::new(atoms)
}
