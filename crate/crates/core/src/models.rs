//! Shipped models and a random valid-spec generator.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::{
    backreaction_summary, compute_moments_at, BackreactionSummary, CellKernel, CouplingSpec, MomentTensor,
};
use crate::operator::{make_su_basis, pauli, plus_state, CMatrix, DenseOperator, C64};
use crate::phase_space::{build_grid, Axis, PhaseSpaceGrid, PhaseSpacePoint, ScalarField};
use crate::random::{random_hermitian, random_psd, SeededRng};
use crate::state::{HybridObservable, HybridStateGrid};
use crate::toy::{toy_generator, ToyModelParams};

/// Names accepted by [`builtin`].
pub const SHIPPED_MODELS: [&str; 6] =
    ["toy", "two_block_metastable", "pure_hamiltonian", "depolarizing", "zero", "qubit_on_line"];

/// A spec with a default initial state and observables.
pub struct Model {
    pub name: String,
    pub spec: CouplingSpec,
    pub initial: HybridStateGrid,
    pub observables: Vec<HybridObservable>,
}

pub fn builtin(name: &str) -> Result<Model> {
    match name {
        "toy" => toy_model(&ToyModelParams::default()),
        "two_block_metastable" => two_block_metastable(1.0, 1e-3, 0.9e-3),
        "pure_hamiltonian" => pure_hamiltonian(),
        "depolarizing" => depolarizing(1.0),
        "zero" => zero_model(),
        "qubit_on_line" => qubit_on_line(8),
        other => Err(Error::Config(format!("model.name: unknown model `{other}`"))),
    }
}

fn single_cell() -> Arc<PhaseSpaceGrid> {
    Arc::new(build_grid(&[Axis::new(-0.5, 0.5, 1), Axis::new(-0.5, 0.5, 1)]).expect("static grid"))
}

fn sigma_observables() -> Vec<HybridObservable> {
    let s = pauli();
    vec![
        HybridObservable::quantum("sigma_x", s[0].clone()),
        HybridObservable::quantum("sigma_y", s[1].clone()),
        HybridObservable::quantum("sigma_z", s[2].clone()),
    ]
}

/// Toy model on its explicit cells, observing `J_x, J_y, J_z`.
pub fn toy_model(params: &ToyModelParams) -> Result<Model> {
    let gen = toy_generator(params)?;
    let spec = gen.grid_spec()?;
    let initial = gen.grid_initial_state(&spec)?;
    Ok(Model {
        name: "toy".into(),
        spec,
        initial,
        observables: (0..3).map(|a| HybridObservable::angular_momentum(a, params.hbar)).collect(),
    })
}

/// Two toy blocks on four cells `a0, af, b0, bf`: block A relaxes into
/// `af` at rate `κ₁`, block B into `bf` at rate `κ₂`, and `af` leaks into
/// `bf` through a depolarizing channel at rate `g`.
pub fn two_block_metastable(kappa1: f64, kappa2: f64, leak: f64) -> Result<Model> {
    if !(kappa1 > 0.0 && kappa2 > 0.0 && leak >= 0.0) {
        return Err(Error::Validation("rates must be positive".into()));
    }
    let pts = [-2.0, -1.0, 1.0, 2.0].map(|q| PhaseSpacePoint { q: vec![q], p: vec![0.0] });
    let grid = Arc::new(PhaseSpaceGrid::from_cells(pts.to_vec(), 1.0)?);
    let id = CMatrix::identity(4, 4);
    let spec = CouplingSpec::builder(make_su_basis(2)?, grid.clone())
        .kernel_cells(move |z, zp| {
            let rate = match (z, zp) {
                (1, 0) | (1, 1) => kappa1 / 4.0,
                (3, 2) | (3, 3) => kappa2 / 4.0,
                (3, 1) => leak / 4.0,
                _ => return None,
            };
            Some(&id * C64::new(rate, 0.0))
        })
        .build()?;
    let mut blocks = vec![DenseOperator::zeros(2); 4];
    blocks[0] = DenseOperator::projector(2, 0);
    let initial = HybridStateGrid::new(grid, blocks)?;
    Ok(Model { name: "two_block_metastable".into(), spec, initial, observables: sigma_observables() })
}

/// Closed qubit, `H = σz` on a single cell.
pub fn pure_hamiltonian() -> Result<Model> {
    let z = pauli()[2].clone();
    let grid = single_cell();
    let spec = CouplingSpec::builder(make_su_basis(2)?, grid.clone()).hamiltonian(move |_| z.clone()).build()?;
    let initial = HybridStateGrid::new(grid, vec![plus_state()])?;
    Ok(Model { name: "pure_hamiltonian".into(), spec, initial, observables: sigma_observables() })
}

/// Depolarization towards `𝕀/2` at rate `γ` on a single cell.
pub fn depolarizing(gamma: f64) -> Result<Model> {
    let mut lam = CMatrix::zeros(4, 4);
    for a in 1..4 {
        lam[(a, a)] = C64::new(gamma / 4.0, 0.0);
    }
    let grid = single_cell();
    let spec = CouplingSpec::builder(make_su_basis(2)?, grid.clone()).lindblad(move |_| lam.clone()).build()?;
    let initial = HybridStateGrid::new(grid, vec![DenseOperator::projector(2, 0)])?;
    Ok(Model { name: "depolarizing".into(), spec, initial, observables: sigma_observables() })
}

/// `ℒ = 0` on a single cell.
pub fn zero_model() -> Result<Model> {
    let grid = single_cell();
    let spec = CouplingSpec::builder(make_su_basis(2)?, grid.clone()).build()?;
    let initial = HybridStateGrid::new(grid, vec![plus_state()])?;
    Ok(Model { name: "zero".into(), spec, initial, observables: sigma_observables() })
}

/// Qubit on an `n × n` phase-space grid over `[−2, 2]²`: harmonic drift,
/// `H(q) = σz/2 + 0.3 q σx`, and a spin-dependent momentum kick of one cell
/// (`+h` through `(𝕀+σz)/2`, `−h` through `(𝕀−σz)/2`) at rate `γ = 0.5`.
/// Isotropic diffusion `D = h` keeps the cell Péclet number below 2, so the
/// central drift stencil cannot produce negative blocks.
pub fn qubit_on_line(n: usize) -> Result<Model> {
    if n < 3 {
        return Err(Error::Resolution("qubit_on_line needs at least 3 cells per axis".into()));
    }
    let grid = Arc::new(build_grid(&[Axis::new(-2.0, 2.0, n), Axis::new(-2.0, 2.0, n)])?);
    let gamma = 0.5;
    let vol = grid.cell_volume();
    // rate matrices on (𝕀, σz) for the two kick directions
    let kick = |s: f64| {
        let mut m = CMatrix::zeros(4, 4);
        let w = gamma / 2.0 / 4.0 / vol;
        m[(0, 0)] = C64::new(w, 0.0);
        m[(3, 3)] = C64::new(w, 0.0);
        m[(0, 3)] = C64::new(s * w, 0.0);
        m[(3, 0)] = C64::new(s * w, 0.0);
        m
    };
    let (up, down) = (kick(1.0), kick(-1.0));
    let g = grid.clone();
    let h = grid.axes().expect("uniform grid")[0].spacing();
    let sx = pauli()[0].clone();
    let sz = pauli()[2].clone();
    let spec = CouplingSpec::builder(make_su_basis(2)?, grid.clone())
        .hamiltonian(move |z| &sz.scale_real(0.5) + &sx.scale_real(0.3 * z.q[0]))
        .drift(|z| vec![z.p[0], -z.q[0]])
        .diffusion(move |_| DMatrix::from_row_slice(2, 2, &[h, 0.0, 0.0, h]))
        .kernel_cells(move |z, zp| {
            let (iz, izp) = (g.multi_index(z)?, g.multi_index(zp)?);
            if iz[0] != izp[0] {
                return None;
            }
            match iz[1] as i64 - izp[1] as i64 {
                1 => Some(up.clone()),
                -1 => Some(down.clone()),
                _ => None,
            }
        })
        .build()?;
    let density = ScalarField::from_fn(grid.clone(), |z| (-(z.q[0] - 0.5).powi(2) - z.p[0].powi(2)).exp());
    let total: f64 = density.values().iter().sum::<f64>() * vol;
    let density = ScalarField::new(grid.clone(), density.values().iter().map(|v| v / total).collect())?;
    let initial = HybridStateGrid::product(&plus_state(), &density);
    let mut observables = sigma_observables();
    observables.push(HybridObservable::product("q", |z| z.q[0], DenseOperator::identity(2)));
    observables.push(HybridObservable::product("p", |z| z.p[0], DenseOperator::identity(2)));
    Ok(Model { name: "qubit_on_line".into(), spec, initial, observables })
}

/// Moments of a spec's transition structure at the cells where `rho` is
/// supported: the kernel `W` plus the local rates `λ` (order 0) and the
/// classical diffusion (as `D⁰⁰₍₂₎`).
pub fn spec_backreaction(spec: &CouplingSpec, rho: &HybridStateGrid) -> Result<BackreactionSummary> {
    let d2 = spec.dim() * spec.dim();
    let axes = 2 * spec.grid().dof();
    let cells: Vec<usize> = (0..spec.grid().len()).filter(|&c| rho.block(c).max_abs() > 0.0).collect();
    let kernel: CellKernel = spec.kernel_fn().unwrap_or_else(|| Arc::new(|_, _| None));
    let mut m0 = compute_moments_at(&kernel, 0, spec.grid(), d2, &cells)?;
    let m1 = compute_moments_at(&kernel, 1, spec.grid(), d2, &cells)?;
    let mut m2 = compute_moments_at(&kernel, 2, spec.grid(), d2, &cells)?;
    for (k, &c) in cells.iter().enumerate() {
        m0.values[k][0] += spec.lindblad(c);
        if let Some(d) = spec.diffusion_at(c) {
            for i in 0..axes {
                for j in 0..axes {
                    m2.values[k][i * axes + j][(0, 0)] += C64::new(d[(i, j)], 0.0);
                }
            }
        }
    }
    backreaction_summary(rho, spec.basis(), &m0, &m1, &m2)
}

/// Constant-moment tensors for hand-built summaries.
pub fn constant_moments(
    axes: usize,
    cells: Vec<usize>,
    d0: CMatrix,
    d1: Vec<CMatrix>,
    d2: Vec<CMatrix>,
) -> [MomentTensor; 3] {
    [
        MomentTensor::constant(0, axes, cells.clone(), vec![d0]),
        MomentTensor::constant(1, axes, cells.clone(), d1),
        MomentTensor::constant(2, axes, cells, d2),
    ]
}

/// Random valid spec on a `cells × 1` grid with `d = 2`: random `H(z)`,
/// PSD `λ(z)`, a sparse PSD kernel and (for `cells ≥ 3`) random drift and
/// diffusion, the latter at least `|v|·h` so the cell Péclet number stays
/// below 1. Returns the spec and a random normalized state.
pub fn random_spec(r: &mut SeededRng, cells: usize) -> Result<(CouplingSpec, HybridStateGrid)> {
    let cells = cells.clamp(1, 32);
    let grid = Arc::new(build_grid(&[Axis::new(-1.0, 1.0, cells), Axis::new(-0.5, 0.5, 1)])?);
    let vol = grid.cell_volume();
    let hs: Vec<DenseOperator> = (0..cells).map(|_| random_hermitian(r, 2)).collect();
    let ls: Vec<CMatrix> = (0..cells).map(|_| random_psd(r, 4, 0.5)).collect();
    let mut table: Vec<Option<CMatrix>> = vec![None; cells * cells];
    for zp in 0..cells {
        for _ in 0..r.gen_range(0..=3) {
            let z = r.gen_range(0..cells);
            table[z * cells + zp] = Some(random_psd(r, 4, 0.3 / vol));
        }
    }
    let (hs, ls) = (Arc::new(hs), Arc::new(ls));
    let (g1, g2) = (grid.clone(), grid.clone());
    let mut b = CouplingSpec::builder(make_su_basis(2)?, grid.clone())
        .hamiltonian(move |z| hs[g1.locate(z).expect("own grid")].clone())
        .lindblad(move |z| ls[g2.locate(z).expect("own grid")].clone())
        .kernel_cells(move |z, zp| table[z * cells + zp].clone());
    if cells >= 3 {
        let h = 2.0 / cells as f64;
        let v: f64 = r.gen_range(-0.5..0.5);
        let dq = v.abs() * h + r.gen_range(0.0..0.1);
        b = b.drift(move |_| vec![v, 0.0]).diffusion(move |_| DMatrix::from_row_slice(2, 2, &[dq, 0.0, 0.0, 0.0]));
    }
    let spec = b.build()?;
    let blocks: Vec<CMatrix> = (0..cells).map(|_| random_psd(r, 2, 1.0)).collect();
    let total: f64 = blocks.iter().map(|m| m.trace().re).sum::<f64>() * vol;
    let state = HybridStateGrid::new(
        grid,
        blocks.into_iter().map(|m| DenseOperator::from_matrix(m / C64::new(total, 0.0))).collect(),
    )?;
    Ok((spec, state))
}
