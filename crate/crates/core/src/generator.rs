//! The classical-quantum master-equation generator.
//!
//! A [`CouplingSpec`] is discretized on a [`PhaseSpaceGrid`] and carries
//!
//! * a Hamiltonian `H(z)` per cell,
//! * a local rate matrix `λ^{μν}(z)` (`d² × d²`, PSD),
//! * a nonlocal kernel `W^{μν}(z|z′)` (rate per phase-space volume, PSD),
//! * optional classical drift `D⁰⁰₍₁₎ᵢ(z)` and diffusion `D⁰⁰₍₂₎ᵢⱼ(z)`.
//!
//! and acts as
//!
//! ```text
//! ∂ρ̂(z)/∂t = −i[H(z), ρ̂(z)]
//!          + λ^{μν}(z) (L_μ ρ̂(z) L_ν† − ½[L_ν† L_μ, ρ̂(z)]₊)
//!          + ∫ W^{μν}(z|z′) L_μ ρ̂(z′) L_ν† dz′ − ½ W^{μν}(z) [L_ν† L_μ, ρ̂(z)]₊
//!          − ∂ᵢ(D₍₁₎ᵢ ρ̂) + ∂ᵢ∂ⱼ(D₍₂₎ᵢⱼ ρ̂)
//! ```
//!
//! with `W^{μν}(z) = ∫ W^{μν}(z′|z) dz′` and midpoint quadrature for every
//! phase-space integral.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{CMatrix, DenseOperator, OperatorBasis, C64, HERMITIAN_TOL, I, ZERO};
use crate::phase_space::{PhaseSpaceGrid, PhaseSpacePoint};
use crate::state::{HybridStateAtomic, HybridStateGrid};

/// Largest vectorized state (`cells × d²`) for which dense Liouvillians are built.
pub const LIOUVILLIAN_CAP: usize = 4096;

/// Kernel tables up to this many complex entries are materialized up front.
const KERNEL_TABLE_LIMIT: usize = 1 << 22;

/// Output cells per rayon task below which the generator runs serially.
const PARALLEL_MIN_CELLS: usize = 64;

/// Largest grid whose classical operator is tabulated up front.
const CLASSICAL_TABLE_LIMIT: usize = 4096;

/// PSD tolerance for rate matrices, relative to their scale.
const PSD_TOL: f64 = 1e-10;

/// Kernel entry `W(z|z′)` addressed by cell indices; `None` means zero.
pub type CellKernel = Arc<dyn Fn(usize, usize) -> Option<CMatrix> + Send + Sync>;

enum Kernel {
    None,
    /// Row-major `(z, z′)` table of flattened `d² × d²` blocks, the matching
    /// superoperators `ρ ↦ W^{μν} L_μ ρ L_ν†` and a nonzero mask.
    Table {
        data: Vec<C64>,
        sup: Vec<C64>,
        nonzero: Vec<bool>,
    },
    /// Evaluated row by row on demand.
    Lazy(CellKernel),
}

/// Discretized generator of the hybrid master equation.
pub struct CouplingSpec {
    basis: OperatorBasis,
    grid: Arc<PhaseSpaceGrid>,
    hamiltonian: Vec<DenseOperator>,
    lindblad: Vec<CMatrix>,
    kernel: Kernel,
    kernel_source: Option<CellKernel>,
    kernel_out: Vec<CMatrix>,
    drift: Option<Vec<Vec<f64>>>,
    diffusion: Option<Vec<DMatrix<f64>>>,
    // H − (i/2) Σ (λ + W(z))^{μν} L_ν† L_μ, row-major per cell
    h_eff: Vec<Vec<C64>>,
    // ρ ↦ λ^{μν} L_μ ρ L_ν† per cell, acting on row-major vec(ρ)
    lindblad_sup: Vec<Vec<C64>>,
    lindblad_nonzero: Vec<bool>,
    ops_flat: Vec<Vec<C64>>,
    ops_adj_flat: Vec<Vec<C64>>,
    // rows of the scalar classical operator as (column, coefficient)
    classical_rows: Option<Vec<Vec<(usize, f64)>>>,
}

impl std::fmt::Debug for CouplingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CouplingSpec")
            .field("dim", &self.dim())
            .field("cells", &self.grid.len())
            .field("kernel", &!matches!(self.kernel, Kernel::None))
            .field("drift", &self.drift.is_some())
            .field("diffusion", &self.diffusion.is_some())
            .finish()
    }
}

type PointFn<T> = Box<dyn Fn(&PhaseSpacePoint) -> T>;

/// Assembles and validates a [`CouplingSpec`].
pub struct CouplingSpecBuilder {
    basis: OperatorBasis,
    grid: Arc<PhaseSpaceGrid>,
    hamiltonian: Option<PointFn<DenseOperator>>,
    lindblad: Option<PointFn<CMatrix>>,
    kernel: Option<CellKernel>,
    drift: Option<PointFn<Vec<f64>>>,
    diffusion: Option<PointFn<DMatrix<f64>>>,
}

impl CouplingSpecBuilder {
    pub fn hamiltonian(mut self, f: impl Fn(&PhaseSpacePoint) -> DenseOperator + 'static) -> Self {
        self.hamiltonian = Some(Box::new(f));
        self
    }

    /// Local rate matrix `λ^{μν}(z)`.
    pub fn lindblad(mut self, f: impl Fn(&PhaseSpacePoint) -> CMatrix + 'static) -> Self {
        self.lindblad = Some(Box::new(f));
        self
    }

    /// Nonlocal kernel `W^{μν}(z|z′)` as a function of the two points.
    pub fn kernel(
        mut self,
        f: impl Fn(&PhaseSpacePoint, &PhaseSpacePoint) -> Option<CMatrix> + Send + Sync + 'static,
    ) -> Self {
        let grid = self.grid.clone();
        self.kernel = Some(Arc::new(move |z, zp| f(grid.point(z), grid.point(zp))));
        self
    }

    /// Nonlocal kernel `W^{μν}(z|z′)` addressed by cell indices `(z, z′)`.
    pub fn kernel_cells(mut self, f: impl Fn(usize, usize) -> Option<CMatrix> + Send + Sync + 'static) -> Self {
        self.kernel = Some(Arc::new(f));
        self
    }

    /// First-moment field `D⁰⁰₍₁₎ᵢ(z)`, one entry per phase-space axis.
    pub fn drift(mut self, f: impl Fn(&PhaseSpacePoint) -> Vec<f64> + 'static) -> Self {
        self.drift = Some(Box::new(f));
        self
    }

    /// Second-moment field `D⁰⁰₍₂₎ᵢⱼ(z)`.
    pub fn diffusion(mut self, f: impl Fn(&PhaseSpacePoint) -> DMatrix<f64> + 'static) -> Self {
        self.diffusion = Some(Box::new(f));
        self
    }

    pub fn build(self) -> Result<CouplingSpec> {
        let d = self.basis.dim();
        let d2 = d * d;
        let n = self.grid.len();
        let points = self.grid.points();

        let hamiltonian: Vec<DenseOperator> = match &self.hamiltonian {
            Some(f) => points.iter().map(f).collect(),
            None => vec![DenseOperator::zeros(d); n],
        };
        for (c, h) in hamiltonian.iter().enumerate() {
            if h.dim() != d {
                return Err(Error::Shape {
                    expected: format!("{d}x{d} Hamiltonian"),
                    got: format!("{0}x{0} at cell {c}", h.dim()),
                });
            }
            if !h.is_hermitian(HERMITIAN_TOL) {
                return Err(Error::GeneratorValidity(format!("H(z) is not Hermitian at cell {c}")));
            }
        }

        let lindblad: Vec<CMatrix> = match &self.lindblad {
            Some(f) => points.iter().map(f).collect(),
            None => vec![CMatrix::zeros(d2, d2); n],
        };
        for (c, l) in lindblad.iter().enumerate() {
            check_rate_matrix(l, d2, || format!("λ(z) at cell {c}"))?;
        }

        let vol = self.grid.cell_volume();
        let mut kernel_out = vec![CMatrix::zeros(d2, d2); n];
        let kernel = match &self.kernel {
            None => Kernel::None,
            Some(f) => {
                let table = n * n * d2 * d2 <= KERNEL_TABLE_LIMIT;
                let mut data = if table { vec![ZERO; n * n * d2 * d2] } else { Vec::new() };
                let mut nonzero = if table { vec![false; n * n] } else { Vec::new() };
                for z in 0..n {
                    for zp in 0..n {
                        let Some(w) = f(z, zp) else { continue };
                        check_rate_matrix(&w, d2, || format!("W(z|z′) for cells ({z}, {zp})"))?;
                        kernel_out[zp] += &w * C64::new(vol, 0.0);
                        if table {
                            nonzero[z * n + zp] = true;
                            let base = (z * n + zp) * d2 * d2;
                            for mu in 0..d2 {
                                for nu in 0..d2 {
                                    data[base + mu * d2 + nu] = w[(mu, nu)];
                                }
                            }
                        }
                    }
                }
                if table {
                    let mut sup = vec![ZERO; data.len()];
                    let block = d2 * d2;
                    for (k, _) in nonzero.iter().enumerate().filter(|(_, nz)| **nz) {
                        let w = &data[k * block..(k + 1) * block];
                        sup[k * block..(k + 1) * block].copy_from_slice(&jump_superoperator(&self.basis, w));
                    }
                    Kernel::Table { data, sup, nonzero }
                } else {
                    Kernel::Lazy(f.clone())
                }
            }
        };
        for (c, (l, w)) in lindblad.iter().zip(&kernel_out).enumerate() {
            if !matches!(kernel, Kernel::None) {
                check_rate_matrix(&(l + w), d2, || format!("λ(z) + W(z) at cell {c}"))?;
            }
        }

        let drift = match &self.drift {
            Some(f) => {
                let v: Vec<Vec<f64>> = points.iter().map(f).collect();
                if v.iter().any(|x| x.len() != 2 * self.grid.dof() || x.iter().any(|y| !y.is_finite())) {
                    return Err(Error::GeneratorValidity(
                        "drift must have one finite entry per phase-space axis".into(),
                    ));
                }
                Some(v)
            }
            None => None,
        };
        let diffusion = match &self.diffusion {
            Some(f) => {
                let axes = 2 * self.grid.dof();
                let v: Vec<DMatrix<f64>> = points.iter().map(f).collect();
                for (c, m) in v.iter().enumerate() {
                    if m.nrows() != axes || m.ncols() != axes {
                        return Err(Error::GeneratorValidity(format!("diffusion at cell {c} is not {axes}x{axes}")));
                    }
                    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                        return Err(Error::GeneratorValidity(format!("diffusion at cell {c} is not symmetric")));
                    }
                    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
                    if min < -PSD_TOL * m.amax().max(1.0) {
                        return Err(Error::GeneratorValidity(format!(
                            "diffusion at cell {c} is not PSD (min eigenvalue {min:e})"
                        )));
                    }
                }
                Some(v)
            }
            None => None,
        };
        if drift.is_some() || diffusion.is_some() {
            check_resolution(&self.grid, drift.as_deref(), diffusion.as_deref())?;
        }

        let ops_flat: Vec<Vec<C64>> = self.basis.ops().iter().map(|l| row_major(l.matrix())).collect();
        let ops_adj_flat: Vec<Vec<C64>> = self.basis.ops().iter().map(|l| row_major(&l.matrix().adjoint())).collect();
        let mut h_eff = Vec::with_capacity(n);
        for c in 0..n {
            let rates = &lindblad[c] + &kernel_out[c];
            let mut k = CMatrix::zeros(d, d);
            for mu in 0..d2 {
                for nu in 0..d2 {
                    let r = rates[(mu, nu)];
                    if r != ZERO {
                        k += self.basis.op(nu).matrix().adjoint() * self.basis.op(mu).matrix() * r;
                    }
                }
            }
            let heff = hamiltonian[c].matrix() - k * C64::new(0.0, 0.5);
            h_eff.push(row_major(&heff));
        }
        let lindblad_nonzero: Vec<bool> = lindblad.iter().map(|l| l.iter().any(|z| *z != ZERO)).collect();
        let lindblad_sup: Vec<Vec<C64>> = lindblad
            .iter()
            .zip(&lindblad_nonzero)
            .map(|(l, &nz)| if nz { jump_superoperator(&self.basis, &row_major(l)) } else { Vec::new() })
            .collect();

        let mut spec = CouplingSpec {
            basis: self.basis,
            grid: self.grid,
            hamiltonian,
            lindblad,
            kernel,
            kernel_source: self.kernel,
            kernel_out,
            drift,
            diffusion,
            h_eff,
            lindblad_sup,
            lindblad_nonzero,
            ops_flat,
            ops_adj_flat,
            classical_rows: None,
        };
        if spec.has_classical_moments() && n <= CLASSICAL_TABLE_LIMIT {
            spec.classical_rows = Some(spec.classical_table());
        }
        Ok(spec)
    }
}

fn row_major(m: &CMatrix) -> Vec<C64> {
    let (r, c) = m.shape();
    let mut v = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn check_rate_matrix(m: &CMatrix, d2: usize, what: impl Fn() -> String) -> Result<()> {
    if m.nrows() != d2 || m.ncols() != d2 {
        return Err(Error::Shape {
            expected: format!("{d2}x{d2} rate matrix"),
            got: format!("{}x{} for {}", m.nrows(), m.ncols(), what()),
        });
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(());
    }
    let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > HERMITIAN_TOL * scale.max(1.0) {
        return Err(Error::GeneratorValidity(format!("{} is not Hermitian", what())));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let min = SymmetricEigen::new(h).eigenvalues.min();
    if min < -PSD_TOL * scale.max(1.0) {
        return Err(Error::GeneratorValidity(format!(
            "{} is not positive semidefinite (min eigenvalue {min:e})",
            what()
        )));
    }
    Ok(())
}

fn check_resolution(
    grid: &PhaseSpaceGrid,
    drift: Option<&[Vec<f64>]>,
    diffusion: Option<&[DMatrix<f64>]>,
) -> Result<()> {
    let Some(axes) = grid.axes() else {
        return Err(Error::Resolution("classical moment terms need a uniform grid".into()));
    };
    for (i, a) in axes.iter().enumerate() {
        let active = drift.is_some_and(|v| v.iter().any(|x| x[i] != 0.0))
            || diffusion.is_some_and(|v| v.iter().any(|m| m.row(i).iter().any(|x| *x != 0.0)));
        if active && a.count < 3 {
            return Err(Error::Resolution(format!("axis {i} has {} cells; at least 3 are needed", a.count)));
        }
    }
    Ok(())
}

/// `out += a · b` for row-major `d × d` blocks.
#[inline]
fn matmul_acc(out: &mut [C64], a: &[C64], b: &[C64], d: usize, scale: C64) {
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k] * scale;
            if aik == ZERO {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
}

/// Row-major `d² × d²` matrix of `ρ ↦ Σ w^{μν} L_μ ρ L_ν†` on row-major
/// `vec(ρ)`, using `vec(AXB) = (A ⊗ Bᵀ) vec(X)`.
fn jump_superoperator(basis: &OperatorBasis, w: &[C64]) -> Vec<C64> {
    let d = basis.dim();
    let d2 = d * d;
    let mut out = vec![ZERO; d2 * d2];
    for mu in 0..d2 {
        let a = basis.op(mu).matrix();
        for nu in 0..d2 {
            let r = w[mu * d2 + nu];
            if r == ZERO {
                continue;
            }
            // B = L_ν†, so Bᵀ_{jl} = conj(L_ν)_{jl}
            let b = basis.op(nu).matrix();
            for i in 0..d {
                for k in 0..d {
                    let aik = a[(i, k)] * r;
                    if aik == ZERO {
                        continue;
                    }
                    for j in 0..d {
                        for l in 0..d {
                            out[(i * d + j) * d2 + k * d + l] += aik * b[(j, l)].conj();
                        }
                    }
                }
            }
        }
    }
    out
}

fn matvec_acc(out: &mut [C64], m: &[C64], x: &[C64], scale: f64) {
    let n = x.len();
    for (row, o) in m.chunks_exact(n).zip(out.iter_mut()) {
        let mut acc = ZERO;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc * scale;
    }
}

fn matmul(a: &[C64], b: &[C64], d: usize) -> Vec<C64> {
    let mut out = vec![ZERO; d * d];
    matmul_acc(&mut out, a, b, d, C64::new(1.0, 0.0));
    out
}

impl CouplingSpec {
    pub fn builder(basis: OperatorBasis, grid: Arc<PhaseSpaceGrid>) -> CouplingSpecBuilder {
        CouplingSpecBuilder {
            basis,
            grid,
            hamiltonian: None,
            lindblad: None,
            kernel: None,
            drift: None,
            diffusion: None,
        }
    }

    pub fn basis(&self) -> &OperatorBasis {
        &self.basis
    }

    pub fn grid(&self) -> &Arc<PhaseSpaceGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Length of the vectorized state, `cells × d²`.
    pub fn state_len(&self) -> usize {
        self.grid.len() * self.dim() * self.dim()
    }

    pub fn hamiltonian(&self, cell: usize) -> &DenseOperator {
        &self.hamiltonian[cell]
    }

    pub fn lindblad(&self, cell: usize) -> &CMatrix {
        &self.lindblad[cell]
    }

    /// `W(z) = ∫ W(z′|z) dz′`.
    pub fn kernel_out_rate(&self, cell: usize) -> &CMatrix {
        &self.kernel_out[cell]
    }

    /// Diffusion matrix `D⁰⁰₍₂₎(z)` at a cell, if any.
    pub fn diffusion_at(&self, cell: usize) -> Option<&DMatrix<f64>> {
        self.diffusion.as_ref().map(|d| &d[cell])
    }

    /// Drift vector `D⁰⁰₍₁₎(z)` at a cell, if any.
    pub fn drift_at(&self, cell: usize) -> Option<&[f64]> {
        self.drift.as_ref().map(|d| d[cell].as_slice())
    }

    pub fn has_kernel(&self) -> bool {
        !matches!(self.kernel, Kernel::None)
    }

    pub fn has_classical_moments(&self) -> bool {
        self.drift.is_some() || self.diffusion.is_some()
    }

    /// Kernel block `W(z|z′)`; `None` when zero.
    pub fn kernel_entry(&self, z: usize, zp: usize) -> Option<CMatrix> {
        let d2 = self.dim() * self.dim();
        match &self.kernel {
            Kernel::None => None,
            Kernel::Lazy(f) => f(z, zp),
            Kernel::Table { data, nonzero, .. } => {
                let n = self.grid.len();
                if !nonzero[z * n + zp] {
                    return None;
                }
                let base = (z * n + zp) * d2 * d2;
                Some(CMatrix::from_row_slice(d2, d2, &data[base..base + d2 * d2]))
            }
        }
    }

    /// The kernel as a cell-indexed closure, usable as moment amplitudes.
    pub fn kernel_fn(&self) -> Option<CellKernel> {
        self.kernel_source.clone()
    }

    /// Same Hamiltonian and classical moments with `λ = W = 0`.
    pub fn uncoupled(&self) -> Result<CouplingSpec> {
        self.variant(self.hamiltonian.clone(), false)
    }

    /// Copy with the Hamiltonian replaced cell by cell.
    pub fn with_hamiltonians(&self, hamiltonian: Vec<DenseOperator>) -> Result<CouplingSpec> {
        self.variant(hamiltonian, true)
    }

    fn variant(&self, hamiltonian: Vec<DenseOperator>, keep_dissipation: bool) -> Result<CouplingSpec> {
        if hamiltonian.len() != self.grid.len() {
            return Err(Error::Shape {
                expected: format!("{} Hamiltonians", self.grid.len()),
                got: hamiltonian.len().to_string(),
            });
        }
        let hs = Arc::new(hamiltonian);
        let index = cell_lookup(&self.grid);
        let mut b = CouplingSpec::builder(self.basis.clone(), self.grid.clone());
        {
            let hs = hs.clone();
            let index = index.clone();
            b = b.hamiltonian(move |z| hs[index(z)].clone());
        }
        if keep_dissipation {
            let ls = Arc::new(self.lindblad.clone());
            let index = index.clone();
            b = b.lindblad(move |z| ls[index(z)].clone());
            if let Some(k) = &self.kernel_source {
                let k = k.clone();
                b = b.kernel_cells(move |z, zp| k(z, zp));
            }
        }
        if let Some(dr) = &self.drift {
            let dr = Arc::new(dr.clone());
            let index = index.clone();
            b = b.drift(move |z| dr[index(z)].clone());
        }
        if let Some(df) = &self.diffusion {
            let df = Arc::new(df.clone());
            b = b.diffusion(move |z| df[index(z)].clone());
        }
        b.build()
    }

    fn check_state(&self, rho: &HybridStateGrid) -> Result<()> {
        use crate::state::HybridState;
        if !(Arc::ptr_eq(&self.grid, rho.grid()) || *self.grid == **rho.grid()) {
            return Err(Error::Shape {
                expected: "state on the generator's grid".into(),
                got: "different grid".into(),
            });
        }
        if rho.dim() != self.dim() {
            return Err(Error::Shape { expected: format!("dimension {}", self.dim()), got: rho.dim().to_string() });
        }
        Ok(())
    }

    /// `L_μ ρ L_ν†` for every pair, flattened `[(μ·d² + ν)·d² + i·d + j]`.
    fn jump_products(&self, rho: &[C64]) -> Vec<C64> {
        let d = self.dim();
        let d2 = d * d;
        let mut out = vec![ZERO; d2 * d2 * d2];
        for mu in 0..d2 {
            let left = matmul(&self.ops_flat[mu], rho, d);
            for nu in 0..d2 {
                let base = (mu * d2 + nu) * d2;
                matmul_acc(&mut out[base..base + d2], &left, &self.ops_adj_flat[nu], d, C64::new(1.0, 0.0));
            }
        }
        out
    }

    fn cell_derivative(&self, z: usize, blocks: &[Vec<C64>], jumps: &[Option<Vec<C64>>]) -> Vec<C64> {
        let d = self.dim();
        let d2 = d * d;
        let d4 = d2 * d2;
        let rho = &blocks[z];
        let mut out = vec![ZERO; d2];
        // −i H_eff ρ + i ρ H_eff†
        let h = &self.h_eff[z];
        for i in 0..d {
            for j in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += -I * h[i * d + k] * rho[k * d + j] + I * rho[i * d + k] * h[j * d + k].conj();
                }
                out[i * d + j] = acc;
            }
        }
        if self.lindblad_nonzero[z] {
            matvec_acc(&mut out, &self.lindblad_sup[z], rho, 1.0);
        }
        let vol = self.grid.cell_volume();
        let n = self.grid.len();
        match &self.kernel {
            Kernel::None => {}
            Kernel::Table { sup, nonzero, .. } => {
                for zp in 0..n {
                    if nonzero[z * n + zp] {
                        let base = (z * n + zp) * d4;
                        matvec_acc(&mut out, &sup[base..base + d4], &blocks[zp], vol);
                    }
                }
            }
            Kernel::Lazy(f) => {
                for zp in 0..n {
                    let Some(x) = &jumps[zp] else { continue };
                    if let Some(w) = f(z, zp) {
                        accumulate_jumps(&mut out, &row_major(&w), x, d2, vol);
                    }
                }
            }
        }
        out
    }

    /// `ℒρ̂` on the grid (Hamiltonian, dissipator, kernel and classical moments).
    pub fn apply(&self, rho: &HybridStateGrid) -> Result<HybridStateGrid> {
        self.check_state(rho)?;
        let d = self.dim();
        let blocks: Vec<Vec<C64>> = rho.blocks().iter().map(|b| row_major(b.matrix())).collect();
        let n = blocks.len();
        // only the lazy kernel works from the raw jump products
        let lazy = matches!(self.kernel, Kernel::Lazy(_));
        let jumps: Vec<Option<Vec<C64>>> =
            blocks.iter().map(|b| (lazy && b.iter().any(|x| *x != ZERO)).then(|| self.jump_products(b))).collect();
        let derivs: Vec<Vec<C64>> = if n >= PARALLEL_MIN_CELLS {
            (0..n).into_par_iter().map(|z| self.cell_derivative(z, &blocks, &jumps)).collect()
        } else {
            (0..n).map(|z| self.cell_derivative(z, &blocks, &jumps)).collect()
        };
        let mut out: Vec<DenseOperator> =
            derivs.into_iter().map(|v| DenseOperator::from_matrix(CMatrix::from_row_slice(d, d, &v))).collect();
        if self.has_classical_moments() {
            let cl = self.classical_moments_flat(&blocks);
            for (o, c) in out.iter_mut().zip(cl) {
                *o = &*o + &DenseOperator::from_matrix(CMatrix::from_row_slice(d, d, &c));
            }
        }
        HybridStateGrid::new(self.grid.clone(), out)
    }

    /// Contribution `−∂ᵢ(D₍₁₎ᵢ ρ̂) + ∂ᵢ∂ⱼ(D₍₂₎ᵢⱼ ρ̂)` alone.
    pub fn apply_classical_moments(&self, rho: &HybridStateGrid) -> Result<HybridStateGrid> {
        self.check_state(rho)?;
        let d = self.dim();
        let blocks: Vec<Vec<C64>> = rho.blocks().iter().map(|b| row_major(b.matrix())).collect();
        let out = if self.has_classical_moments() {
            self.classical_moments_flat(&blocks)
        } else {
            vec![vec![ZERO; d * d]; blocks.len()]
        };
        HybridStateGrid::new(
            self.grid.clone(),
            out.into_iter().map(|v| DenseOperator::from_matrix(CMatrix::from_row_slice(d, d, &v))).collect(),
        )
    }

    fn classical_moments_flat(&self, blocks: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let d2 = self.dim() * self.dim();
        let n = blocks.len();
        let mut out = vec![vec![ZERO; d2]; n];
        if let Some(rows) = &self.classical_rows {
            for (o, row) in out.iter_mut().zip(rows) {
                for &(col, c) in row {
                    for (x, y) in o.iter_mut().zip(&blocks[col]) {
                        *x += y * c;
                    }
                }
            }
            return out;
        }
        let mut field = vec![ZERO; n];
        let idx = self.cell_indices();
        for e in 0..d2 {
            for (f, b) in field.iter_mut().zip(blocks) {
                *f = b[e];
            }
            let res = self.classical_stencil(&field, &idx);
            for (o, r) in out.iter_mut().zip(res) {
                o[e] = r;
            }
        }
        out
    }

    /// Conservative finite-volume discretization of the drift/diffusion
    /// operator on one scalar field; boundary fluxes vanish.
    fn classical_stencil(&self, f: &[C64], idx: &[Vec<usize>]) -> Vec<C64> {
        let grid = &self.grid;
        let axes = grid.axes().expect("checked at construction");
        let strides = grid.strides().expect("uniform");
        let n = f.len();
        let mut out = vec![ZERO; n];

        // divergence of an interface flux along axis `ax`
        let add_divergence = |out: &mut [C64], flux: &dyn Fn(usize, usize) -> C64, ax: usize, sign: f64| {
            let h = axes[ax].spacing();
            for c in 0..n {
                let k = idx[c][ax];
                let right = if k + 1 < axes[ax].count { flux(c, c + strides[ax]) } else { ZERO };
                let left = if k > 0 { flux(c - strides[ax], c) } else { ZERO };
                out[c] += (right - left) * (sign / h);
            }
        };

        if let Some(drift) = &self.drift {
            for ax in 0..axes.len() {
                if drift.iter().all(|v| v[ax] == 0.0) {
                    continue;
                }
                let g: Vec<C64> = (0..n).map(|c| f[c] * drift[c][ax]).collect();
                add_divergence(&mut out, &|a, b| (g[a] + g[b]) * 0.5, ax, -1.0);
            }
        }
        if let Some(diff) = &self.diffusion {
            for i in 0..axes.len() {
                for j in 0..axes.len() {
                    if diff.iter().all(|m| m[(i, j)] == 0.0) {
                        continue;
                    }
                    let g: Vec<C64> = (0..n).map(|c| f[c] * diff[c][(i, j)]).collect();
                    if i == j {
                        let h = axes[i].spacing();
                        add_divergence(&mut out, &|a, b| (g[b] - g[a]) / h, i, 1.0);
                    } else {
                        // inner derivative along j: central, one-sided at the edges
                        let hj = axes[j].spacing();
                        let inner: Vec<C64> = (0..n)
                            .map(|c| {
                                let k = idx[c][j];
                                let last = axes[j].count - 1;
                                let s = strides[j];
                                if k > 0 && k < last {
                                    (g[c + s] - g[c - s]) / (2.0 * hj)
                                } else if k == 0 {
                                    (g[c + s] - g[c]) / hj
                                } else {
                                    (g[c] - g[c - s]) / hj
                                }
                            })
                            .collect();
                        add_divergence(&mut out, &|a, b| (inner[a] + inner[b]) * 0.5, i, 1.0);
                    }
                }
            }
        }
        out
    }

    fn cell_indices(&self) -> Vec<Vec<usize>> {
        (0..self.grid.len()).map(|c| self.grid.multi_index(c).expect("uniform")).collect()
    }

    fn classical_table(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.grid.len();
        let idx = self.cell_indices();
        let mut rows = vec![Vec::new(); n];
        let mut e = vec![ZERO; n];
        for col in 0..n {
            e[col] = C64::new(1.0, 0.0);
            for (row, v) in self.classical_stencil(&e, &idx).into_iter().enumerate() {
                if v != ZERO {
                    rows[row].push((col, v.re));
                }
            }
            e[col] = ZERO;
        }
        rows
    }

    /// Dense cells × cells matrix of the scalar classical operator.
    fn classical_matrix(&self) -> DMatrix<C64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![ZERO; n];
        let idx = self.cell_indices();
        for col in 0..n {
            e[col] = C64::new(1.0, 0.0);
            for (row, v) in self.classical_stencil(&e, &idx).into_iter().enumerate() {
                m[(row, col)] = v;
            }
            e[col] = ZERO;
        }
        m
    }

    /// Heisenberg-picture generator `ℒ†`, the dual of [`CouplingSpec::apply`]
    /// under `⟨A, ρ̂⟩ = ∫ Tr[A(z) ρ̂(z)] dz`.
    pub fn apply_adjoint(&self, field: &[DenseOperator]) -> Result<Vec<DenseOperator>> {
        let n = self.grid.len();
        let d = self.dim();
        let d2 = d * d;
        if field.len() != n || field.iter().any(|a| a.dim() != d) {
            return Err(Error::Shape {
                expected: format!("{n} operators of dimension {d}"),
                got: format!("{} operators", field.len()),
            });
        }
        let vol = self.grid.cell_volume();
        // L_ν† A L_μ, flattened [(μ·d² + ν)·d² + ...]
        let sandwich = |a: &CMatrix| -> Vec<CMatrix> {
            let mut v = Vec::with_capacity(d2 * d2);
            for mu in 0..d2 {
                let right = a * self.basis.op(mu).matrix();
                for nu in 0..d2 {
                    v.push(self.basis.op(nu).matrix().adjoint() * &right);
                }
            }
            v
        };
        let sandwiches: Vec<Vec<CMatrix>> = field.iter().map(|a| sandwich(a.matrix())).collect();
        let mut out = Vec::with_capacity(n);
        for z in 0..n {
            let a = field[z].matrix();
            let heff = CMatrix::from_row_slice(d, d, &self.h_eff[z]);
            // i H_eff† A − i A H_eff
            let mut acc = heff.adjoint() * a * I - a * &heff * I;
            let lam = &self.lindblad[z];
            for mu in 0..d2 {
                for nu in 0..d2 {
                    let r = lam[(mu, nu)];
                    if r != ZERO {
                        acc += &sandwiches[z][mu * d2 + nu] * r;
                    }
                }
            }
            if self.has_kernel() {
                for zz in 0..n {
                    if let Some(w) = self.kernel_entry(zz, z) {
                        for mu in 0..d2 {
                            for nu in 0..d2 {
                                let r = w[(mu, nu)];
                                if r != ZERO {
                                    acc += &sandwiches[zz][mu * d2 + nu] * (r * vol);
                                }
                            }
                        }
                    }
                }
            }
            out.push(acc);
        }
        if self.has_classical_moments() {
            let cm = self.classical_matrix();
            let snapshot = out.clone();
            let _ = snapshot;
            for zp in 0..n {
                let mut extra = CMatrix::zeros(d, d);
                for z in 0..n {
                    let c = cm[(z, zp)];
                    if c != ZERO {
                        extra += field[z].matrix() * c;
                    }
                }
                out[zp] += extra;
            }
        }
        Ok(out.into_iter().map(DenseOperator::from_matrix).collect())
    }
}

fn accumulate_jumps(out: &mut [C64], rates: &[C64], jumps: &[C64], d2: usize, scale: f64) {
    for (k, &r) in rates.iter().enumerate() {
        if r == ZERO {
            continue;
        }
        let r = r * scale;
        let x = &jumps[k * d2..(k + 1) * d2];
        for (o, v) in out.iter_mut().zip(x) {
            *o += r * v;
        }
    }
}

/// Maps a point back to its cell on `grid`; panics off-grid.
fn cell_lookup(grid: &Arc<PhaseSpaceGrid>) -> Arc<dyn Fn(&PhaseSpacePoint) -> usize + Send + Sync> {
    let g = grid.clone();
    Arc::new(move |z: &PhaseSpacePoint| g.locate(z).expect("point from the generator's own grid"))
}

/// `ℒρ̂` for a grid state.
pub fn apply_generator(spec: &CouplingSpec, rho: &HybridStateGrid) -> Result<HybridStateGrid> {
    spec.apply(rho)
}

pub fn apply_classical_moments(spec: &CouplingSpec, rho: &HybridStateGrid) -> Result<HybridStateGrid> {
    spec.apply_classical_moments(rho)
}

pub fn apply_adjoint(spec: &CouplingSpec, field: &[DenseOperator]) -> Result<Vec<DenseOperator>> {
    spec.apply_adjoint(field)
}

/// Dense matrix `ℒ` on row-major vectorized states, built column by column
/// from basis states.
pub fn build_liouvillian_matrix(spec: &CouplingSpec) -> Result<CMatrix> {
    let size = spec.state_len();
    if size > LIOUVILLIAN_CAP {
        return Err(Error::Capacity { size, cap: LIOUVILLIAN_CAP });
    }
    let d = spec.dim();
    let mut m = CMatrix::zeros(size, size);
    let mut e = DVector::<C64>::zeros(size);
    for col in 0..size {
        e[col] = C64::new(1.0, 0.0);
        let s = HybridStateGrid::from_vector(spec.grid().clone(), d, &e)?;
        let out = spec.apply(&s)?.to_vector();
        m.set_column(col, &out);
        e[col] = ZERO;
    }
    Ok(m)
}

/// Displacement moments `D^{μν}_{(n) i₁…iₙ}(z′)` of an amplitude kernel.
#[derive(Clone, Debug)]
pub struct MomentTensor {
    pub order: usize,
    /// Number of phase-space axes.
    pub axes: usize,
    /// Source cells `z′` the moments were evaluated at.
    pub cells: Vec<usize>,
    /// Per source cell, one `d² × d²` matrix per spatial multi-index
    /// (flattened row-major over `i₁…iₙ`).
    pub values: Vec<Vec<CMatrix>>,
}

impl MomentTensor {
    /// Moment at the `k`-th evaluated cell for spatial indices `idx`.
    pub fn get(&self, k: usize, idx: &[usize]) -> &CMatrix {
        assert_eq!(idx.len(), self.order);
        let flat = idx.iter().fold(0, |acc, &i| acc * self.axes + i);
        &self.values[k][flat]
    }

    /// Index into `cells` for a grid cell.
    pub fn position(&self, cell: usize) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    /// Constant moment field (for manufactured tests).
    pub fn constant(order: usize, axes: usize, cells: Vec<usize>, per_index: Vec<CMatrix>) -> Self {
        let values = vec![per_index; cells.len()];
        Self { order, axes, cells, values }
    }
}

/// Moments of `amplitudes(z, z′)` at every grid cell.
pub fn compute_moments(
    amplitudes: &CellKernel,
    order: usize,
    grid: &PhaseSpaceGrid,
    d2: usize,
) -> Result<MomentTensor> {
    let all: Vec<usize> = (0..grid.len()).collect();
    compute_moments_at(amplitudes, order, grid, d2, &all)
}

/// `D_{(n)}(z′) = (1/n!) ∫ H(z|z′) Π(z_{iₖ} − z′_{iₖ}) dz` at the given
/// source cells, by midpoint quadrature.
pub fn compute_moments_at(
    amplitudes: &CellKernel,
    order: usize,
    grid: &PhaseSpaceGrid,
    d2: usize,
    sources: &[usize],
) -> Result<MomentTensor> {
    if order > 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    let axes = 2 * grid.dof();
    let count = axes.pow(order as u32);
    let factorial = [1.0, 1.0, 2.0][order];
    let vol = grid.cell_volume();
    let mut values = Vec::with_capacity(sources.len());
    for &zp in sources {
        let origin = grid.point(zp).coords();
        let mut acc = vec![CMatrix::zeros(d2, d2); count];
        for z in 0..grid.len() {
            let Some(h) = amplitudes(z, zp) else { continue };
            let x = grid.point(z).coords();
            let disp: Vec<f64> = x.iter().zip(&origin).map(|(a, b)| a - b).collect();
            for (flat, slot) in acc.iter_mut().enumerate() {
                let mut w = vol / factorial;
                let mut rest = flat;
                for _ in 0..order {
                    w *= disp[rest % axes];
                    rest /= axes;
                }
                if w != 0.0 {
                    *slot += &h * C64::new(w, 0.0);
                }
            }
        }
        values.push(acc);
    }
    Ok(MomentTensor { order, axes, cells: sources.to_vec(), values })
}

/// `⟨D₍₀₎⟩`, `⟨D₍₁₎ᵇʳ⟩ᵢ`, `⟨D₍₂₎ᵇʳ⟩ᵢⱼ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackreactionSummary {
    pub d0: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<Vec<f64>>,
    /// Largest imaginary part discarded while forming the summary.
    pub imaginary_residual: f64,
}

/// Backreaction expectation values of a grid state. The order-0 sum runs
/// over `α, β ≥ 1`, order 1 over `μ` and `β ≥ 1`, order 2 over all `μ, ν`.
/// Cells absent from a moment tensor contribute nothing.
pub fn backreaction_summary(
    rho: &HybridStateGrid,
    basis: &OperatorBasis,
    m0: &MomentTensor,
    m1: &MomentTensor,
    m2: &MomentTensor,
) -> Result<BackreactionSummary> {
    if m0.order != 0 || m1.order != 1 || m2.order != 2 {
        return Err(Error::Validation("moment tensors must have orders 0, 1, 2".into()));
    }
    let d2 = basis.len();
    let axes = m1.axes;
    let vol = rho.grid().cell_volume();
    let mut d0 = ZERO;
    let mut d1 = vec![ZERO; axes];
    let mut dd = vec![vec![ZERO; axes]; axes];
    for (cell, block) in rho.blocks().iter().enumerate() {
        // T^{μν} = Tr[L_μ ρ L_ν†]
        let t = CMatrix::from_fn(d2, d2, |mu, nu| (basis.op(mu) * block).trace_product(&basis.op(nu).adjoint()));
        let contract = |m: &CMatrix, mu_min: usize, nu_min: usize| -> C64 {
            let mut s = ZERO;
            for mu in mu_min..d2 {
                for nu in nu_min..d2 {
                    s += m[(mu, nu)] * t[(mu, nu)];
                }
            }
            s * vol
        };
        if let Some(k) = m0.position(cell) {
            d0 += contract(m0.get(k, &[]), 1, 1);
        }
        if let Some(k) = m1.position(cell) {
            for (i, slot) in d1.iter_mut().enumerate() {
                *slot += contract(m1.get(k, &[i]), 0, 1);
            }
        }
        if let Some(k) = m2.position(cell) {
            for (i, row) in dd.iter_mut().enumerate() {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += contract(m2.get(k, &[i, j]), 0, 0);
                }
            }
        }
    }
    let mut imag = d0.im.abs();
    imag = d1.iter().fold(imag, |a, z| a.max(z.im.abs()));
    imag = dd.iter().flatten().fold(imag, |a, z| a.max(z.im.abs()));
    if imag > 1e-10 {
        return Err(Error::ContractViolation(format!("backreaction summary has imaginary part {imag:e}")));
    }
    Ok(BackreactionSummary {
        d0: d0.re,
        d1: d1.iter().map(|z| z.re).collect(),
        d2: dd.iter().map(|r| r.iter().map(|z| z.re).collect()).collect(),
        imaginary_residual: imag,
    })
}

/// Diffusion–decoherence verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionDecoherenceVerdict {
    /// PSD form: `2·d2·d0 − d1 d1ᵀ ⪰ 0`.
    pub pass: bool,
    pub min_eigenvalue: f64,
    /// Componentwise form `2·d2ᵢⱼ·d0 ≥ d1ᵢ·d1ⱼ` for all `i, j`.
    pub componentwise_pass: bool,
    pub worst_pair: (usize, usize),
    pub worst_margin: f64,
    pub forms_agree: bool,
}

pub fn check_diffusion_decoherence(summary: &BackreactionSummary) -> DiffusionDecoherenceVerdict {
    let n = summary.d1.len();
    let margin = DMatrix::from_fn(n, n, |i, j| 2.0 * summary.d2[i][j] * summary.d0 - summary.d1[i] * summary.d1[j]);
    let min_eigenvalue = if n == 0 { 0.0 } else { SymmetricEigen::new(margin.clone()).eigenvalues.min() };
    let mut worst_pair = (0, 0);
    let mut worst_margin = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if margin[(i, j)] < worst_margin {
                worst_margin = margin[(i, j)];
                worst_pair = (i, j);
            }
        }
    }
    if n == 0 {
        worst_margin = 0.0;
    }
    let scale = margin.amax().max(1.0);
    let pass = min_eigenvalue >= -1e-10 * scale;
    let componentwise_pass = worst_margin >= -1e-10 * scale;
    DiffusionDecoherenceVerdict {
        pass,
        min_eigenvalue,
        componentwise_pass,
        worst_pair,
        worst_margin,
        forms_agree: pass == componentwise_pass,
    }
}

/// Generator acting on atomic (delta-supported) states.
pub trait AtomicGenerator {
    fn dim(&self) -> usize;

    /// `ℒρ̂` as an atomic measure (blocks are derivatives, not states).
    fn apply_atomic(&self, state: &HybridStateAtomic) -> Result<HybridStateAtomic>;
}

/// Phase-space independent `H` and `λ`, applied atom by atom.
#[derive(Clone, Debug)]
pub struct LocalAtomicGenerator {
    basis: OperatorBasis,
    hamiltonian: DenseOperator,
    lindblad: CMatrix,
}

impl LocalAtomicGenerator {
    pub fn new(basis: OperatorBasis, hamiltonian: DenseOperator, lindblad: CMatrix) -> Result<Self> {
        let d = basis.dim();
        if hamiltonian.dim() != d {
            return Err(Error::Shape {
                expected: format!("{d}x{d} Hamiltonian"),
                got: format!("{0}x{0}", hamiltonian.dim()),
            });
        }
        if !hamiltonian.is_hermitian(HERMITIAN_TOL) {
            return Err(Error::GeneratorValidity("H is not Hermitian".into()));
        }
        check_rate_matrix(&lindblad, d * d, || "λ".to_string())?;
        Ok(Self { basis, hamiltonian, lindblad })
    }

    fn apply_block(&self, m: &DenseOperator) -> DenseOperator {
        let d2 = self.basis.len();
        let mut out = (self.hamiltonian.matrix() * m.matrix() - m.matrix() * self.hamiltonian.matrix()) * (-I);
        for mu in 0..d2 {
            for nu in 0..d2 {
                let r = self.lindblad[(mu, nu)];
                if r == ZERO {
                    continue;
                }
                let l = self.basis.op(mu).matrix();
                let ln = self.basis.op(nu).matrix().adjoint();
                let k = &ln * l;
                out += (l * m.matrix() * &ln - (&k * m.matrix() + m.matrix() * &k) * C64::new(0.5, 0.0)) * r;
            }
        }
        DenseOperator::from_matrix(out)
    }
}

impl AtomicGenerator for LocalAtomicGenerator {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply_atomic(&self, state: &HybridStateAtomic) -> Result<HybridStateAtomic> {
        use crate::state::{Atom, HybridState};
        if state.dim() != self.dim() {
            return Err(Error::Shape { expected: format!("dimension {}", self.dim()), got: state.dim().to_string() });
        }
        HybridStateAtomic::new(
            state.atoms().iter().map(|a| Atom { z: a.z.clone(), block: self.apply_block(&a.block) }).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{make_su_basis, pauli};
    use crate::phase_space::{build_grid, Axis, ScalarField};
    use crate::random::{random_density, random_hermitian, random_psd, rng};
    use crate::state::HybridState;

    fn single_cell() -> Arc<PhaseSpaceGrid> {
        Arc::new(build_grid(&[Axis::new(-0.5, 0.5, 1), Axis::new(-0.5, 0.5, 1)]).unwrap())
    }

    fn sigma_z_spec() -> CouplingSpec {
        let z = pauli()[2].clone();
        CouplingSpec::builder(make_su_basis(2).unwrap(), single_cell()).hamiltonian(move |_| z.clone()).build().unwrap()
    }

    #[test]
    fn pure_hamiltonian_is_von_neumann() {
        let spec = sigma_z_spec();
        let rho = random_density(&mut rng(1), 2);
        let s = HybridStateGrid::new(spec.grid().clone(), vec![rho.clone()]).unwrap();
        let out = spec.apply(&s).unwrap();
        let expect = crate::operator::commutator(&pauli()[2], &rho).unwrap().scale(-I);
        assert!((out.block(0) - &expect).max_abs() < 1e-14);
    }

    #[test]
    fn sigma_z_liouvillian_matches_kron_form() {
        let spec = sigma_z_spec();
        let m = build_liouvillian_matrix(&spec).unwrap();
        let z = pauli()[2].matrix().clone();
        let id = CMatrix::identity(2, 2);
        let expect = (z.kronecker(&id) - id.kronecker(&z.transpose())) * (-I);
        assert!((&m - &expect).camax() < 1e-14);
        let eig = nalgebra::Schur::new(m).eigenvalues().unwrap();
        let mut ims: Vec<f64> = eig.iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!(eig.iter().all(|z| z.re.abs() < 1e-12));
        for (a, b) in ims.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_psd_rates() {
        let mut lam = CMatrix::zeros(4, 4);
        lam[(1, 1)] = C64::new(-0.1, 0.0);
        let r = CouplingSpec::builder(make_su_basis(2).unwrap(), single_cell()).lindblad(move |_| lam.clone()).build();
        assert!(matches!(r, Err(Error::GeneratorValidity(_))));
        let x = pauli()[0].clone();
        let bad_h = DenseOperator::from_rows(2, &[ZERO, I, I, ZERO]).unwrap();
        let _ = x;
        let r =
            CouplingSpec::builder(make_su_basis(2).unwrap(), single_cell()).hamiltonian(move |_| bad_h.clone()).build();
        assert!(matches!(r, Err(Error::GeneratorValidity(_))));
    }

    #[test]
    fn coarse_grid_rejects_moments() {
        let g = Arc::new(build_grid(&[Axis::new(0.0, 1.0, 2), Axis::new(0.0, 1.0, 4)]).unwrap());
        let r = CouplingSpec::builder(make_su_basis(2).unwrap(), g).drift(|_| vec![1.0, 0.0]).build();
        assert!(matches!(r, Err(Error::Resolution(_))));
    }

    fn gaussian_state(grid: &Arc<PhaseSpaceGrid>, center: f64, width: f64) -> HybridStateGrid {
        let f = ScalarField::from_fn(grid.clone(), |z| (-(z.q[0] - center).powi(2) / (2.0 * width * width)).exp());
        let norm = crate::phase_space::integrate(&f);
        let f = ScalarField::new(grid.clone(), f.values().iter().map(|v| v / norm).collect()).unwrap();
        HybridStateGrid::product(&DenseOperator::identity(2).scale_real(0.5), &f)
    }

    fn moment(s: &HybridStateGrid, k: i32) -> f64 {
        let vol = s.grid().cell_volume();
        s.grid().points().iter().zip(s.blocks()).map(|(z, b)| z.q[0].powi(k) * b.trace().re * vol).sum()
    }

    #[test]
    fn constant_drift_advects_mean() {
        let g = Arc::new(build_grid(&[Axis::new(-10.0, 10.0, 400), Axis::new(-1.0, 1.0, 1)]).unwrap());
        let c = 0.8;
        let spec =
            CouplingSpec::builder(make_su_basis(2).unwrap(), g.clone()).drift(move |_| vec![c, 0.0]).build().unwrap();
        let mut s = gaussian_state(&g, 0.0, 1.0);
        let dt = 1e-3;
        let m0 = moment(&s, 1);
        for _ in 0..100 {
            s = crate::evolution::step_rk4(&spec, &s, dt).unwrap();
        }
        let rate = (moment(&s, 1) - m0) / 0.1;
        assert!((rate - c).abs() < 1e-3, "rate {rate}");
        assert!(s.check_normalization() < 1e-12);
    }

    #[test]
    fn constant_diffusion_grows_variance() {
        let g = Arc::new(build_grid(&[Axis::new(-10.0, 10.0, 400), Axis::new(-1.0, 1.0, 1)]).unwrap());
        let dcoef = 0.3;
        let spec = CouplingSpec::builder(make_su_basis(2).unwrap(), g.clone())
            .diffusion(move |_| DMatrix::from_row_slice(2, 2, &[dcoef, 0.0, 0.0, 0.0]))
            .build()
            .unwrap();
        let mut s = gaussian_state(&g, 0.0, 1.0);
        let var = |s: &HybridStateGrid| moment(s, 2) - moment(s, 1).powi(2);
        let v0 = var(&s);
        for _ in 0..100 {
            s = crate::evolution::step_rk4(&spec, &s, 1e-3).unwrap();
        }
        let rate = (var(&s) - v0) / 0.1;
        assert!((rate - 2.0 * dcoef).abs() < 1e-3, "rate {rate}");
    }

    #[test]
    fn zero_moments_contribute_nothing() {
        let g = Arc::new(build_grid(&[Axis::new(-1.0, 1.0, 5), Axis::new(-1.0, 1.0, 5)]).unwrap());
        let spec = CouplingSpec::builder(make_su_basis(2).unwrap(), g.clone())
            .drift(|_| vec![0.0, 0.0])
            .diffusion(|_| DMatrix::zeros(2, 2))
            .build()
            .unwrap();
        let s = gaussian_state(&g, 0.2, 0.5);
        let out = spec.apply_classical_moments(&s).unwrap();
        assert!(out.blocks().iter().all(|b| b.max_abs() == 0.0));
    }

    #[test]
    fn mixed_diffusion_conserves_trace() {
        let g = Arc::new(build_grid(&[Axis::new(-2.0, 2.0, 6), Axis::new(-2.0, 2.0, 5)]).unwrap());
        let spec = CouplingSpec::builder(make_su_basis(2).unwrap(), g.clone())
            .drift(|z| vec![z.p[0], -z.q[0]])
            .diffusion(|_| DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]))
            .build()
            .unwrap();
        let mut r = rng(3);
        let blocks = (0..g.len()).map(|_| DenseOperator::from_matrix(random_psd(&mut r, 2, 1.0))).collect();
        let s = HybridStateGrid::new(g, blocks).unwrap();
        let out = spec.apply(&s).unwrap();
        let total: C64 = out.blocks().iter().map(|b| b.trace()).sum();
        assert!(total.norm() < 1e-12);
    }

    #[test]
    fn adjoint_matches_conjugate_transpose() {
        let g = Arc::new(build_grid(&[Axis::new(-1.0, 1.0, 3), Axis::new(-1.0, 1.0, 3)]).unwrap());
        let basis = make_su_basis(2).unwrap();
        let mut r = rng(12);
        let hs: Vec<DenseOperator> = (0..9).map(|_| random_hermitian(&mut r, 2)).collect();
        let ls: Vec<CMatrix> = (0..9).map(|_| random_psd(&mut r, 4, 0.5)).collect();
        let ws: Vec<CMatrix> = (0..81).map(|_| random_psd(&mut r, 4, 0.2)).collect();
        let gg = g.clone();
        let gg2 = g.clone();
        let spec = CouplingSpec::builder(basis, g.clone())
            .hamiltonian(move |z| hs[gg.locate(z).unwrap()].clone())
            .lindblad(move |z| ls[gg2.locate(z).unwrap()].clone())
            .kernel_cells(move |z, zp| Some(ws[z * 9 + zp].clone()))
            .drift(|z| vec![0.3 * z.p[0], -0.2])
            .diffusion(|_| DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.05]))
            .build()
            .unwrap();
        let m = build_liouvillian_matrix(&spec).unwrap();
        let field: Vec<DenseOperator> = (0..9).map(|_| random_hermitian(&mut r, 2)).collect();
        let adj = spec.apply_adjoint(&field).unwrap();
        let av = HybridStateGrid::new(g.clone(), field.clone()).unwrap().to_vector();
        let expect = m.adjoint() * av;
        let got = HybridStateGrid::new(g.clone(), adj.clone()).unwrap().to_vector();
        assert!((&got - &expect).camax() < 1e-10);

        // pairing ⟨A, ℒρ̂⟩ = ⟨ℒ†A, ρ̂⟩ for a non-Hermitian block field
        let s = HybridStateGrid::new(
            g.clone(),
            (0..9).map(|_| DenseOperator::from_matrix(crate::random::random_complex(&mut r, 2, 2))).collect(),
        )
        .unwrap();
        let lhs = spec.apply(&s).unwrap().pair_with(&field);
        let rhs = s.pair_with(&adj);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn identity_is_in_the_adjoint_kernel() {
        let spec = sigma_z_spec();
        let adj = spec.apply_adjoint(&[DenseOperator::identity(2)]).unwrap();
        assert!(adj[0].max_abs() < 1e-15);
    }

    #[test]
    fn moment_capacity_and_order_errors() {
        let g = single_cell();
        let k: CellKernel = Arc::new(|_, _| None);
        assert!(matches!(compute_moments(&k, 3, &g, 4), Err(Error::UnsupportedOrder(3))));
    }

    #[test]
    fn gaussian_kernel_moments() {
        let g = build_grid(&[Axis::new(-5.05, 6.05, 111), Axis::new(-5.55, 5.55, 111)]).unwrap();
        let src = g.locate(&PhaseSpacePoint::new(vec![0.0], vec![0.0]).unwrap()).unwrap();
        let origin = g.point(src).coords();
        let gg = Arc::new(g.clone());
        let amp: CellKernel = Arc::new(move |z, zp| {
            let x = gg.point(z).coords();
            let o = gg.point(zp).coords();
            let (dx, dy) = (x[0] - o[0] - 1.0, x[1] - o[1]);
            let v = (-(dx * dx + dy * dy) / 2.0).exp() / (2.0 * std::f64::consts::PI);
            let mut m = CMatrix::zeros(4, 4);
            m[(0, 0)] = C64::new(v, 0.0);
            Some(m)
        });
        let _ = origin;
        let m0 = compute_moments_at(&amp, 0, &g, 4, &[src]).unwrap();
        let m1 = compute_moments_at(&amp, 1, &g, 4, &[src]).unwrap();
        let m2 = compute_moments_at(&amp, 2, &g, 4, &[src]).unwrap();
        assert!((m0.get(0, &[])[(0, 0)].re - 1.0).abs() < 0.02);
        assert!((m1.get(0, &[0])[(0, 0)].re - 1.0).abs() < 0.02);
        assert!(m1.get(0, &[1])[(0, 0)].re.abs() < 0.02);
        let expect = [[1.0, 0.0], [0.0, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                let v = m2.get(0, &[i, j])[(0, 0)].re;
                assert!((v - expect[i][j]).abs() < 0.02, "D2[{i}][{j}] = {v}");
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((m2.get(0, &[i, j])[(0, 0)].re - m2.get(0, &[j, i])[(0, 0)].re).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn local_kernel_moments_have_no_displacement() {
        let g = Arc::new(build_grid(&[Axis::new(-1.0, 1.0, 4), Axis::new(-1.0, 1.0, 4)]).unwrap());
        let lam = random_psd(&mut rng(2), 4, 1.0);
        let vol = g.cell_volume();
        let l2 = lam.clone();
        let amp: CellKernel = Arc::new(move |z, zp| (z == zp).then(|| &l2 * C64::new(1.0 / vol, 0.0)));
        let m0 = compute_moments(&amp, 0, &g, 4).unwrap();
        let m1 = compute_moments(&amp, 1, &g, 4).unwrap();
        let m2 = compute_moments(&amp, 2, &g, 4).unwrap();
        for k in 0..g.len() {
            assert!((m0.get(k, &[]) - &lam).camax() < 1e-12);
            assert!(m1.values[k].iter().all(|m| m.camax() < 1e-15));
            assert!(m2.values[k].iter().all(|m| m.camax() < 1e-15));
        }
    }

    #[test]
    fn symmetric_kernel_has_zero_first_moment() {
        let g = Arc::new(build_grid(&[Axis::new(-3.0, 3.0, 7), Axis::new(-3.0, 3.0, 7)]).unwrap());
        let gg = g.clone();
        let amp: CellKernel = Arc::new(move |z, zp| {
            let (a, b) = (gg.point(z), gg.point(zp));
            let r2 = a.distance(b).powi(2);
            let mut m = CMatrix::zeros(4, 4);
            m[(0, 0)] = C64::new((-r2).exp(), 0.0);
            Some(m)
        });
        let center = g.locate(&PhaseSpacePoint::new(vec![0.0], vec![0.0]).unwrap()).unwrap();
        let m1 = compute_moments_at(&amp, 1, &g, 4, &[center]).unwrap();
        assert!(m1.values[0].iter().all(|m| m.camax() < 1e-14));
    }

    #[test]
    fn factorized_kernel_moments_factorize() {
        let g = Arc::new(build_grid(&[Axis::new(-2.0, 2.0, 8), Axis::new(-2.0, 2.0, 8)]).unwrap());
        let lam = random_psd(&mut rng(5), 4, 1.0);
        let gg = g.clone();
        let t = move |z: usize, zp: usize| {
            let (a, b) = (gg.point(z).coords(), gg.point(zp).coords());
            (-(a[0] - b[0] - 0.5).powi(2) - (a[1] - b[1]).powi(2)).exp()
        };
        let t2 = t.clone();
        let l2 = lam.clone();
        let amp: CellKernel = Arc::new(move |z, zp| Some(&l2 * C64::new(t2(z, zp), 0.0)));
        let mut scalar = CMatrix::zeros(4, 4);
        scalar[(0, 0)] = C64::new(1.0, 0.0);
        let sc = scalar.clone();
        let amp_scalar: CellKernel = Arc::new(move |z, zp| Some(&sc * C64::new(t(z, zp), 0.0)));
        let full = compute_moments_at(&amp, 2, &g, 4, &[10, 27]).unwrap();
        let tm = compute_moments_at(&amp_scalar, 2, &g, 4, &[10, 27]).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let expect = &lam * tm.get(k, &[i, j])[(0, 0)];
                    assert!((full.get(k, &[i, j]) - expect).camax() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn summary_of_constant_moments() {
        let g = Arc::new(build_grid(&[Axis::new(-1.0, 1.0, 2), Axis::new(-1.0, 1.0, 2)]).unwrap());
        let basis = make_su_basis(2).unwrap();
        let rho = random_density(&mut rng(4), 2);
        let density = ScalarField::from_fn(g.clone(), |_| 0.25);
        let s = HybridStateGrid::product(&rho, &density);
        let cells: Vec<usize> = (0..4).collect();
        let id4 = CMatrix::identity(4, 4);
        let m0 = MomentTensor::constant(0, 2, cells.clone(), vec![id4.clone() * C64::new(0.7, 0.0)]);
        let mut e00 = CMatrix::zeros(4, 4);
        e00[(0, 0)] = C64::new(1.0, 0.0);
        let m1 = MomentTensor::constant(1, 2, cells.clone(), vec![CMatrix::zeros(4, 4), CMatrix::zeros(4, 4)]);
        let m2 = MomentTensor::constant(
            2,
            2,
            cells,
            vec![
                e00.clone() * C64::new(0.4, 0.0),
                CMatrix::zeros(4, 4),
                CMatrix::zeros(4, 4),
                e00 * C64::new(0.1, 0.0),
            ],
        );
        let sum = backreaction_summary(&s, &basis, &m0, &m1, &m2).unwrap();
        // Σ_α Tr[σ_α ρ σ_α] = 3 and Tr[𝕀 ρ 𝕀] = 1
        assert!((sum.d0 - 0.7 * 3.0).abs() < 1e-12);
        assert_eq!(sum.d1, vec![0.0, 0.0]);
        assert!((sum.d2[0][0] - 0.4).abs() < 1e-12 && (sum.d2[1][1] - 0.1).abs() < 1e-12);
        assert!(check_diffusion_decoherence(&sum).pass);

        let zero = MomentTensor::constant(0, 2, (0..4).collect(), vec![CMatrix::zeros(4, 4)]);
        assert_eq!(backreaction_summary(&s, &basis, &zero, &m1, &m2).unwrap().d0, 0.0);
    }

    #[test]
    fn diffusion_decoherence_examples() {
        let pass = check_diffusion_decoherence(&BackreactionSummary {
            d0: 1.0,
            d1: vec![0.0, 0.0],
            d2: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            imaginary_residual: 0.0,
        });
        assert!(pass.pass && pass.componentwise_pass && pass.forms_agree);
        assert_eq!(pass.worst_margin, 0.0);

        let fail = check_diffusion_decoherence(&BackreactionSummary {
            d0: 1.0,
            d1: vec![2.0],
            d2: vec![vec![1.0]],
            imaginary_residual: 0.0,
        });
        assert!(!fail.pass && !fail.componentwise_pass);
        assert_eq!(fail.worst_pair, (0, 0));
        assert!((fail.worst_margin + 2.0).abs() < 1e-15);
        assert!((fail.min_eigenvalue + 2.0).abs() < 1e-12);
    }
}
