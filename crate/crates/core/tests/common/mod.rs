#![allow(dead_code)]

use std::sync::Arc;

use cqdyn::operator::{make_su_basis, C64};
use cqdyn::phase_space::build_grid;
use cqdyn::random::{random_density, random_hermitian, random_psd, SeededRng};
use cqdyn::{Axis, CMatrix, CouplingSpec, DenseOperator, HybridStateGrid, PhaseSpaceGrid};
use rand::Rng;

/// Straight transcription of the master equation without drift or
/// diffusion, one cell at a time, with the out-rate summed here.
pub fn naive_generator(spec: &CouplingSpec, rho: &HybridStateGrid) -> Vec<CMatrix> {
    let n = spec.grid().len();
    let vol = spec.grid().cell_volume();
    let ops: Vec<CMatrix> = spec.basis().ops().iter().map(|o| o.matrix().clone()).collect();
    let m = ops.len();
    let i = C64::new(0.0, 1.0);
    let half = C64::new(0.5, 0.0);
    let mut out = Vec::with_capacity(n);
    for z in 0..n {
        let r = rho.block(z).matrix();
        let h = spec.hamiltonian(z).matrix();
        let mut acc = -(h * r - r * h) * i;
        let lam = spec.lindblad(z);
        let mut out_rate = CMatrix::zeros(m, m);
        for zp in 0..n {
            if let Some(w) = spec.kernel_entry(zp, z) {
                out_rate += w * C64::new(vol, 0.0);
            }
        }
        for mu in 0..m {
            for nu in 0..m {
                let l_mu = &ops[mu];
                let l_nu_dag = ops[nu].adjoint();
                let c = lam[(mu, nu)];
                let wz = out_rate[(mu, nu)];
                let prod = &l_nu_dag * l_mu;
                acc += (l_mu * r * &l_nu_dag) * c;
                acc -= (&prod * r + r * &prod) * (half * (c + wz));
                for zp in 0..n {
                    if let Some(w) = spec.kernel_entry(z, zp) {
                        let rp = rho.block(zp).matrix();
                        acc += (l_mu * rp * &l_nu_dag) * (w[(mu, nu)] * vol);
                    }
                }
            }
        }
        out.push(acc);
    }
    out
}

pub fn line_grid(cells: usize) -> Arc<PhaseSpaceGrid> {
    Arc::new(build_grid(&[Axis::new(-1.0, 1.0, cells), Axis::new(-0.5, 0.5, 1)]).unwrap())
}

/// Random qubit spec with cell-dependent `H`, `λ` and a dense kernel, no
/// classical moments.
pub fn random_kernel_spec(r: &mut SeededRng, cells: usize) -> CouplingSpec {
    let grid = line_grid(cells);
    let vol = grid.cell_volume();
    let hs: Arc<Vec<DenseOperator>> = Arc::new((0..cells).map(|_| random_hermitian(r, 2)).collect());
    let ls: Arc<Vec<CMatrix>> = Arc::new((0..cells).map(|_| random_psd(r, 4, 0.5)).collect());
    let table: Arc<Vec<Option<CMatrix>>> = Arc::new(
        (0..cells * cells).map(|_| if r.gen_bool(0.6) { Some(random_psd(r, 4, 0.2 / vol)) } else { None }).collect(),
    );
    let (g1, g2) = (grid.clone(), grid.clone());
    CouplingSpec::builder(make_su_basis(2).unwrap(), grid)
        .hamiltonian(move |z| hs[g1.locate(z).unwrap()].clone())
        .lindblad(move |z| ls[g2.locate(z).unwrap()].clone())
        .kernel_cells(move |z, zp| table[z * cells + zp].clone())
        .build()
        .unwrap()
}

/// Normalized state with random density blocks and random weights.
pub fn random_state(r: &mut SeededRng, grid: &Arc<PhaseSpaceGrid>, dim: usize) -> HybridStateGrid {
    let n = grid.len();
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
    let total: f64 = w.iter().sum::<f64>() * grid.cell_volume();
    let blocks = (0..n).map(|c| random_density(r, dim).scale_real(w[c] / total)).collect();
    HybridStateGrid::new(grid.clone(), blocks).unwrap()
}

/// Random Hermitian field, one block per cell.
pub fn random_field(r: &mut SeededRng, n: usize, dim: usize) -> Vec<DenseOperator> {
    (0..n).map(|_| random_hermitian(r, dim)).collect()
}

pub fn sup(a: &[CMatrix], b: &[CMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).camax()).fold(0.0, f64::max)
}

pub fn total_trace(s: &HybridStateGrid) -> C64 {
    s.blocks().iter().map(|b| b.trace()).sum::<C64>() * s.grid().cell_volume()
}
