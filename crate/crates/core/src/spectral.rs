//! Spectral analysis of the Liouvillian.
//!
//! Eigenvalues fall into four types: zero (stationary), purely imaginary
//! (rotating), negative real and complex with negative real part. The zero
//! eigenspace spans the stationary states; a large ratio between
//! consecutive decay rates signals metastability.

use std::sync::Arc;

use nalgebra::{DVector, Schur};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::evolution::evolve_exact;
use crate::operator::{CMatrix, DenseOperator, C64, ZERO};
use crate::phase_space::PhaseSpaceGrid;
use crate::state::{HybridState, HybridStateGrid};

/// Default zero tolerance, relative to `max |λ|`.
pub const DEFAULT_TOL_ZERO: f64 = 1e-9;

/// Default metastability ratio threshold.
pub const DEFAULT_GAP_RATIO: f64 = 100.0;

/// Condition number above which the stationary projector is distrusted.
const CONDITION_LIMIT: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenClass {
    Stationary,
    Rotating,
    DecayingReal,
    DecayingSpiral,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetastableGap {
    /// Index into the eigenvalues sorted by ascending `|Re λ|`.
    pub m: usize,
    /// `|Re λ_m| / |Re λ_{m−1}|`.
    pub ratio: f64,
    /// `1/|Re λ_{m−1}|`, lifetime of the metastable manifold.
    pub timescale: f64,
    /// `1/|Re λ_m|`, time after which the fast modes have decayed.
    pub relaxation_onset: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralReport {
    /// Sorted by descending real part.
    pub eigenvalues: Vec<C64>,
    pub classes: Vec<EigenClass>,
    pub zero_multiplicity: usize,
    /// Orthonormal basis of `ker ℒ` (columns).
    pub steady_basis: CMatrix,
    pub metastable: Option<MetastableGap>,
    /// `max |λ|` (1 for the zero matrix).
    pub scale: f64,
    /// Condition number of the stationary spectral projector.
    pub kernel_condition: f64,
    /// Set when [`SpectralReport::kernel_condition`] exceeds `1e8`.
    pub near_defective: bool,
}

impl SpectralReport {
    pub fn count(&self, class: EigenClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "eigenvalues": self.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "classes": self.classes,
            "zero_multiplicity": self.zero_multiplicity,
            "metastable": self.metastable.as_ref().map(|g| json!({
                "m": g.m,
                "ratio": g.ratio,
                "timescale": g.timescale,
                "relaxation_onset": g.relaxation_onset,
            })),
            "scale": self.scale,
            "kernel_condition": self.kernel_condition,
            "near_defective": self.near_defective,
        })
    }
}

/// Eigenvalues of a general complex matrix, sorted by descending real part
/// (ties by ascending imaginary part).
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape { expected: "square matrix".into(), got: format!("{}x{}", m.nrows(), m.ncols()) });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    // QR can stall at machine epsilon on near-degenerate clusters; relax it.
    let eig = [f64::EPSILON, 1e-15, 1e-14, 1e-13, 1e-12]
        .iter()
        .find_map(|&eps| Schur::try_new(m.clone(), eps, 10_000))
        .ok_or_else(|| Error::Validation("Schur decomposition did not converge".into()))?
        .eigenvalues()
        .ok_or_else(|| Error::Validation("eigenvalues unavailable".into()))?;
    let mut v: Vec<C64> = eig.iter().copied().collect();
    v.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    Ok(v)
}

/// Orthonormal basis (columns) of `ker m`, from singular values below
/// `rel_tol · σ_max`.
pub fn null_space(m: &CMatrix, rel_tol: f64) -> Result<CMatrix> {
    let n = m.ncols();
    if m.nrows() != n {
        return Err(Error::Shape { expected: "square matrix".into(), got: format!("{}x{}", m.nrows(), n) });
    }
    let smax = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(CMatrix::identity(n, n));
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Validation("SVD failed".into()))?;
    let top = svd.singular_values.max();
    let cols: Vec<DVector<C64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= rel_tol * top)
        .map(|(i, _)| vt.row(i).adjoint())
        .collect();
    if cols.is_empty() {
        return Ok(CMatrix::zeros(n, 0));
    }
    Ok(CMatrix::from_columns(&cols))
}

fn classify(z: C64, tol: f64) -> Result<EigenClass> {
    if z.re > tol {
        return Err(Error::GeneratorValidity(format!("eigenvalue {z} has positive real part")));
    }
    Ok(if z.norm() <= tol {
        EigenClass::Stationary
    } else if z.re.abs() <= tol {
        EigenClass::Rotating
    } else if z.im.abs() <= tol {
        EigenClass::DecayingReal
    } else {
        EigenClass::DecayingSpiral
    })
}

/// Stationary projector `P = R (Lₖ† R)⁻¹ Lₖ†` from right and left kernels,
/// with the condition number of `Lₖ† R`.
fn stationary_projector(l: &CMatrix, tol: f64) -> Result<(CMatrix, f64)> {
    let right = null_space(l, tol)?;
    let left = null_space(&l.adjoint(), tol)?;
    let n = l.nrows();
    if right.ncols() == 0 || right.ncols() != left.ncols() {
        return Ok((CMatrix::zeros(n, n), f64::INFINITY));
    }
    let overlap = left.adjoint() * &right;
    let sv = overlap.clone().singular_values();
    let cond = sv.max() / sv.min();
    let inv = overlap.try_inverse().ok_or_else(|| Error::Validation("singular kernel overlap".into()))?;
    Ok((&right * inv * left.adjoint(), cond))
}

/// Eigenvalues, their classes, kernel basis and metastable gap.
pub fn classify_spectrum(l: &CMatrix, tol_zero: f64) -> Result<SpectralReport> {
    let eigenvalues = eigenvalues(l)?;
    let top = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = if top > 0.0 { top } else { 1.0 };
    let tol = tol_zero * scale;
    let classes = eigenvalues.iter().map(|z| classify(*z, tol)).collect::<Result<Vec<_>>>()?;
    let zero_multiplicity = classes.iter().filter(|c| **c == EigenClass::Stationary).count();
    let steady_basis = null_space(l, tol_zero)?;
    let (_, kernel_condition) = stationary_projector(l, tol_zero)?;
    let metastable = metastable_gap(&eigenvalues, DEFAULT_GAP_RATIO, tol_zero);
    Ok(SpectralReport {
        eigenvalues,
        classes,
        zero_multiplicity,
        steady_basis,
        metastable,
        scale,
        kernel_condition,
        near_defective: kernel_condition > CONDITION_LIMIT,
    })
}

/// Smallest `m` with `|Re λ_m| / |Re λ_{m−1}| ≥ threshold` over the
/// eigenvalues sorted by ascending `|Re λ|`, skipping stationary and
/// rotating modes on the denominator side.
pub fn metastable_gap(eigenvalues: &[C64], threshold: f64, tol_zero: f64) -> Option<MetastableGap> {
    let top = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = tol_zero * if top > 0.0 { top } else { 1.0 };
    let mut rates: Vec<f64> = eigenvalues.iter().map(|z| z.re.abs()).collect();
    rates.sort_by(f64::total_cmp);
    for m in 1..rates.len() {
        let prev = rates[m - 1];
        if prev <= tol {
            continue;
        }
        let ratio = rates[m] / prev;
        if ratio >= threshold {
            return Some(MetastableGap { m, ratio, timescale: 1.0 / prev, relaxation_onset: 1.0 / rates[m] });
        }
    }
    None
}

/// Kernel of `ℒ`, devectorized where possible.
#[derive(Clone, Debug)]
pub struct SteadyStates {
    pub basis: CMatrix,
    /// Normalized state for each kernel vector that is (up to phase)
    /// positive semidefinite with non-zero trace.
    pub states: Vec<Option<HybridStateGrid>>,
}

pub fn steady_states(l: &CMatrix, grid: &Arc<PhaseSpaceGrid>, dim: usize, tol_zero: f64) -> Result<SteadyStates> {
    let basis = null_space(l, tol_zero)?;
    if basis.ncols() == 0 {
        log::warn!("Liouvillian has an empty kernel");
    }
    let mut states = Vec::with_capacity(basis.ncols());
    for v in basis.column_iter() {
        let s = HybridStateGrid::from_vector(grid.clone(), dim, &v.clone_owned())?;
        states.push(normalize_steady(&s));
    }
    Ok(SteadyStates { basis, states })
}

fn normalize_steady(s: &HybridStateGrid) -> Option<HybridStateGrid> {
    let vol = s.grid().cell_volume();
    let tr: C64 = s.blocks().iter().map(|b| b.trace()).sum::<C64>() * vol;
    if tr.norm() < 1e-10 {
        return None;
    }
    let scale = tr.inv();
    let blocks: Vec<DenseOperator> = s.blocks().iter().map(|b| b.scale(scale)).collect();
    let ok = blocks.iter().all(|b| {
        b.is_hermitian(1e-8)
            && crate::operator::eig_hermitian(&b.hermitian_part()).map(|(e, _)| e[0] >= -1e-10).unwrap_or(false)
    });
    if !ok {
        return None;
    }
    HybridStateGrid::new(s.grid().clone(), blocks.iter().map(|b| b.hermitian_part()).collect()).ok()
}

/// Long-time limit of `e^{ℒt} ρ̂₀`, or the rotating modes preventing one.
#[derive(Clone, Debug)]
pub enum Asymptotic {
    Limit(HybridStateGrid),
    /// Purely imaginary eigenvalues keep the state moving.
    Orbit {
        rotating: Vec<C64>,
    },
}

/// Spectral projection of `ρ̂₀` onto the stationary eigenspace. Falls back to
/// `evolve_exact` at `t = 50/|Re λ_slowest|` when the projector is
/// ill-conditioned.
pub fn asymptotic_projection(l: &CMatrix, rho0: &HybridStateGrid, tol_zero: f64) -> Result<Asymptotic> {
    let eigs = eigenvalues(l)?;
    let top = eigs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = tol_zero * if top > 0.0 { top } else { 1.0 };
    let rotating: Vec<C64> = eigs.iter().copied().filter(|z| z.re.abs() <= tol && z.im.abs() > tol).collect();
    if !rotating.is_empty() {
        return Ok(Asymptotic::Orbit { rotating });
    }
    let (p, cond) = stationary_projector(l, tol_zero)?;
    if cond <= CONDITION_LIMIT {
        let v = p * rho0.to_vector();
        return Ok(Asymptotic::Limit(HybridStateGrid::from_vector(rho0.grid().clone(), rho0.dim(), &v)?));
    }
    let slowest = eigs.iter().filter(|z| z.norm() > tol).map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    if !slowest.is_finite() {
        return Ok(Asymptotic::Limit(rho0.clone()));
    }
    Ok(Asymptotic::Limit(evolve_exact(l, rho0, 50.0 / slowest)?))
}

/// The projector itself, for idempotence checks.
pub fn stationary_projection_matrix(l: &CMatrix, tol_zero: f64) -> Result<CMatrix> {
    Ok(stationary_projector(l, tol_zero)?.0)
}

/// `Σ_cells vol · Tr` as a row functional on vectorized states.
pub fn trace_functional(grid: &PhaseSpaceGrid, dim: usize) -> DVector<C64> {
    let d2 = dim * dim;
    let mut v = DVector::from_element(grid.len() * d2, ZERO);
    for c in 0..grid.len() {
        for i in 0..dim {
            v[c * d2 + i * dim + i] = C64::new(grid.cell_volume(), 0.0);
        }
    }
    v
}
