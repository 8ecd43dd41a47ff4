//! Classical-quantum states `ρ̂(z)`.
//!
//! Two representations share one interface: [`HybridStateGrid`] stores one
//! density block per grid cell (density per phase-space volume) and
//! [`HybridStateAtomic`] stores a finite sum of point masses, each carrying
//! an unnormalized quantum block. The atomic form is exact for dynamics
//! that stay delta-supported.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{min_eigenvalue, pauli, CMatrix, DenseOperator, C64, ZERO};
use crate::phase_space::{rotate_point, GridLayout, PhaseSpaceGrid, PhaseSpacePoint, Rotation3, ScalarField};

/// Atoms closer than this are merged.
pub const ATOM_MERGE_DISTANCE: f64 = 1e-9;

/// Behaviour shared by both state representations.
pub trait HybridState {
    fn dim(&self) -> usize;

    /// `∫ Tr[ρ̂(z)] dz − 1` in absolute value.
    fn check_normalization(&self) -> f64;

    /// `ρ = ∫ ρ̂(z) dz`.
    fn reduce_quantum(&self) -> DenseOperator;

    /// `∫ Tr[A(z) ρ̂(z)] dz` (complex for non-Hermitian observables).
    fn expectation(&self, obs: &HybridObservable) -> C64;

    fn positivity_report(&self) -> PositivityReport;

    /// `Tr[ρ²]` of the reduced quantum state.
    fn purity(&self) -> f64 {
        let rho = self.reduce_quantum();
        rho.trace_product(&rho).re
    }

    /// Real expectation of a Hermitian observable; the imaginary part must
    /// stay below `1e-10`.
    fn expectation_real(&self, obs: &HybridObservable) -> Result<f64> {
        let v = self.expectation(obs);
        if v.im.abs() > 1e-10 * v.re.abs().max(1.0) {
            return Err(Error::ContractViolation(format!("observable `{}` has complex expectation {v}", obs.label)));
        }
        Ok(v.re)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityReport {
    pub min_eigenvalue: f64,
    /// Cell or atom index holding the smallest eigenvalue.
    pub location: usize,
    pub point: PhaseSpacePoint,
}

/// Scalar coefficient function of an observable term.
pub type ClassicalFn = Arc<dyn Fn(&PhaseSpacePoint) -> f64 + Send + Sync>;

/// `A(z) = Σ_k f_k(z) A_k`.
#[derive(Clone)]
pub struct HybridObservable {
    pub label: String,
    terms: Vec<(ClassicalFn, DenseOperator)>,
}

impl std::fmt::Debug for HybridObservable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridObservable").field("label", &self.label).field("terms", &self.terms.len()).finish()
    }
}

impl HybridObservable {
    /// Product observable `f(z)·A`.
    pub fn product(
        label: impl Into<String>,
        classical: impl Fn(&PhaseSpacePoint) -> f64 + Send + Sync + 'static,
        quantum: DenseOperator,
    ) -> Self {
        Self { label: label.into(), terms: vec![(Arc::new(classical), quantum)] }
    }

    /// Pure quantum observable `1·A`.
    pub fn quantum(label: impl Into<String>, quantum: DenseOperator) -> Self {
        Self::product(label, |_| 1.0, quantum)
    }

    pub fn identity(dim: usize) -> Self {
        Self::quantum("1", DenseOperator::identity(dim))
    }

    /// Adds a further term `f(z)·A`.
    pub fn plus(
        mut self,
        classical: impl Fn(&PhaseSpacePoint) -> f64 + Send + Sync + 'static,
        quantum: DenseOperator,
    ) -> Self {
        self.terms.push((Arc::new(classical), quantum));
        self
    }

    /// Total angular momentum `J_a = (q × p)_a 𝕀 + (ℏ/2) σ_a` of a qubit
    /// attached to a particle in three dimensions.
    pub fn angular_momentum(axis: usize, hbar: f64) -> Self {
        let names = ["J_x", "J_y", "J_z"];
        Self::product(names[axis], move |z| z.angular_momentum()[axis], DenseOperator::identity(2))
            .plus(|_| 1.0, pauli()[axis].scale_real(hbar / 2.0))
    }

    /// Spin component `(ℏ/2) σ_a`.
    pub fn spin(axis: usize, hbar: f64) -> Self {
        let names = ["S_x", "S_y", "S_z"];
        Self::quantum(names[axis], pauli()[axis].scale_real(hbar / 2.0))
    }

    /// Orbital component `(q × p)_a`.
    pub fn orbital(axis: usize) -> Self {
        let names = ["L_x", "L_y", "L_z"];
        Self::product(names[axis], move |z| z.angular_momentum()[axis], DenseOperator::identity(2))
    }

    pub fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    pub fn is_hermitian(&self) -> bool {
        self.terms.iter().all(|(_, a)| a.is_hermitian(crate::operator::HERMITIAN_TOL))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let terms = self.terms.iter().map(|(f, a)| (f.clone(), a.scale_real(factor))).collect();
        Self { label: self.label.clone(), terms }
    }

    /// Operator `A(z)` at one phase-space point.
    pub fn at(&self, z: &PhaseSpacePoint) -> DenseOperator {
        let mut acc = DenseOperator::zeros(self.dim());
        for (f, a) in &self.terms {
            let c = f(z);
            if c != 0.0 {
                acc = acc + a.scale_real(c);
            }
        }
        acc
    }

    /// The observable evaluated at every cell of a grid.
    pub fn on_grid(&self, grid: &PhaseSpaceGrid) -> Vec<DenseOperator> {
        grid.points().iter().map(|z| self.at(z)).collect()
    }
}

/// `ρ̂(z)` sampled on a phase-space grid.
#[derive(Clone, Debug)]
pub struct HybridStateGrid {
    grid: Arc<PhaseSpaceGrid>,
    dim: usize,
    blocks: Vec<DenseOperator>,
}

impl HybridStateGrid {
    pub fn new(grid: Arc<PhaseSpaceGrid>, blocks: Vec<DenseOperator>) -> Result<Self> {
        if blocks.len() != grid.len() {
            return Err(Error::Shape {
                expected: format!("{} blocks", grid.len()),
                got: format!("{} blocks", blocks.len()),
            });
        }
        let dim = blocks.first().map(DenseOperator::dim).unwrap_or(1);
        if blocks.iter().any(|b| b.dim() != dim) {
            return Err(Error::Shape {
                expected: format!("blocks of dimension {dim}"),
                got: "mixed dimensions".into(),
            });
        }
        Ok(Self { grid, dim, blocks })
    }

    pub fn zeros(grid: Arc<PhaseSpaceGrid>, dim: usize) -> Self {
        let blocks = vec![DenseOperator::zeros(dim); grid.len()];
        Self { grid, dim, blocks }
    }

    pub fn from_fn(grid: Arc<PhaseSpaceGrid>, f: impl Fn(&PhaseSpacePoint) -> DenseOperator) -> Result<Self> {
        let blocks = grid.points().iter().map(f).collect();
        Self::new(grid, blocks)
    }

    /// Product state `ρ ϱ(z)` with a z-independent quantum factor.
    pub fn product(rho: &DenseOperator, density: &ScalarField) -> Self {
        let blocks = density.values().iter().map(|&w| rho.scale_real(w)).collect();
        Self { grid: density.grid().clone(), dim: rho.dim(), blocks }
    }

    pub fn grid(&self) -> &Arc<PhaseSpaceGrid> {
        &self.grid
    }

    pub fn blocks(&self) -> &[DenseOperator] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DenseOperator] {
        &mut self.blocks
    }

    pub fn block(&self, cell: usize) -> &DenseOperator {
        &self.blocks[cell]
    }

    /// Pointwise trace `ϱ(z) = Tr[ρ̂(z)]`.
    pub fn reduce_classical(&self) -> ScalarField {
        let values = self.blocks.iter().map(|b| b.trace().re).collect();
        ScalarField::new(self.grid.clone(), values).expect("one value per cell")
    }

    /// Row-major vectorization, index `cell·d² + i·d + j`.
    pub fn to_vector(&self) -> DVector<C64> {
        let d2 = self.dim * self.dim;
        let mut v = DVector::zeros(self.blocks.len() * d2);
        for (c, b) in self.blocks.iter().enumerate() {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    v[c * d2 + i * self.dim + j] = b.matrix()[(i, j)];
                }
            }
        }
        v
    }

    pub fn from_vector(grid: Arc<PhaseSpaceGrid>, dim: usize, v: &DVector<C64>) -> Result<Self> {
        let d2 = dim * dim;
        if v.len() != grid.len() * d2 {
            return Err(Error::Shape {
                expected: format!("vector of length {}", grid.len() * d2),
                got: v.len().to_string(),
            });
        }
        let blocks = (0..grid.len())
            .map(|c| DenseOperator::from_matrix(CMatrix::from_fn(dim, dim, |i, j| v[c * d2 + i * dim + j])))
            .collect();
        Ok(Self { grid, dim, blocks })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            dim: self.dim,
            blocks: self.blocks.iter().map(|b| b.scale_real(factor)).collect(),
        }
    }

    /// Largest entry-wise difference between two states on the same grid.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| (a - b).max_abs()).fold(0.0, f64::max)
    }

    /// `∫ Tr[A(z) ρ̂(z)] dz` for an operator field given per cell.
    pub fn pair_with(&self, field: &[DenseOperator]) -> C64 {
        let s: C64 = field.iter().zip(&self.blocks).map(|(a, b)| a.trace_product(b)).sum();
        s * self.grid.cell_volume()
    }
}

impl HybridState for HybridStateGrid {
    fn dim(&self) -> usize {
        self.dim
    }

    fn check_normalization(&self) -> f64 {
        let total: f64 = self.blocks.iter().map(|b| b.trace().re).sum::<f64>() * self.grid.cell_volume();
        (total - 1.0).abs()
    }

    fn reduce_quantum(&self) -> DenseOperator {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            acc += b.matrix();
        }
        DenseOperator::from_matrix(acc * C64::new(self.grid.cell_volume(), 0.0))
    }

    fn expectation(&self, obs: &HybridObservable) -> C64 {
        let s: C64 = self.grid.points().iter().zip(&self.blocks).map(|(z, b)| obs.at(z).trace_product(b)).sum();
        s * self.grid.cell_volume()
    }

    fn positivity_report(&self) -> PositivityReport {
        let (location, min_eigenvalue) = self
            .blocks
            .iter()
            .map(min_eigenvalue)
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        PositivityReport { min_eigenvalue, location, point: self.grid.point(location).clone() }
    }
}

/// A point mass carrying an unnormalized quantum block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: PhaseSpacePoint,
    #[serde(rename = "M")]
    pub block: DenseOperator,
}

/// `ρ̂(z) = Σ_k δ(z − z_k) M_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridStateAtomic {
    dim: usize,
    atoms: Vec<Atom>,
}

impl HybridStateAtomic {
    /// Builds a state, merging atoms that coincide within
    /// [`ATOM_MERGE_DISTANCE`]. No normalization is imposed, so generator
    /// outputs (traceless, indefinite blocks) use the same type.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::Validation("atomic state needs at least one atom".into()));
        };
        let dim = first.block.dim();
        let dof = first.z.dof();
        if atoms.iter().any(|a| a.block.dim() != dim || a.z.dof() != dof) {
            return Err(Error::Shape { expected: format!("atoms of dimension {dim}"), got: "mixed atoms".into() });
        }
        Ok(Self { dim, atoms: merge_atoms(atoms) })
    }

    /// Single point mass `δ(z − z₀) ρ`.
    pub fn delta(z0: PhaseSpacePoint, rho: DenseOperator) -> Self {
        Self { dim: rho.dim(), atoms: vec![Atom { z: z0, block: rho }] }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn into_atoms(self) -> Vec<Atom> {
        self.atoms
    }

    /// Atom weights `Tr[M_k]`.
    pub fn reduce_classical(&self) -> Vec<(PhaseSpacePoint, f64)> {
        self.atoms.iter().map(|a| (a.z.clone(), a.block.trace().re)).collect()
    }

    /// Block located at `z` (zero when no atom sits there).
    pub fn block_at(&self, z: &PhaseSpacePoint) -> DenseOperator {
        self.atoms
            .iter()
            .find(|a| a.z.distance(z) <= ATOM_MERGE_DISTANCE)
            .map(|a| a.block.clone())
            .unwrap_or_else(|| DenseOperator::zeros(self.dim))
    }

    /// Largest block difference after matching atoms by position.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.atoms {
            worst = worst.max((&a.block - &other.block_at(&a.z)).max_abs());
        }
        for b in &other.atoms {
            worst = worst.max((&b.block - &self.block_at(&b.z)).max_abs());
        }
        worst
    }

    /// Deposits the atoms onto a grid, each cell receiving `M_k / cell_volume`.
    pub fn to_grid(&self, grid: &Arc<PhaseSpaceGrid>) -> Result<HybridStateGrid> {
        let mut state = HybridStateGrid::zeros(grid.clone(), self.dim);
        let inv = 1.0 / grid.cell_volume();
        for a in &self.atoms {
            let c = grid.locate(&a.z)?;
            state.blocks[c] = &state.blocks[c] + &a.block.scale_real(inv);
        }
        Ok(state)
    }
}

fn merge_atoms(atoms: Vec<Atom>) -> Vec<Atom> {
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.iter_mut().find(|b| b.z.distance(&a.z) <= ATOM_MERGE_DISTANCE) {
            Some(b) => b.block = &b.block + &a.block,
            None => out.push(a),
        }
    }
    out
}

impl HybridState for HybridStateAtomic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn check_normalization(&self) -> f64 {
        (self.atoms.iter().map(|a| a.block.trace().re).sum::<f64>() - 1.0).abs()
    }

    fn reduce_quantum(&self) -> DenseOperator {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for a in &self.atoms {
            acc += a.block.matrix();
        }
        DenseOperator::from_matrix(acc)
    }

    fn expectation(&self, obs: &HybridObservable) -> C64 {
        self.atoms.iter().fold(ZERO, |acc, a| acc + obs.at(&a.z).trace_product(&a.block))
    }

    fn positivity_report(&self) -> PositivityReport {
        let (location, min_eigenvalue) = self
            .atoms
            .iter()
            .map(|a| min_eigenvalue(&a.block))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        PositivityReport { min_eigenvalue, location, point: self.atoms[location].z.clone() }
    }
}

/// Checks `U U† = 𝕀` within `1e-10`.
pub fn check_unitary(u: &DenseOperator) -> Result<()> {
    let resid = (&(u * &u.adjoint()) - &DenseOperator::identity(u.dim())).max_abs();
    if resid > 1e-10 {
        return Err(Error::Validation(format!("operator is not unitary (residual {resid:e})")));
    }
    Ok(())
}

/// `(z_k, M_k) ↦ (R z_k, U M_k U†)`.
pub fn rotate_state(r: &Rotation3, u: &DenseOperator, state: &HybridStateAtomic) -> Result<HybridStateAtomic> {
    check_unitary(u)?;
    if u.dim() != state.dim {
        return Err(Error::Shape { expected: format!("{0}x{0} unitary", state.dim), got: format!("{0}x{0}", u.dim()) });
    }
    let atoms = state
        .atoms
        .iter()
        .map(|a| Ok(Atom { z: rotate_point(r, &a.z)?, block: a.block.conjugate_by(u) }))
        .collect::<Result<Vec<_>>>()?;
    HybridStateAtomic::new(atoms)
}

/// Serialized grid geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum GridRecord {
    Uniform { axes: Vec<crate::phase_space::Axis> },
    Cells { points: Vec<PhaseSpacePoint>, cell_volume: f64 },
}

impl GridRecord {
    pub fn of(grid: &PhaseSpaceGrid) -> Self {
        match grid.layout() {
            GridLayout::Uniform { axes } => Self::Uniform { axes: axes.clone() },
            GridLayout::Cells => Self::Cells { points: grid.points().to_vec(), cell_volume: grid.cell_volume() },
        }
    }

    pub fn build(&self) -> Result<PhaseSpaceGrid> {
        match self {
            Self::Uniform { axes } => crate::phase_space::build_grid(axes),
            Self::Cells { points, cell_volume } => PhaseSpaceGrid::from_cells(points.clone(), *cell_volume),
        }
    }
}

/// JSON checkpoint layout for either representation. Matrices are rows of
/// `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateRecord {
    Grid { grid: GridRecord, dim: usize, blocks: Vec<DenseOperator> },
    Atomic { dim: usize, atoms: Vec<Atom> },
}

impl StateRecord {
    pub fn from_grid(state: &HybridStateGrid) -> Self {
        Self::Grid { grid: GridRecord::of(&state.grid), dim: state.dim, blocks: state.blocks.clone() }
    }

    pub fn from_atomic(state: &HybridStateAtomic) -> Self {
        Self::Atomic { dim: state.dim, atoms: state.atoms.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state records serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("state JSON: {e}")))
    }

    pub fn into_grid(self) -> Result<HybridStateGrid> {
        match self {
            Self::Grid { grid, blocks, .. } => HybridStateGrid::new(Arc::new(grid.build()?), blocks),
            Self::Atomic { .. } => Err(Error::Config("expected a grid state, found an atomic one".into())),
        }
    }

    pub fn into_atomic(self) -> Result<HybridStateAtomic> {
        match self {
            Self::Atomic { atoms, .. } => HybridStateAtomic::new(atoms),
            Self::Grid { .. } => Err(Error::Config("expected an atomic state, found a grid one".into())),
        }
    }
}
