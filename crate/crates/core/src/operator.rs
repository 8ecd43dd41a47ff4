//! Finite-dimensional operator algebra.
//!
//! Dense complex matrices for the quantum sector: the Hilbert–Schmidt
//! orthogonal su(d) basis, (anti)commutators, the Pauli twirl, spin-½
//! rotations and Hermitian eigendecomposition. Dimensions up to 8 are the
//! intended regime.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

/// Relative Hermiticity tolerance used when no explicit tolerance is given.
pub const HERMITIAN_TOL: f64 = 1e-12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// A dense `d × d` complex operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator(CMatrix);

impl DenseOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Shape {
                expected: "non-empty square matrix".into(),
                got: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("operator has non-finite entries".into()));
        }
        Ok(Self(matrix))
    }

    /// Wraps a matrix that is known to be square.
    pub(crate) fn from_matrix(matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), matrix.ncols());
        Self(matrix)
    }

    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Shape {
                expected: format!("{} entries", dim * dim),
                got: format!("{} entries", entries.len()),
            });
        }
        Self::new(CMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_real_rows(dim: usize, entries: &[f64]) -> Result<Self> {
        let c: Vec<C64> = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_rows(dim, &c)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    /// `|k⟩⟨k|` in dimension `dim`.
    pub fn projector(dim: usize, k: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        m[(k, k)] = ONE;
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius (Hilbert–Schmidt) norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `max|A − A†|`.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermiticity_residual() <= rel_tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    /// `Tr[A B]`.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let d = self.dim();
        let mut acc = ZERO;
        for i in 0..d {
            for k in 0..d {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    /// Hilbert–Schmidt inner product `Tr[A† B]`.
    pub fn hs_inner(&self, other: &Self) -> C64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// `U A U†`.
    pub fn conjugate_by(&self, unitary: &Self) -> Self {
        Self(&unitary.0 * &self.0 * unitary.0.adjoint())
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Shape {
                expected: format!("{0}x{0}", self.dim()),
                got: format!("{0}x{0}", other.dim()),
            });
        }
        Ok(())
    }
}

impl Serialize for DenseOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        operator_to_pairs(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DenseOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        operator_from_pairs(&rows).map_err(serde::de::Error::custom)
    }
}

/// Rows of `[re, im]` pairs, the JSON layout for matrices.
pub fn operator_to_pairs(op: &DenseOperator) -> Vec<Vec<[f64; 2]>> {
    let d = op.dim();
    (0..d).map(|i| (0..d).map(|j| [op.0[(i, j)].re, op.0[(i, j)].im]).collect()).collect()
}

pub fn operator_from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<DenseOperator> {
    let d = rows.len();
    let mut entries = Vec::with_capacity(d * d);
    for row in rows {
        if row.len() != d {
            return Err(Error::Shape { expected: format!("{d} columns"), got: format!("{} columns", row.len()) });
        }
        entries.extend(row.iter().map(|&[re, im]| C64::new(re, im)));
    }
    DenseOperator::from_rows(d, &entries)
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&DenseOperator> for &DenseOperator {
            type Output = DenseOperator;
            fn $method(self, rhs: &DenseOperator) -> DenseOperator {
                DenseOperator(&self.0 $op &rhs.0)
            }
        }
        impl $trait<DenseOperator> for DenseOperator {
            type Output = DenseOperator;
            fn $method(self, rhs: DenseOperator) -> DenseOperator {
                DenseOperator(self.0 $op rhs.0)
            }
        }
    };
}

impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);
impl_binop!(Mul, mul, *);

impl Neg for DenseOperator {
    type Output = DenseOperator;
    fn neg(self) -> DenseOperator {
        DenseOperator(-self.0)
    }
}

/// The Pauli matrices `[σx, σy, σz]`.
pub fn pauli() -> [DenseOperator; 3] {
    let o = ZERO;
    let l = ONE;
    [
        DenseOperator(CMatrix::from_row_slice(2, 2, &[o, l, l, o])),
        DenseOperator(CMatrix::from_row_slice(2, 2, &[o, -I, I, o])),
        DenseOperator(CMatrix::from_row_slice(2, 2, &[l, o, o, -l])),
    ]
}

/// Hilbert–Schmidt orthogonal operator basis `{L₀ = 𝕀, L_α}`.
#[derive(Clone, Debug)]
pub struct OperatorBasis {
    dim: usize,
    ops: Vec<DenseOperator>,
    hs_norm: f64,
}

impl OperatorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis operators, `d²`.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[DenseOperator] {
        &self.ops
    }

    pub fn op(&self, mu: usize) -> &DenseOperator {
        &self.ops[mu]
    }

    /// The common value `c` of `Tr[L_α† L_α]` for `α ≥ 1`.
    pub fn hs_norm(&self) -> f64 {
        self.hs_norm
    }

    /// Gram matrix `Tr[L_μ† L_ν]` over the whole basis.
    pub fn gram(&self) -> CMatrix {
        let n = self.ops.len();
        CMatrix::from_fn(n, n, |a, b| self.ops[a].hs_inner(&self.ops[b]))
    }

    /// Coefficients of `A = Σ_μ a_μ L_μ`.
    pub fn decompose(&self, a: &DenseOperator) -> Vec<C64> {
        self.ops
            .iter()
            .enumerate()
            .map(|(mu, l)| {
                let norm = if mu == 0 { self.dim as f64 } else { self.hs_norm };
                l.hs_inner(a) / norm
            })
            .collect()
    }
}

/// Generalized Gell-Mann basis of su(d) with `Tr[L_α L_β] = 2δ_αβ`.
///
/// Ordering: for every pair `j < k` the symmetric then antisymmetric member,
/// followed by the `d − 1` diagonal generators. For `d = 2` this is
/// `{𝕀, σx, σy, σz}`.
pub fn make_su_basis(d: usize) -> Result<OperatorBasis> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!("su(d) basis needs d >= 2, got {d}")));
    }
    let mut ops = vec![DenseOperator::identity(d)];
    for j in 0..d {
        for k in (j + 1)..d {
            let mut sym = CMatrix::zeros(d, d);
            sym[(j, k)] = ONE;
            sym[(k, j)] = ONE;
            ops.push(DenseOperator(sym));
            let mut anti = CMatrix::zeros(d, d);
            anti[(j, k)] = -I;
            anti[(k, j)] = I;
            ops.push(DenseOperator(anti));
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut diag = CMatrix::zeros(d, d);
        for j in 0..l {
            diag[(j, j)] = C64::new(norm, 0.0);
        }
        diag[(l, l)] = C64::new(-(l as f64) * norm, 0.0);
        ops.push(DenseOperator(diag));
    }
    Ok(OperatorBasis { dim: d, ops, hs_norm: 2.0 })
}

pub fn commutator(a: &DenseOperator, b: &DenseOperator) -> Result<DenseOperator> {
    a.check_same_dim(b)?;
    Ok(DenseOperator(&a.0 * &b.0 - &b.0 * &a.0))
}

/// `[A, B]₊ = AB + BA`.
pub fn anticommutator(a: &DenseOperator, b: &DenseOperator) -> Result<DenseOperator> {
    a.check_same_dim(b)?;
    Ok(DenseOperator(&a.0 * &b.0 + &b.0 * &a.0))
}

/// `ρ + σx ρ σx + σy ρ σy + σz ρ σz`, which equals `2 Tr[ρ] 𝕀`.
pub fn pauli_twirl(rho: &DenseOperator) -> Result<DenseOperator> {
    if rho.dim() != 2 {
        return Err(Error::InvalidDimension(format!("pauli twirl acts on qubits, got dimension {}", rho.dim())));
    }
    let mut acc = rho.0.clone();
    for s in pauli() {
        acc += &s.0 * &rho.0 * &s.0;
    }
    Ok(DenseOperator(acc))
}

/// Spin-½ representation `exp(−i θ n·σ / 2)` of the rotation by `angle` about `axis`.
pub fn rotation_unitary(axis: [f64; 3], angle: f64) -> Result<DenseOperator> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Normalization(format!("rotation axis has norm {norm}")));
    }
    let (s, c) = (angle / 2.0).sin_cos();
    let [nx, ny, nz] = axis;
    // cos(θ/2) 𝕀 − i sin(θ/2) n·σ
    let m = CMatrix::from_row_slice(
        2,
        2,
        &[C64::new(c, -s * nz), C64::new(-s * ny, -s * nx), C64::new(s * ny, -s * nx), C64::new(c, s * nz)],
    );
    Ok(DenseOperator(m))
}

/// Eigendecomposition of a Hermitian operator; eigenvalues ascending,
/// eigenvectors as the columns of a unitary matrix.
pub fn eig_hermitian(a: &DenseOperator) -> Result<(Vec<f64>, CMatrix)> {
    if !a.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::ContractViolation(format!(
            "eig_hermitian on non-Hermitian input (residual {:e})",
            a.hermiticity_residual()
        )));
    }
    Ok(eig_sorted(a.hermitian_part().0))
}

fn eig_sorted(m: CMatrix) -> (Vec<f64>, CMatrix) {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Smallest eigenvalue of the Hermitian part.
pub fn min_eigenvalue(a: &DenseOperator) -> f64 {
    let d = a.dim();
    if d == 2 {
        // closed form keeps the per-step monitors cheap
        let h = a.hermitian_part();
        let (p, q) = (h.0[(0, 0)].re, h.0[(1, 1)].re);
        let off = h.0[(0, 1)].norm();
        return 0.5 * (p + q) - (0.25 * (p - q) * (p - q) + off * off).sqrt();
    }
    eig_sorted(a.hermitian_part().0).0[0]
}

/// Outcome of [`validate_density`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub hermiticity_residual: f64,
    pub min_eigenvalue: f64,
    pub trace_deviation: f64,
    pub valid: bool,
}

pub fn validate_density(rho: &DenseOperator, tol: f64) -> DensityReport {
    let herm = rho.hermiticity_residual();
    let min_eig = min_eigenvalue(rho);
    let trace_dev = (rho.trace() - ONE).norm();
    DensityReport {
        hermiticity_residual: herm,
        min_eigenvalue: min_eig,
        trace_deviation: trace_dev,
        valid: min_eig >= -tol && trace_dev <= tol && herm <= tol.max(HERMITIAN_TOL),
    }
}

/// `(|0⟩ + |1⟩)/√2` projector, handy for tests and demos.
pub fn plus_state() -> DenseOperator {
    let h = C64::new(0.5, 0.0);
    DenseOperator(CMatrix::from_row_slice(2, 2, &[h, h, h, h]))
}
