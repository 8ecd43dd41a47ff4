//! Classical phase space `ℝ^{2n}`: points, rotations, uniform grids with
//! midpoint quadrature, and discretized delta distributions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{DenseOperator, C64};

/// A phase-space point `z = (q, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpacePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseSpacePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::Shape {
                expected: "q and p of equal, non-zero length".into(),
                got: format!("|q| = {}, |p| = {}", q.len(), p.len()),
            });
        }
        if q.iter().chain(&p).any(|x| !x.is_finite()) {
            return Err(Error::Validation("phase-space point has non-finite component".into()));
        }
        Ok(Self { q, p })
    }

    pub fn origin(dof: usize) -> Self {
        Self { q: vec![0.0; dof], p: vec![0.0; dof] }
    }

    /// Builds a point from concatenated coordinates `(q₁…qₙ, p₁…pₙ)`.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::Shape { expected: "even number of coordinates".into(), got: coords.len().to_string() });
        }
        let n = coords.len() / 2;
        Self::new(coords[..n].to_vec(), coords[n..].to_vec())
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn coord(&self, i: usize) -> f64 {
        let n = self.dof();
        if i < n {
            self.q[i]
        } else {
            self.p[i - n]
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Orbital angular momentum `q × p`; zero unless `n = 3`.
    pub fn angular_momentum(&self) -> [f64; 3] {
        if self.dof() != 3 {
            return [0.0; 3];
        }
        cross([self.q[0], self.q[1], self.q[2]], [self.p[0], self.p[1], self.p[2]])
    }
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// One grid axis: `count` cells spanning `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.min + (k as f64 + 0.5) * self.spacing()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum GridLayout {
    /// Tensor-product grid; axes are the q-axes followed by the p-axes.
    Uniform { axes: Vec<Axis> },
    /// Explicit list of cells sharing one volume. Used for exact few-cell
    /// discretizations of delta-supported models in high dimension.
    Cells,
}

/// Uniform phase-space discretization with midpoint quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceGrid {
    dof: usize,
    layout: GridLayout,
    cell_volume: f64,
    points: Vec<PhaseSpacePoint>,
}

/// Builds a tensor-product grid, cell centers at `min + (k + ½)·spacing`.
pub fn build_grid(axes: &[Axis]) -> Result<PhaseSpaceGrid> {
    if axes.is_empty() || !axes.len().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "grid needs an even, non-zero number of axes (q-axes then p-axes), got {}",
            axes.len()
        )));
    }
    for (i, a) in axes.iter().enumerate() {
        if a.count == 0 || !(a.min < a.max) || !a.min.is_finite() || !a.max.is_finite() {
            return Err(Error::Config(format!("grid.axes[{i}] is malformed: {a:?}")));
        }
    }
    let total: usize = axes.iter().map(|a| a.count).product();
    let cell_volume = axes.iter().map(Axis::spacing).product();
    let dof = axes.len() / 2;
    let mut points = Vec::with_capacity(total);
    let mut index = vec![0usize; axes.len()];
    for _ in 0..total {
        let coords: Vec<f64> = index.iter().zip(axes).map(|(&k, a)| a.center(k)).collect();
        points.push(PhaseSpacePoint { q: coords[..dof].to_vec(), p: coords[dof..].to_vec() });
        // last axis runs fastest
        for ax in (0..axes.len()).rev() {
            index[ax] += 1;
            if index[ax] < axes[ax].count {
                break;
            }
            index[ax] = 0;
        }
    }
    Ok(PhaseSpaceGrid { dof, layout: GridLayout::Uniform { axes: axes.to_vec() }, cell_volume, points })
}

impl PhaseSpaceGrid {
    /// Explicit cell list; every cell carries the same volume.
    pub fn from_cells(points: Vec<PhaseSpacePoint>, cell_volume: f64) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Config("cell list is empty".into()));
        };
        if !(cell_volume > 0.0) || !cell_volume.is_finite() {
            return Err(Error::Config(format!("cell volume must be positive, got {cell_volume}")));
        }
        let dof = first.dof();
        if points.iter().any(|p| p.dof() != dof) {
            return Err(Error::Config("cells have mixed phase-space dimension".into()));
        }
        Ok(Self { dof, layout: GridLayout::Cells, cell_volume, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn axes(&self) -> Option<&[Axis]> {
        match &self.layout {
            GridLayout::Uniform { axes } => Some(axes),
            GridLayout::Cells => None,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn points(&self) -> &[PhaseSpacePoint] {
        &self.points
    }

    pub fn point(&self, cell: usize) -> &PhaseSpacePoint {
        &self.points[cell]
    }

    /// Index stride of each axis in the lexicographic cell ordering.
    pub fn strides(&self) -> Option<Vec<usize>> {
        let axes = self.axes()?;
        let mut strides = vec![1usize; axes.len()];
        for ax in (0..axes.len().saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * axes[ax + 1].count;
        }
        Some(strides)
    }

    /// Per-axis index of a cell.
    pub fn multi_index(&self, cell: usize) -> Option<Vec<usize>> {
        let axes = self.axes()?;
        let strides = self.strides()?;
        Some(strides.iter().zip(axes).map(|(&s, a)| (cell / s) % a.count).collect())
    }

    /// Cell containing `z` (uniform layout) or the cell centered at `z`
    /// within `1e-9` (explicit cells).
    pub fn locate(&self, z: &PhaseSpacePoint) -> Result<usize> {
        if z.dof() != self.dof {
            return Err(Error::Domain(format!("point has {} degrees of freedom, grid has {}", z.dof(), self.dof)));
        }
        match &self.layout {
            GridLayout::Uniform { axes } => {
                let strides = self.strides().expect("uniform layout");
                let mut cell = 0;
                for (i, (a, s)) in axes.iter().zip(strides).enumerate() {
                    let x = z.coord(i);
                    if x < a.min || x > a.max {
                        return Err(Error::Domain(format!("coordinate {i} = {x} outside [{}, {}]", a.min, a.max)));
                    }
                    let k = (((x - a.min) / a.spacing()).floor() as usize).min(a.count - 1);
                    cell += k * s;
                }
                Ok(cell)
            }
            GridLayout::Cells => self
                .points
                .iter()
                .position(|c| c.distance(z) <= 1e-9)
                .ok_or_else(|| Error::Domain(format!("no cell centered at {z:?}"))),
        }
    }

    /// Number of cells between `cell` and the nearest domain boundary
    /// (0 for boundary cells); `None` for explicit cell lists.
    pub fn cells_from_boundary(&self, cell: usize) -> Option<usize> {
        let axes = self.axes()?;
        let idx = self.multi_index(cell)?;
        Some(idx.iter().zip(axes).map(|(&k, a)| k.min(a.count - 1 - k)).min().unwrap_or(0))
    }
}

/// Real scalar field over a grid, e.g. the classical density `ϱ(z)`.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<PhaseSpaceGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<PhaseSpaceGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: format!("{} values", grid.len()),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<PhaseSpaceGrid>, f: impl Fn(&PhaseSpacePoint) -> f64) -> Self {
        let values = grid.points().iter().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Arc<PhaseSpaceGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Arc<PhaseSpaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `αf + βg` on a shared grid.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        Self { grid: self.grid.clone(), values }
    }

    /// Probability mass within `width` cells of the domain boundary.
    pub fn boundary_mass(&self, width: usize) -> f64 {
        let vol = self.grid.cell_volume();
        (0..self.grid.len())
            .filter(|&c| self.grid.cells_from_boundary(c).is_some_and(|k| k < width))
            .map(|c| self.values[c].abs() * vol)
            .sum()
    }
}

/// Midpoint quadrature `Σ f · dz`, summed in cell order.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// Nearest-cell delta: the containing cell carries `1 / cell_volume`.
pub fn deposit_delta(z0: &PhaseSpacePoint, grid: &Arc<PhaseSpaceGrid>) -> Result<ScalarField> {
    let cell = grid.locate(z0)?;
    let mut f = ScalarField::zeros(grid.clone());
    f.values[cell] = 1.0 / grid.cell_volume();
    Ok(f)
}

/// Orthogonal 3×3 matrix acting on positions and momenta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation3([[f64; 3]; 3]);

impl Rotation3 {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-10 {
                    return Err(Error::Validation(format!("matrix is not orthogonal: (RᵀR)[{i}][{j}] = {dot}")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    /// Rotation by `angle` about the unit `axis`, paired with its spin-½
    /// representative `exp(−i angle n·σ/2)`.
    pub fn about_axis(axis: [f64; 3], angle: f64) -> Result<(Self, DenseOperator)> {
        let norm = (axis.iter().map(|x| x * x).sum::<f64>()).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Normalization(format!("rotation axis has norm {norm}")));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Self::from_quaternion_with_spinor([c, s * axis[0], s * axis[1], s * axis[2]]))
    }

    /// Unit quaternion `(w, x, y, z)` to the rotation matrix and SU(2)
    /// element `w𝕀 − i(xσx + yσy + zσz)`.
    pub(crate) fn from_quaternion_with_spinor(q: [f64; 4]) -> (Self, DenseOperator) {
        let [w, x, y, z] = q;
        let m = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let u = DenseOperator::from_rows(2, &[C64::new(w, -z), C64::new(-y, -x), C64::new(y, -x), C64::new(w, z)])
            .expect("2x2");
        (Self(m), u)
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

/// `(q, p) ↦ (Rq, Rp)` for three classical degrees of freedom.
pub fn rotate_point(r: &Rotation3, z: &PhaseSpacePoint) -> Result<PhaseSpacePoint> {
    if z.dof() != 3 {
        return Err(Error::Validation(format!("rotations need n = 3, point has n = {}", z.dof())));
    }
    let q = r.apply([z.q[0], z.q[1], z.q[2]]);
    let p = r.apply([z.p[0], z.p[1], z.p[2]]);
    Ok(PhaseSpacePoint { q: q.to_vec(), p: p.to_vec() })
}
