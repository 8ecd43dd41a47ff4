//! Seeded random sampling of operators, states and rotations.
//!
//! Everything draws from a ChaCha stream so a fixed seed reproduces the
//! same samples on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::operator::{CMatrix, DenseOperator, C64};
use crate::phase_space::Rotation3;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal sample (Box–Muller).
pub fn normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Ginibre matrix with independent standard complex normal entries.
pub fn random_complex<R: Rng + ?Sized>(r: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(normal(r), normal(r)) * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn random_hermitian<R: Rng + ?Sized>(r: &mut R, d: usize) -> DenseOperator {
    let g = random_complex(r, d, d);
    DenseOperator::from_matrix((&g + g.adjoint()) * C64::new(0.5, 0.0))
}

/// Positive semidefinite `G G†` scaled by `scale / d`.
pub fn random_psd<R: Rng + ?Sized>(r: &mut R, d: usize, scale: f64) -> CMatrix {
    let g = random_complex(r, d, d);
    &g * g.adjoint() * C64::new(scale / d as f64, 0.0)
}

/// Density matrix drawn from the Hilbert–Schmidt ensemble.
pub fn random_density<R: Rng + ?Sized>(r: &mut R, d: usize) -> DenseOperator {
    let m = random_psd(r, d, 1.0);
    let tr = m.trace();
    DenseOperator::from_matrix(m / tr)
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn random_unitary<R: Rng + ?Sized>(r: &mut R, d: usize) -> DenseOperator {
    let qr = random_complex(r, d, d).qr();
    let (q, rr) = qr.unpack();
    let phases = CMatrix::from_fn(d, d, |i, j| {
        if i == j {
            let z = rr[(i, i)];
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        } else {
            C64::new(0.0, 0.0)
        }
    });
    DenseOperator::from_matrix(q * phases)
}

/// Haar-random rotation together with its spin-½ representative.
pub fn random_rotation<R: Rng + ?Sized>(r: &mut R) -> (Rotation3, DenseOperator) {
    let mut q = [normal(r), normal(r), normal(r), normal(r)];
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= n);
    Rotation3::from_quaternion_with_spinor(q)
}
