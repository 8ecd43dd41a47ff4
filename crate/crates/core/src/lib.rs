//! Classical-quantum hybrid dynamics.
//!
//! States are operator-valued densities `ρ̂(z)` on classical phase space.
//! They evolve under completely positive, trace-preserving master
//! equations that couple a quantum system to classical degrees of freedom.
//! The crate provides the operator algebra, phase-space grids, hybrid
//! states, the generator and its adjoint, time propagation, spectral
//! analysis and conservation audits, plus a worked toy model (a qubit
//! coupled to a classical particle whose total angular momentum decays even
//! though the dynamics is rotationally invariant).

pub mod audit;
pub mod error;
pub mod evolution;
pub mod generator;
pub mod models;
pub mod operator;
pub mod phase_space;
pub mod random;
pub mod spectral;
pub mod state;
pub mod toy;

pub use error::{Error, Result};
pub use generator::{AtomicGenerator, CouplingSpec, CouplingSpecBuilder};
pub use operator::{CMatrix, DenseOperator, OperatorBasis, RMatrix, C64};
pub use phase_space::{Axis, PhaseSpaceGrid, PhaseSpacePoint, Rotation3, ScalarField};
pub use state::{HybridObservable, HybridState, HybridStateAtomic, HybridStateGrid};
pub use toy::ToyModelParams;
