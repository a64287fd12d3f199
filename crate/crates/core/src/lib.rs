//! Closed-system simulator for scaled dipolar spin-1/2 dynamics.
//!
//! Builds secular dipolar (XXZ) Hamiltonians from site geometries, evolves
//! observables under scaled and tilted-frame Floquet sequences, measures
//! polarization and Loschmidt-echo signals, and extracts the time scales
//! T2 (spreading), T3 (decoherence), and T_sigma (perturbation) by nonlinear
//! fitting.

pub mod analysis;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod propagation;
pub mod protocols;
pub mod spin;

pub use error::{Error, Result};
pub use hamiltonian::{PerturbationModel, PerturbationSpec, ScalingSpec};
pub use propagation::{EvolutionMode, StroboscopicPolicy};
pub use protocols::{CurveKind, EchoCurve, Scheme};
pub use spin::{Axis, Operator, SpinSystem};
