//! Pseudospectral ground states and dynamics for the dipolar
//! Gross-Pitaevskii equation on a periodic box.
//!
//! The crate computes standing-wave profiles by minimizing a
//! scale-invariant quotient functional, rescales minimizers to a
//! prescribed frequency, checks the integral identities any such solution
//! must satisfy, and propagates states in time with conservation, virial
//! and blow-up diagnostics.

pub mod dynamics;
pub mod error;
mod fft;
pub mod functionals;
pub mod grid;
pub mod ground_state;
pub mod kernel;

pub use error::{Error, Result};
pub use functionals::{Admissibility, Couplings, CouplingBranch, EnergyBreakdown};
pub use grid::{ComplexField, Grid, RealField, Spectrum};
pub use ground_state::{GroundState, MinimizerConfig, VerificationReport};
pub use kernel::{DipoleAxis, SpectralKernel};
