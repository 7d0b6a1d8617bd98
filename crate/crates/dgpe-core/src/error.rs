use thiserror::Error;

/// Errors surfaced by grid construction, operators and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid points per axis must be even and >= 4, got {0}")]
    BadGridSize(usize),
    #[error("box edge lengths must be positive, got {0}")]
    BadBoxLength(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("dipole axis must be a unit vector (|n| = {0})")]
    BadAxis(f64),
    #[error("gaussian widths must be positive, got {0}")]
    BadWidth(f64),
    #[error("gaussian center ({0}) outside the box")]
    CenterOutsideBox(f64),
    #[error("operation requires the canonical dipole axis (0,0,1)")]
    NonCanonicalAxis,
    #[error("convolution output has imaginary residue {residue:.3e} > {limit:.3e}; symbol/lattice bug")]
    ImaginaryResidue { residue: f64, limit: f64 },
    #[error("couplings ({lambda1}, {lambda2}) are not admissible: {condition}")]
    NotAdmissible {
        lambda1: f64,
        lambda2: f64,
        condition: String,
    },
    #[error("functional denominator is not positive ({den:.3e}); field outside the usable cone")]
    NonpositiveDenominator { den: f64 },
    #[error("field is identically zero")]
    ZeroField,
    #[error("frequency omega must be positive, got {0}")]
    BadOmega(f64),
    #[error("symmetrization requires n1 = n2 and L1 = L2")]
    AsymmetricGrid,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("field contains non-finite samples")]
    NonfiniteField,
    #[error("virial diagnostics are disabled for trapped propagation")]
    TrapActive,
    #[error("need at least 3 uniformly spaced diagnostic records, got {0}")]
    InsufficientSnapshots(usize),
    #[error("gaussian shape has non-negative interaction energy; no negative-energy amplitude exists")]
    ShapeNotFocusing,
}

pub type Result<T> = std::result::Result<T, Error>;
