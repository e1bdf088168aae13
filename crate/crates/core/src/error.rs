use thiserror::Error;

/// Errors raised by the simulation and fitting layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("degenerate supercell: radius {radius_nm} nm is smaller than one unit cell ({lattice_nm} nm)")]
    DegenerateSupercell { radius_nm: f64, lattice_nm: f64 },

    #[error("concentrations on the {sublattice} sublattice sum to {total} > 1")]
    ConcentrationOverflow { sublattice: String, total: f64 },

    #[error("coincident spins at ({0}, {1}, {2}) nm")]
    CoincidentSpins(f64, f64, f64),

    #[error("unsupported spin {0}: only spin-1/2 species are supported")]
    UnsupportedSpin(f64),

    #[error("time grid must start at 0 and be strictly increasing")]
    BadTimeGrid,

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("missing dataset columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
