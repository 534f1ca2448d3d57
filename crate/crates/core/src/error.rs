use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A Hamiltonian failed its coefficient constraints.
    #[error("invalid Hamiltonian: {0}")]
    InvalidHamiltonian(String),

    /// A parameter was outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Structural corruption of a worldline configuration, or a violated
    /// precondition of a structural operation.
    #[error("inconsistent worldline configuration: {0}")]
    Inconsistent(String),

    /// An oracle was asked for more states than its cap allows.
    #[error("enumeration cap exceeded: estimated {estimate:.3e} states > cap {cap}")]
    EnumerationCap { estimate: f64, cap: u64 },

    /// The dense oracle was asked for too many qubits.
    #[error("qubit count {n} exceeds dense-oracle cap {cap}")]
    QubitCap { n: u32, cap: u32 },

    /// The sampler could not find closed-sector configurations within its
    /// patience window; points at a sector-ratio anomaly.
    #[error("sector anomaly: {0}")]
    SectorAnomaly(String),

    /// A time series was too short (or too degenerate) for the requested
    /// statistic.
    #[error("time series unusable: {0}")]
    Series(String),

    /// A transition matrix failed its reversibility precondition.
    #[error("chain is not reversible: {0}")]
    NotReversible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
