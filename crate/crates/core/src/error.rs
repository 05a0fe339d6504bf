use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("site ({0}, {1}) is outside the lattice")]
    InvalidSite(i32, i32),
    #[error("plaquette ({0}, {1}) is outside the plaquette index set")]
    InvalidPlaquette(i32, i32),
    #[error("invalid lattice specification: {0}")]
    InvalidSpec(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("defect configuration is not in the image of the defect map")]
    ParityViolation,
    #[error("enumeration budget exceeded: {states} states > budget {budget}")]
    BudgetExceeded { states: u64, budget: u64 },
    #[error("event budget of {0} events exhausted")]
    BudgetExhausted(u64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("degenerate test function (constant or zero Dirichlet form)")]
    DegenerateTestFunction,
    #[error("empty level set")]
    EmptyLevelSet,
    #[error("configuration is not a ground state")]
    NotGroundState,
    #[error("ground states are not neighbours or antipodes in the code order")]
    NotNeighbours,
    #[error("configuration is off the path complex")]
    OffPathComplex,
    #[error("occupancy vector admits no class")]
    PartitionViolation,
    #[error("rectangle has fewer than three corner defects")]
    UntypedRectangle,
    #[error("empty defect set")]
    EmptyDefectSet,
    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
