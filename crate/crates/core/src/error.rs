use thiserror::Error;

/// Errors shared across the crate's modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not unitary{}", fmt_gate(.gate))]
    NonUnitary { gate: Option<usize> },
    #[error("malformed circuit document: {0}")]
    Schema(String),
    #[error("qubit index out of range in gate {0}")]
    Index(usize),
    #[error("register too large: n = {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("circuit has not been classified")]
    NotClassified,
    #[error("control factor is not a basis state of the gate's control basis")]
    ControlNotInBasis,
    #[error("per-factor overlap fell below threshold on line {line} (modulus {modulus})")]
    PhaseIncoherent { line: usize, modulus: f64 },
    #[error("recorded actions on the line are not diagonal in its basis")]
    NotDiagonal,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_gate(g: &Option<usize>) -> String {
    match g {
        Some(i) => format!(" (gate {i})"),
        None => String::new(),
    }
}
