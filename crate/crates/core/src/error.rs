use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite potential sample at x = {x}")]
    NonFinitePotential { x: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("contour too close to spectrum: nearest eigenvalue at distance {distance:.3e} (margin {margin:.3e})")]
    ContourTooClose { distance: f64, margin: f64 },
    #[error("branch lost: best overlap {overlap:.3} at s = {s}")]
    BranchLost { overlap: f64, s: f64 },
    #[error("resonance not found: nearest candidate {distance:.3e} from seed exceeds capture radius {radius:.3e}")]
    ResonanceNotFound { distance: f64, radius: f64 },
    #[error("no theta plateau: stability {stability:.3e} above threshold {threshold:.3e}; enlarge box or refine grid")]
    NoPlateau { stability: f64, threshold: f64 },
    #[error("fit needs at least 3 inliers, got {0}")]
    TooFewInliers(usize),
    #[error("gap assumption violated: gap {gap:.3e} < {required:.3e} at s = {s}")]
    GapViolated { gap: f64, required: f64, s: f64 },
    #[error("dimension {dim} exceeds oracle cap {cap}; coarsen the grid")]
    OracleCap { dim: usize, cap: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("fit region empty: {0}")]
    EmptyFitRegion(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
