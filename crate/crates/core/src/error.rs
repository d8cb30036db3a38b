use thiserror::Error;

/// Errors raised by the analysis modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("singular point: {0}")]
    SingularPoint(String),
    #[error("expression not representable: {0}")]
    NotRepresentable(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("operator order {0} exceeds the supported maximum of 4")]
    OrderOverflow(usize),
    #[error("membership inconclusive: sampled residual {residual:.3e} (tol {tol:.1e})")]
    Inconclusive { residual: f64, tol: f64 },
    #[error("jet analysis unstable: order {order} gives {at_order:?}, order {next} gives {at_next:?}")]
    JetUnstable {
        order: usize,
        next: usize,
        at_order: (usize, usize, usize),
        at_next: (usize, usize, usize),
    },
    #[error("no stable fiber basis: {0}")]
    NoStableBasis(String),
    #[error("presentations not equivalent: {0}")]
    NotEquivalent(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("frame metric has no symbolic Cholesky factor: {0}")]
    NonSymbolicCholesky(String),
    #[error("partition function violates its support: {0}")]
    SupportViolation(String),
    #[error("field is not a member of the distribution: {0}")]
    NotAMember(String),
    #[error("distribution is not involutive: witness bracket {witness}")]
    NotInvolutive { witness: String },
    #[error("form degree {0} exceeds the presentation rank")]
    DegreeOverflow(usize),
    #[error("pulled back density differs from the target density (defect {0:.3e})")]
    DensityMismatch(f64),
    #[error("coefficient singular on grid: {0}")]
    CoefficientSingularOnGrid(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
