use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("window half-width {0} is below the minimum of 4")]
    WindowTooSmall(usize),
    #[error("space mismatch: operator expects {expected:?}, state lives in {found:?}")]
    SpaceMismatch {
        expected: crate::op::Space,
        found: crate::op::Space,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state in {0:?} is not an element of a direct sum")]
    NotDirectSum(crate::op::Space),
    #[error("operator is not square on a single space")]
    NotSquare,
    #[error("factorization hit pivot {pivot:e} below threshold {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },
    #[error("{what} did not converge after {iterations} iterations (last change {last:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("coin at site {site} deviates by {deviation:e}, above the declared bound {bound:e}")]
    DecayViolated { site: i64, deviation: f64, bound: f64 },
    #[error("short-range condition violated: {0}")]
    ShortRangeViolated(String),
    #[error("angle {theta} lies within {radius} rad of threshold {threshold}")]
    ThresholdProximity {
        theta: f64,
        threshold: f64,
        radius: f64,
    },
    #[error("evolution would wrap around the window: need half-width at least {required}, have {available}")]
    WrapAround { required: usize, available: usize },
    #[error("no Cayley phase avoids the spectrum")]
    CayleyPhase,
    #[error("branch tracking failed: {0}")]
    BranchTracking(String),
    #[error("wave packet does not fit: {0}")]
    PacketTooWide(String),
    #[error("boundary limit not resolved: {0}")]
    LimitNotResolved(String),
    #[error("solve failed at quadrature node {node} (theta = {theta}): {source}")]
    AtNode {
        node: usize,
        theta: f64,
        source: alloc::boxed::Box<Error>,
    },
}
