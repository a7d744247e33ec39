use thiserror::Error;

/// Errors surfaced by model construction, solvers and orchestration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("process defined on {got} nodes, model has {want}")]
    ProcessShape { got: usize, want: usize },

    #[error("level {level} has no children (terminal level is {terminal})")]
    NoChildren { level: usize, terminal: usize },

    #[error("invalid stopping time: {0}")]
    InvalidStoppingTime(String),

    #[error("enumeration would produce {count} stopping times, budget is {budget}")]
    EnumerationOverflow { count: String, budget: u64 },

    #[error("step size violates mu*dt < 1 (mu*dt = {mu_dt})")]
    StepSize { mu_dt: f64 },

    #[error("implicit step bracketing failed after expansion")]
    Bracketing,

    #[error("terminal condition violates barrier at leaf {leaf}: {detail}")]
    TerminalViolation { leaf: usize, detail: String },

    #[error("barriers not strictly separated: {0}")]
    SeparationViolated(String),

    #[error("generator fails its declared monotonicity bound: {0}")]
    GeneratorBound(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("monotonicity violated at node (level {level}, index {index}) for pair ({n}, {m}): {detail}")]
    MonotonicityViolation {
        level: usize,
        index: usize,
        n: u64,
        m: u64,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
