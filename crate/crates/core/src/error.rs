use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("volatility fell below the floor {floor:e} at t = {time}")]
    VolVanished { time: f64, floor: f64 },

    #[error("state left the finite reals at t = {time}")]
    NonFinite { time: f64 },

    #[error("alpha approximants require a simulated path with retained Brownian increments")]
    AlphaUnavailable,

    #[error("volatility path is not available for ingested data")]
    VolatilityUnavailable,

    #[error("irregular grid: {0}")]
    IrregularGrid(String),

    #[error("too few observations: got {got}, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("bad parameter: {0}")]
    BadParam(String),

    #[error("kernel `{name}` violates its {claim} claim")]
    KernelClaim { name: String, claim: &'static str },

    #[error("window holds {available} increments, order {order} needs at least {order}")]
    WindowTooShort { available: usize, order: usize },

    #[error("enumeration of order {order} over {m} increments exceeds the guard (max {max_n}); enable the override to proceed")]
    EnumerationGuard { order: usize, m: usize, max_n: usize },

    #[error("quadrature needs {points} points, budget is {budget}")]
    QuadratureBudget { points: u128, budget: u128 },

    #[error("quadrature refinement difference {difference:e} exceeds {tolerance:e}")]
    NonConvergent { difference: f64, tolerance: f64 },

    #[error("kernel `{0}` is not even in each coordinate")]
    NotEven(String),

    #[error("kernel `{0}` lacks the smoothness the central limit theorem needs")]
    NotSmooth(String),

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("experiment needs {needed:e} kernel evaluations, ceiling is {ceiling:e}")]
    BudgetExceeded { needed: f64, ceiling: f64 },

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("procedure requires observations on [0, 1], got horizon {0}")]
    HorizonNotUnit(f64),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::VolVanished { .. } => "VolVanished",
            Error::NonFinite { .. } => "NonFinite",
            Error::AlphaUnavailable => "AlphaUnavailable",
            Error::VolatilityUnavailable => "VolatilityUnavailable",
            Error::IrregularGrid(_) => "IrregularGrid",
            Error::TooShort { .. } => "TooShort",
            Error::UnknownKernel(_) => "UnknownKernel",
            Error::UnknownModel(_) => "UnknownModel",
            Error::BadParam(_) => "BadParam",
            Error::KernelClaim { .. } => "KernelClaim",
            Error::WindowTooShort { .. } => "WindowTooShort",
            Error::EnumerationGuard { .. } => "EnumerationGuard",
            Error::QuadratureBudget { .. } => "QuadratureBudget",
            Error::NonConvergent { .. } => "NonConvergent",
            Error::NotEven(_) => "NotEven",
            Error::NotSmooth(_) => "NotSmooth",
            Error::DegenerateDenominator(_) => "DegenerateDenominator",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::HorizonNotUnit(_) => "HorizonNotUnit",
        }
    }
}
