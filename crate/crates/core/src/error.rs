use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("incomplete profile table: {0}")]
    IncompleteProfileTable(String),
    #[error("payoff out of range: profile {profile:?}, player {player}, value {value}")]
    PayoffOutOfRange {
        profile: Vec<usize>,
        player: usize,
        value: f64,
    },
    #[error("probability out of range: profile {profile:?}, value {value}")]
    ProbabilityOutOfRange { profile: Vec<usize>, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid mixed profile: {0}")]
    InvalidProfile(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not quitting-absorbing: {0}")]
    NotQuittingAbsorbing(String),
    #[error("cannot perturb within epsilon {0}")]
    CannotPerturb(f64),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("dimension too large: n = {0}")]
    DimensionTooLarge(usize),
    #[error("not L-shaped")]
    NotLShaped,
    #[error("not spotted")]
    NotSpotted,
    #[error("not generic: {0}")]
    NotGeneric(String),
    #[error("profile is absorbing: {0:?}")]
    ProfileIsAbsorbing(Vec<usize>),
    #[error("missing witness for non-absorbing profile {0:?}")]
    MissingWitness(Vec<usize>),
    #[error("player {0} has no quitting action")]
    NoQuittingAction(usize),
    #[error("no quitting actions")]
    NoQuittingActions,
    #[error("no equilibrium found at tol {tol}; best residual {best_residual}")]
    NoEquilibrium { tol: f64, best_residual: f64 },
    #[error("sequence too short")]
    SequenceTooShort,
    #[error("not QL")]
    NotQl,
    #[error("not NQL")]
    NotNql,
    #[error("path trace lost at theta {0}")]
    PathTraceLost(f64),
    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),
    #[error("malformed strategy: {0}")]
    MalformedStrategy(String),
    #[error("unsupported game class: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
