use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degree distribution has no entries")]
    EmptyDistribution,
    #[error("negative mass {mass} on degree {degree}")]
    NegativeMass { degree: u32, mass: f64 },
    #[error("degree distribution has zero total mass")]
    ZeroTotalMass,
    #[error("degree {degree} is outside 1..={max_degree}")]
    InvalidDegree { degree: u32, max_degree: u32 },
    #[error("argument {value} outside the domain {domain}")]
    DomainError { value: f64, domain: &'static str },
    #[error("cannot parse degree distribution {input:?}: {reason}")]
    Parse { input: String, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("Poisson truncation at c_max = {cap} leaves tail mass {tail:e}")]
    TruncationError { cap: usize, tail: f64 },
    #[error("invalid threshold bracket: {0}")]
    BracketError(String),
    #[error("mean degree {target} is not attainable with degrees {min}..={max}")]
    InfeasibleConstraint { target: f64, min: u32, max: u32 },
    #[error("degree {degree} exceeds the {slots} slots of the frame")]
    DegreeExceedsSlots { degree: u32, slots: usize },
    #[error("{0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("frame needs at least one slot, got {0}")]
    ZeroSlots(f64),
    #[error("user {user} already subtracted from slot {slot}")]
    DoubleSubtraction { user: usize, slot: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
