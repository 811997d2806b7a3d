use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are split into two families: input validation (bad parameters,
/// malformed files, domain violations) and numerical failure (fits that do
/// not converge, singular systems). [`Error::is_numerical`] tells them apart,
/// which the CLI maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("fraction `{name}` = {value} outside its allowed range")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("extra-loss rate would be non-positive: cavity linewidth {omega_c} s^-1 <= output coupling rate {gamma1} s^-1")]
    NonPositiveLoss { omega_c: f64, gamma1: f64 },
    #[error("single-pass conversion must be positive, got {0}")]
    ZeroConversion(f64),
    #[error("pump power must be positive, got {0} W")]
    ZeroPump(f64),
    #[error("g2(0) = {0} is not above 2; the below-threshold model needs super-bunched light")]
    SubThermalG2(f64),
    #[error("pump power {pump} W is at or above threshold {threshold} W")]
    AboveThreshold { pump: f64, threshold: f64 },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error("time-tag stream for channel {0} is empty")]
    EmptyStream(u8),
    #[error("time-tag stream for channel {channel} is not sorted at index {index}")]
    UnsortedInput { channel: u8, index: usize },
    #[error("histogram has no singles totals or acquisition time")]
    MissingTotals,
    #[error("histogram has not been normalized")]
    NotNormalized,
    #[error("no comb structure detected: {0}")]
    NoCombDetected(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("too few data points: {points} for {params} parameters")]
    TooFewPoints { points: usize, params: usize },
    #[error("normal matrix is singular")]
    SingularJacobian,
    #[error("fit did not converge within {0} iterations")]
    MaxIterations(usize),
    #[error("{failed} of {total} Monte Carlo samples failed (limit 1%)")]
    TooManyFailedSamples { failed: usize, total: usize },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tag file version {0}")]
    UnsupportedVersion(u16),
    #[error("channel {channel} is not sorted at record {record}")]
    UnsortedChannel { channel: u8, record: usize },
    #[error("truncated record: {0}")]
    TruncatedRecord(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularJacobian
            | Error::MaxIterations(_)
            | Error::TooManyFailedSamples { .. }
            | Error::NoCombDetected(_) => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Innermost error, unwrapping pipeline stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
