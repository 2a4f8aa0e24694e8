use std::fmt;

/// A single configuration problem, tagged with the dotted path of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_violations(.0))]
    Config(Vec<Violation>),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("step {step} out of range for {steps} steps")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("degenerate input: standard deviation {std:e} below tolerance")]
    DegenerateStd { std: f64 },
    #[error("stream labels must be non-empty")]
    EmptyLabels,
    #[error("embedding has no semantic tokens (eos_index = 0)")]
    NoSemanticTokens,
    #[error("expected {expected} per-layer embeddings, got {got}")]
    LayerCount { expected: usize, got: usize },
    #[error("noise level sigma is zero")]
    ZeroSigma,
    #[error("signal level alpha is zero")]
    ZeroAlpha,
    #[error("within-component std must be positive for a density")]
    ZeroWithinStd,
    #[error("grid {height}x{width} too small for a spectral split (need at least 4x4)")]
    GridTooSmall { height: usize, width: usize },
    #[error("spectral band ({lo}, {hi}] contains no frequency bins")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("weights must be non-negative and sum to 1 (sum = {sum})")]
    BadNormalization { sum: f64 },
    #[error("non-finite weight for particle {particle}")]
    NonFiniteWeight { particle: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("zero-energy input")]
    ZeroEnergy,
    #[error("diversity needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("budget {requested} unreachable; nearest achievable: {nearest:?}")]
    UnreachableBudget { requested: usize, nearest: Vec<usize> },
    #[error("invalid step order: from {from} to {to}")]
    StepOrder { from: usize, to: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
