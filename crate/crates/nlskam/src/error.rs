use thiserror::Error;

/// Error type shared by the whole pipeline.
///
/// The CLI maps each variant to a stable machine-readable class tag on
/// stderr, so callers can distinguish a resonant parameter point from a
/// genuine failure.
#[derive(Error, Debug)]
pub enum KamError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("series built over different site configurations")]
    SiteMismatch,

    #[error("model error: {0}")]
    Model(String),

    #[error(
        "resonance in class {class} at k={k:?} kt={kt:?}{} : |divisor| = {divisor:.3e} < bound {bound:.3e}",
        match (n, m) {
            (Some(n), Some(m)) => format!(" n={n:?} m={m:?}"),
            (Some(n), None) => format!(" n={n:?}"),
            _ => String::new(),
        }
    )]
    Resonance {
        class: &'static str,
        k: Vec<i32>,
        kt: Vec<i32>,
        n: Option<Vec<i32>>,
        m: Option<Vec<i32>>,
        divisor: f64,
        bound: f64,
    },

    #[error("lie series not contracting at order {order}: term norm {norm:.3e}")]
    Divergence { order: usize, norm: f64 },

    #[error("homological residual {residual:.3e} exceeds {tolerance:.3e} (relative to ||X_R|| = {r_norm:.3e})")]
    Residual {
        residual: f64,
        tolerance: f64,
        r_norm: f64,
    },

    #[error("kam iteration stopped: {0}")]
    NonContraction(String),

    #[error("integrator instability: {0}")]
    Instability(String),

    #[error("frequency extraction inconclusive: {0}")]
    Inconclusive(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl KamError {
    /// Stable one-word class tag for the diagnostic stream.
    pub fn class_tag(&self) -> &'static str {
        match self {
            KamError::Config(_) => "config",
            KamError::SiteMismatch => "site-mismatch",
            KamError::Model(_) => "model",
            KamError::Resonance { .. } => "resonance",
            KamError::Divergence { .. } => "divergence",
            KamError::Residual { .. } => "residual",
            KamError::NonContraction(_) => "non-contraction",
            KamError::Instability(_) => "instability",
            KamError::Inconclusive(_) => "inconclusive",
            KamError::Io(_) => "io",
            KamError::Parse(_) => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, KamError>;
