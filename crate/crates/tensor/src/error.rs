use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("degenerate divisor in {op}: |d| = {magnitude:e} is below 1e-30")]
    DegenerateDivisor { op: &'static str, magnitude: f64 },

    #[error("singular matrix in {op}: |det| = {det_abs:e}")]
    Singular { op: &'static str, det_abs: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("seed shape {seed:?} does not match output shape {output:?}")]
    SeedShape {
        seed: Vec<usize>,
        output: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;
