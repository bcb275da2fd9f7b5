use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("deformation gradient has non-positive Jacobian det(F) = {0}")]
    NonPositiveJacobian(f64),
    #[error("eigen-decomposition failed: {0}")]
    EigenFailure(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("domain error in `{op}` at argument {arg}")]
    DomainError { op: &'static str, arg: f64 },
    #[error("operand handle {0} is not on the tape")]
    UnknownOperand(usize),
    #[error("primitive `{op}` expects {expected} operands, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("general-F stress is not defined for incompressible model `{0}`; use a mode-specific path")]
    IncompressibleUnsupported(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("model file format error at line {line}, column {column}: {message}")]
    Format { line: usize, column: usize, message: String },
}

#[derive(Debug, Error)]
pub enum LoadingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("transverse-stretch solve did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no sign change of the transverse stress for stretches in [{lo}, {hi}]")]
    NonPositiveBracket { lo: f64, hi: f64 },
    #[error("applied stretch must be positive, got {0}")]
    InvalidStretch(f64),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("rejection sampler exceeded {0} consecutive rejections")]
    RejectionOverflow(usize),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unknown deformation mode `{token}` at line {line}")]
    UnknownMode { line: usize, token: String },
    #[error("invalid sampling configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch} (record {record:?})")]
    NonFiniteLoss { epoch: usize, record: Option<usize> },
    #[error("degenerate variance: all observed stresses in mode {0} are identical")]
    DegenerateVariance(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loading(#[from] LoadingError),
}
