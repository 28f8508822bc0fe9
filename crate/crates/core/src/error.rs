use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected}, got {got}")]
    Dimension {
        field: String,
        expected: String,
        got: String,
    },

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e} > tol {tol:.3e})")]
    NotSymmetric { asymmetry: f64, tol: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },

    #[error("{0}")]
    Invalid(String),

    #[error("matrix is not Schur stable (spectral radius {0:.6})")]
    NotSchurStable(f64),

    #[error("{what} did not converge after {iters} iterations")]
    NoConvergence { what: &'static str, iters: usize },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("system not detectable or ill-conditioned: {0}")]
    NotDetectable(String),

    #[error("system is not stabilizable")]
    NotStabilizable,

    #[error("Assumption 2 infeasible: |C2 P - C1|_F = {residual_cp:.3e}, |P A1 - A2 P - B2 Q|_F = {residual_paq:.3e}")]
    InterfaceInfeasible { residual_cp: f64, residual_paq: f64 },

    #[error("synthesis infeasible: {0}")]
    SynthesisInfeasible(String),

    #[error("malformed SDP: {0}")]
    MalformedSdp(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(field: impl Into<String>, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        field: field.into(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
