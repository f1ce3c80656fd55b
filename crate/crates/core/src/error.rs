use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("transition index {index} out of range for dataset of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("A-hat is singular (condition estimate {condition:.3e})")]
    SingularModel { condition: f64 },

    #[error("C-hat is not positive definite (min eigenvalue {min_eig:.3e}, max {max_eig:.3e})")]
    NonPdCovariance { min_eig: f64, max_eig: f64 },

    #[error(
        "G has complex eigenvalues (max imaginary part {max_imag:.3e}, tolerance {tolerance:.3e})"
    )]
    ComplexSpectrum { max_imag: f64, tolerance: f64 },

    #[error("eigen-decomposition of G is not usable (reconstruction error {residual:.3e}, min real eigenvalue {min_real:.3e})")]
    DefectiveSpectrum { residual: f64, min_real: f64 },

    #[error("iterate diverged at epoch {epoch} (|theta| = {theta_norm:.3e}, |omega| = {omega_norm:.3e})")]
    Divergence {
        epoch: usize,
        theta_norm: f64,
        omega_norm: f64,
    },

    #[error("policy-induced chain is reducible (fixed-point residual {residual:.3e})")]
    Reducible { residual: f64 },

    #[error("every step-size pair in the grid diverged for solver `{solver}`")]
    AllDiverged { solver: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from the numerics of a run rather than its setup.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularModel { .. }
                | Error::NonPdCovariance { .. }
                | Error::ComplexSpectrum { .. }
                | Error::DefectiveSpectrum { .. }
                | Error::Divergence { .. }
                | Error::Reducible { .. }
                | Error::AllDiverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
