use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transform is singular (|det| = {det:e})")]
    SingularTransform { det: f64 },
    #[error("trilinear sampling requested on a label volume")]
    ModeMismatch,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("no foreground labels in volume")]
    EmptyForeground,
    #[error("ground-truth coordinates are required by the oracle predictor")]
    MissingGroundTruth,
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("photo has no foreground pixels")]
    AllBackground,
    #[error("pixel size must be positive, got {0}")]
    NonpositivePixelSize(f64),
    #[error("insufficient points: {0}")]
    InsufficientPoints(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("reference volume for label {0} is zero")]
    ZeroReferenceVolume(u32),
    #[error("input vector is constant or too short")]
    ConstantInput,
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("unsupported NIfTI file: {0}")]
    UnsupportedNifti(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
