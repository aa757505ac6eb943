use thiserror::Error;

use crate::fields::GridMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RvsError {
    #[error("invalid ray interval [{t_near}, {t_far}]")]
    InvalidInterval { t_near: f64, t_far: f64 },

    #[error("invalid density grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field definition: {0}")]
    InvalidField(String),

    #[error("field evaluated to non-finite value {value} at t = {t}")]
    NonFiniteField { t: f64, value: f64 },

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("operation requires a {expected:?} grid, got {found:?}")]
    WrongMode { expected: GridMode, found: GridMode },

    #[error("density {sigma:e} at t = {t} is too small for an implicit gradient")]
    DegenerateGradient { t: f64, sigma: f64 },

    #[error("sample count must be at least 1")]
    EmptySamples,

    #[error("training diverged at step {step}: loss {loss:e} (initial {initial:e})")]
    Divergence {
        step: usize,
        loss: f64,
        initial: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, RvsError>;
