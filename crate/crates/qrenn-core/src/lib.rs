//! Simulator and analysis toolkit for controlled-embedding recurrent quantum
//! circuits.
//!
//! The crate covers circuit assembly and training, exact gradients, numerical
//! dynamical-Lie-algebra analysis with analytic gradient-variance predictors,
//! eigenspace-overlap diagnostics, dataset generation, and the experiment
//! harnesses driven by the `qrenn` command-line tool.
//!
//! The numeric core is generic over the real scalar type (`f32`/`f64`); the
//! `*64` aliases below cover the common double-precision case.

pub mod bench;
pub mod data;
pub mod dla;
pub mod engine;
pub mod error;
pub mod grad;
pub mod model;
pub mod numerics;
pub mod overlap;
pub mod qstate;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Scalar, C};

/// Double-precision aliases for the core types.
pub type ComplexMatrix64 = numerics::ComplexMatrix<f64>;
pub type HermitianOperator64 = numerics::HermitianOperator<f64>;
pub type UnitaryOperator64 = numerics::UnitaryOperator<f64>;
pub type QuantumState64 = qstate::QuantumState<f64>;
pub type ParameterVector64 = model::ParameterVector<f64>;
pub type EmbeddedData64 = model::EmbeddedData<f64>;
pub type LieBasis64 = dla::LieBasis<f64>;
pub type JointEigenstructure64 = dla::JointEigenstructure<f64>;
pub type DlaDecomposition64 = dla::DlaDecomposition<f64>;
