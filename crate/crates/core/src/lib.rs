//! Heterophily analysis toolkit: homophily metrics built on a post-aggregation
//! similarity matrix, spectral filterbank operators, a seeded synthetic graph
//! generator with closed-form oracles, and adaptive channel-mixing GNNs
//! trained through a small reverse-mode autodiff engine.
//!
//! Core numerics are generic over the scalar type: `f64` for training and
//! reporting, exact rationals where label algebra must be exact.

pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod reference;
pub mod filters;
pub mod graph;
pub mod harness;
pub mod mat;
pub mod scalar;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use filters::{AffinityKind, HighpassBase, LaplacianKind, Operator, OperatorKind};
pub use graph::{DegreeVector, Graph, Violation};
pub use mat::Mat;
pub use scalar::{ratio, rational_to_f64, Rational, RealScalar, Scalar};

/// Concrete matrix aliases for the two scalar instantiations used throughout.
pub type Mat64 = Mat<f64>;
pub type MatQ = Mat<Rational>;
pub type Op64 = Operator<f64>;
pub type OpQ = Operator<Rational>;
