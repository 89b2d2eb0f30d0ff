//! Certification and construction of multiplier weights for wave equations
//! with variable coefficients.
//!
//! A problem is a symmetric coefficient field `A(x)`, a bounded region and,
//! optionally, a weight `d(x)`. The toolkit checks the pointwise quadratic
//! inequality on a sample grid, builds exponential weights when the
//! coefficients have the right monotonicity, evaluates the curvature of 2D
//! diagonal metrics and traces the rays of the principal symbol.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coeff;
pub mod condition;
pub mod config;
pub mod curvature;
pub mod domain;
pub mod expr;
pub mod linalg;
pub mod rays;
pub mod report;
pub mod weight;

pub use coeff::CoefficientField;
pub use condition::{check_condition, ConditionReport, Verdict, WeightFunction};
pub use config::Config;
pub use domain::{Region, SampleGrid};
pub use expr::{ConstantTable, Expression};
pub use weight::{SignCase, WeightCertificate};
