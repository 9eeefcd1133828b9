#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod elliptical;
pub mod error;
pub mod estimator;
pub mod functional;
pub mod json;
pub mod linalg;
pub mod montecarlo;
pub mod quadrature;

pub use error::{McdError, Result};
