//! Variational reaction-diffusion layers on 2-D lattices.
//!
//! The forward pass solves the stationarity system of a quadratic energy with
//! a channel-wise Schur factorization and fast sine transforms; the backward
//! pass reuses the same solver.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dst;
pub mod error;
pub mod field;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod vrd;

pub use error::{Result, VrdError};
pub use field::Field;
pub use linalg::Mat;
pub use vrd::{vrd_backward, vrd_forward, VrdCache, VrdGrads, VrdParams, VrdSystem};
