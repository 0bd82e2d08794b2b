//! Extended-state observers for nonlinear systems driven by unknown
//! exogenous inputs. Observer gains come from linear matrix inequalities
//! whose solutions certify an L2 bound on the estimation error.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod multipliers;
pub mod sdp;
pub mod serde_mat;
pub mod simulation;
pub mod synthesis;

// Links the system OpenBLAS used by the semidefinite backend.
extern crate openblas_src;

pub use error::{Error, Result};
