//! Weak solutions of the near-field reflector problem inside a conical
//! cylinder, built from ellipsoid-of-revolution patches, and Monte Carlo
//! tools to check them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conics;
pub mod error;
pub mod occlusion;
pub mod reflector;
pub mod sphere;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
