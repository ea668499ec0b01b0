//! Sparse (L0) targeted adversarial examples, built constructively.
//!
//! Two independent mechanisms live here:
//!
//! - [`arrangement`]: partitions of `R^n` by `m` hyperplanes, where moving
//!   between cells while changing only `k` coordinates reduces to finding a
//!   combination of `k` columns of the coefficient matrix lying in a target
//!   orthant of `R^m`. Includes the 2m-orthant enumeration for column pairs
//!   and the bitmap coverage experiment.
//! - [`pathfollow`]: ReLU networks viewed as piecewise-linear maps. The image
//!   of a straight input segment is a polyline in output space; it is traced
//!   back by inverting local affine maps restricted to a fixed subset of
//!   `m + delta` input coordinates, so the end point differs from the start in
//!   at most that many coordinates.
//!
//! [`relunet`] holds the network model (forward pass, activation patterns,
//! local maps, boundary stepping, training), [`oracle`] the brute-force
//! verifiers used by the tests and the `verify` command, [`densecore`] the
//! small dense linear algebra and [`dataio`] file formats.

pub mod arrangement;
pub mod dataio;
pub mod densecore;
mod error;
pub mod oracle;
pub mod pathfollow;
pub mod relunet;
pub mod rng;

pub use error::{Error, Result};
