//! Pan-private streaming estimators.
//!
//! * [`distinct`]: turnstile distinct count from noisy p-stable sketches,
//!   built on the keyed variates of [`stable`].
//! * [`cropped`]: cropped sum `sum_i min(a_i, tau)` via counters and
//!   randomized-response bits.
//! * [`hh`]: count of heavy hitters through universe hashing.
//! * [`dot`]: cropped dot product of two streams, and `T_2`.
//! * [`attack`]: single-intrusion reconstruction attacks against exact
//!   and private distinct counters.
//!
//! [`stream`] holds the update model and the exact statistics every
//! estimator is tested against; [`experiment`] runs seeded Monte Carlo
//! comparisons and writes CSV.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod codec;
pub mod cropped;
pub mod distinct;
pub mod dot;
pub mod dp;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod experiment;
pub mod hash;
pub mod hh;
pub mod laplace;
pub mod rng;
pub mod stable;
pub mod stream;

pub use error::{Error, Result};
