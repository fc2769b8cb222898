//! Semi-supervised training of small fully-connected classifiers with a
//! learned, non-negative weight for every unlabeled example.
//!
//! The unlabeled weights are hyperparameters of a bi-level program: the
//! inner problem fits the network to the labeled loss plus the weighted
//! pseudo-label loss, the outer problem minimizes the validation loss. The
//! hypergradient of each weight is the influence of that example on the
//! validation loss, computed with an exact inverse of the damped Hessian of
//! the last linear layer.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, timing and
//! the command line live in the companion `reweight` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how validation rejects NaN along with the out-of-range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod influence;
pub mod linalg;
pub mod network;
pub mod objective;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::SeededRng;
