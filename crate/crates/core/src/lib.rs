//! Condition numbers of real eigenvalues in the real elliptic Gaussian
//! ensemble.
//!
//! * [`specfun`]: Hermite sequences, incomplete gamma, Gaussian tail.
//! * [`prt_kernels`]: the P, R, T kernel sums and their identity.
//! * [`finite_n_jdf`]: exact joint density of an eigenvalue and its overlap,
//!   and the density of real eigenvalues.
//! * [`scaling_limits`]: bulk, edge and weakly non-Hermitian limit laws.
//! * [`ensemble_sampler`]: matrix draws and overlap measurement through a
//!   reordered real Schur form.
//! * [`mc_harness`]: reproducible parallel experiments, histograms and
//!   goodness-of-fit reports.
//!
//! Linear algebra runs on the system OpenBLAS; see [`linalg`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ensemble_sampler;
pub mod error;
pub mod finite_n_jdf;
pub mod linalg;
pub mod logval;
pub mod mc_harness;
pub mod prt_kernels;
pub mod quad;
pub mod scaling_limits;
pub mod selftest;
pub mod specfun;

pub use error::{Error, Result};
pub use logval::{ScaledSum, SignedLogValue};

