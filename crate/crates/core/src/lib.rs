//! Vendi information gain (VIG): a similarity-aware, sample-based measure of
//! information gain, with the machinery to use it.
//!
//! - [`kernels`] and [`spectra`]: similarity matrices, Vendi scores and Vendi
//!   entropies of any order `q`.
//! - [`infogain`]: VIG and mutual information over discrete channels and
//!   weighted sample sets.
//! - [`estimators`]: sample-based MI and VIG estimators with synthetic
//!   generators and a sweep harness.
//! - [`gp`]: Gaussian-process surrogate with pathwise (Matheron) sampling.
//! - [`acquisition`]: active data acquisition over particle posteriors.
//! - [`lse`]: level-set estimation policies and F1 tracking.
//! - [`rtmodel`]: Poisson message decoding with MI/VIG stopping rules.
//! - [`cli`]: configuration and drivers for the `vig` binary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod gp;
pub mod infogain;
pub mod kernels;
pub mod lse;
pub mod rng;
pub mod rtmodel;
pub mod spectra;

pub use error::{Error, Result};
pub use kernels::{KernelSpec, Points, ProbabilityVector, SimilarityMatrix};
pub use spectra::{LogBase, Spectrum, VendiOrder};
