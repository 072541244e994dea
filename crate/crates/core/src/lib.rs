//! Numerical laboratory for rotationally symmetric Ricci flow on ℝⁿ⁺¹.
//!
//! A metric `g = ds² + f(s)² g_std` is described by its warping function `f`.
//! The crate builds warping profiles ([`profiles`]), evaluates their curvature
//! ([`curvature`]), bounds volume ratios ([`geometry`]), integrates the reduced
//! `(σ, f)` flow system ([`flow`]), checks the differential identities and
//! maximum-principle inequalities along computed flows ([`oracles`]), and ties
//! everything into reproducible experiments ([`harness`]).
//!
//! Batch work (dense sampling, volume scans, oracle post-processing, sweeps)
//! runs on rayon when the `parallel` feature is enabled and sequentially
//! otherwise; see [`par`].

// `!(x > 0.0)` is how NaN is rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod oracles;
pub mod par;
pub mod profiles;
pub mod quad;

pub use error::{Error, Result};
pub use profiles::{Jet, Profile, ProfileSpec};
