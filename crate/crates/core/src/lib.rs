//! Randomized sparse state feedback for discrete-time linear plants.
//!
//! Given x(k+1) = A x(k) + B u(k), the controller u(k) = K C(k) x(k) only
//! sees the coordinates selected by a random diagonal mask C(k), each kept
//! with probability pᵢ and rescaled by 1/pᵢ. This crate synthesizes K and
//! the smallest probabilities that keep E‖x(k)‖² → 0, and checks the result
//! with seeded Monte Carlo ensembles.

// `!(x < y)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linops;
pub mod models;
pub mod plan;
pub mod rng;
pub mod sim;
pub mod sparsify;
pub mod synth;

pub use error::{Error, Result};
pub use models::ModelSpec;
pub use sim::{DecayReport, EnsembleStats, SimConfig, Verdict};
pub use sparsify::{Mask, MaskSampler};
pub use synth::{GainCertificate, Plant, Sensing, SparsificationPlan, SynthSettings};
