//! MAML training, distributed MAML, and the measurement machinery for their
//! stability / generalization behaviour on synthetic strongly convex
//! regression tasks.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`task_model`] — synthetic Gaussian linear-regression tasks, dataset
//!   generation, dataset perturbation, and maximal-coupling sampling.
//! * [`losses`] — loss models (regularized quadratic), the one-step
//!   adaptation operator, the constraint ball, and curvature constants.
//! * [`meta_objective`] — empirical / population meta-objectives, their
//!   gradients, the stochastic meta-gradient estimator, and the
//!   test/train/generalization error decomposition.
//! * [`trainer`] — projected stochastic MAML with coupled-run support and
//!   batch-overlap instrumentation.
//! * [`federated`] — distributed MAML with local update loops and periodic
//!   averaging.
//! * [`analysis`] — stability estimation, total-variation machinery,
//!   distribution-shift bounds, and convergence-rate fits.
//! * [`sweep`] — grid experiments over (number of tasks, samples per task)
//!   producing the data behind the error-trend figures.
//!
//! All randomness flows through [`rng::stream`], a counter-keyed
//! deterministic stream family, so every result is reproducible bit-for-bit
//! from a single seed and coupled experiments share exactly the randomness
//! they are meant to share.

pub mod analysis;
pub mod error;
pub mod federated;
pub mod hash;
pub mod losses;
pub mod meta_objective;
pub mod numeric;
pub mod optimize;
pub mod rng;
pub mod sweep;
pub mod task_model;
pub mod trainer;

pub use error::{Error, Result};
