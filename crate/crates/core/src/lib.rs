//! Maximum-likelihood direction-of-arrival estimation for sensor arrays whose
//! sensors carry unknown, unequal white-noise powers.
//!
//! The estimators follow the Alternate Projection Newton (APN) pipeline:
//! angles are added one at a time by a line search over the uniform-noise
//! deterministic likelihood, the noise powers are initialised by covariance
//! fitting, and the joint (angle, noise) parameters are refined with damped
//! Newton steps that use closed-form gradients and Hessians of the
//! concentrated deterministic (DML) and stochastic (SML) likelihoods.
//!
//! Module map:
//!
//! * [`array`] geometry, steering vectors, snapshot synthesis
//! * [`ml`] whitened workspace and the three concentrated cost functions
//! * [`derivatives`] gradient and Hessian blocks
//! * [`fdcheck`] finite-difference verification
//! * [`optimizer`] the APN pipeline and the safeguarded Newton iteration
//! * [`music`] MUSIC baseline
//! * [`harness`] Monte Carlo engine, flop model, file formats

pub mod array;
pub mod derivatives;
mod error;
pub mod fdcheck;
pub mod harness;
pub mod linalg;
pub mod ml;
pub mod music;
pub mod optimizer;

pub use error::{Error, Result};

pub use array::{
    ArrayGeometry, NoiseProfile, SnapshotMatrix, SourceAngles, SourceModel, SteeringSet,
};
pub use derivatives::{CostKind, GradientBlocks, HessianBlocks, HessianMode};
pub use ml::{SampleCovariance, WhitenedWorkspace};
pub use optimizer::{EstimationResult, NewtonOptions, Target};

