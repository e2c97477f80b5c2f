//! Sparse simultaneous estimation of many treatment effects under latent
//! confounding.
//!
//! The centerpiece is the Spar pipeline: fit the latent-factor structure of
//! the treatments, estimate the marginal outcome regression, and recover the
//! sparse causal coefficient vector by solving an ℓ0 feasibility program over
//! slab constraints, followed by a least-squares refinement on the inferred
//! null set. Baseline estimators (least-median-of-squares null-treatments,
//! deconfounder, lasso/ridge/OLS) and the synthetic benchmark generators
//! live alongside it so the whole evaluation harness is self-contained.

pub mod baselines;
pub mod bundle;
pub mod data;
pub mod error;
pub mod factor;
pub mod harness;
pub mod linalg;
pub mod mip;
pub mod pipeline;
pub mod regress;
pub mod simulate;

pub use data::{Dataset, GroundTruth, SparsityPattern};
pub use error::{Error, Result};
pub use factor::{FactorFit, FactorMethod, GammaHat};
pub use mip::{MipProblem, MipSolution, SolveStatus};
pub use pipeline::{SparConfig, SparResult};
pub use regress::RegressionFit;
