//! Joint Bayesian model selection and parameter estimation for stochastic
//! mortality models via reversible-jump MCMC.
//!
//! The crate provides two model-building families — an age-period family
//! ([`ap`]) covering Lee-Carter, CBD, and APC style models through a discrete
//! indicator vector, and an age-period-product family ([`app`]) extending an
//! APCI base model with product-varying terms — together with a Gibbs sampler
//! ([`inference`]) that alternates block Metropolis-Hastings updates with
//! trans-dimensional jumps between model configurations. Jump proposals are
//! drawn from Laplace approximations of the relevant conditional posteriors
//! ([`laplace`]), so moves land near the posterior mode of the proposed
//! parameters.
//!
//! [`sim`] generates synthetic datasets with controlled effect sizes and runs
//! replicate grids that summarize how often each configuration is recovered.

pub mod ap;
pub mod app;
pub mod constraint;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod laplace;
pub mod likelihood;
pub mod params;
pub mod prior;
pub mod sim;
pub mod toy;

pub use error::{CoreError, Result};
