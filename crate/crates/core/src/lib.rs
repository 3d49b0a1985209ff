//! Cost-bounded active classification over hidden-model MDPs.
//!
//! The true dynamics of a system are one of finitely many known MDPs. The
//! physical state is observed, the model is not. This crate computes
//! strategies that maximize the probability of reaching a confident
//! classification of one model attribute within a step horizon and a cost
//! budget, while the belief never leaves a safe region.
//!
//! - [`model`]: families of MDPs, classification specs, problem files
//! - [`belief`]: Bayesian belief arithmetic and decision status
//! - [`unfold`]: breadth-first cost-bounded construction of the belief MDP
//! - [`exact`]: backward induction on the unfolded belief MDP
//! - [`ams`]: UCB-guided adaptive multi-stage sampling estimator
//! - [`sim`]: Monte-Carlo validation of policies against a sampled true model
//! - [`cli`]: the `belief-probe` command-line front end

pub mod ams;
pub mod belief;
pub mod cli;
pub mod exact;
pub mod fixtures;
pub mod model;
pub mod rng;
pub mod sim;
pub mod unfold;

pub use belief::{BeliefKey, BeliefState, DecisionStatus};
pub use model::{ClassificationSpec, ModelFamily, ModelIndex, Problem};
