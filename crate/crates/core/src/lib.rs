//! Partial recognition-parametrised models (RPMs) for prediction under latent
//! subgroup shift.
//!
//! A source environment provides observations `{X, W, C, Y}` generated around a
//! discrete confounder `U`; a target environment provides only `X` and differs
//! from the source solely in the prior over `U`. The crate learns the source
//! model by free-energy EM ([`rpm`]), re-estimates the latent prior on the
//! unlabeled target ([`adapt`]) and produces adapted predictions `Q(Y|X)`.
//!
//! Supporting modules provide a small dense network substrate ([`nn`]), the
//! synthetic generators used for evaluation ([`datagen`]), ERM baselines and an
//! analytic Bayes oracle ([`baselines`]) and the experiment runner
//! ([`harness`]).

pub mod adapt;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rpm;
pub(crate) mod util;

pub use error::{Error, Result};
