//! Minimal dense network substrate: MLP parameters with hand-derived
//! backpropagation, Adam/SGD optimizers, a plateau learning-rate schedule and a
//! central finite-difference oracle for gradient verification.

mod gradcheck;
mod mlp;
mod optim;
mod params;

pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use mlp::{log_softmax, log_softmax_rows, mlp_init, mlp_logits, softmax, MlpParams, MlpTrace};
pub use optim::{AdamState, PlateauSchedule, Sgd};
pub use params::{value_and_grad, Objective, Parameters};
