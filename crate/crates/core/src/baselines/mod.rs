//! Reference predictors: ERM classifiers, analytic Bayes oracles, and the
//! accuracy metric.

mod erm;
mod metrics;
mod oracle;

pub use erm::{erm_predict, erm_predict_batch, train_erm, ErmClassifier, ErmHyper, ErmOptimizer};
pub use metrics::{accuracy, argmax};
pub use oracle::{
    bayes_oracle_app_a, bayes_oracle_app_a_batch, bayes_oracle_app_b, bayes_oracle_app_b_batch,
    oracle_plugin_app_a,
};
