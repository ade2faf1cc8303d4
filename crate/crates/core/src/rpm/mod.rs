//! The partial recognition-parametrised model.
//!
//! High-dimensional observations `X` and `W` enter through recognition ratios
//! `f(U|X) / F(U)`, where `F` is the recognition distribution averaged over the
//! data the model was fit on. The discrete conditionals `P(C|X,U)` and
//! `P(Y|C,U)` and the prior `P(U)` stay generative. Source training maximises
//! the free energy by EM with an exact (optionally tempered) E-step.

mod checkpoint;
mod model;
mod objective;
mod train;
mod verify;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use model::{ModelDims, PartialRpm, RecogW, RpmArchitecture, WRecognition};
pub use objective::{
    e_step, e_step_rows, entropy, free_energy, log_joint_weights, log_joint_weights_batch,
    mixture_marginal, MixtureMarginals, PosteriorMatrix, RpmForward, SourceObjective, SourceView,
    LOG_FLOOR,
};
pub use train::{
    full_data_mixture, source_free_energy, train_source, AnnealSchedule, EpochStat, TrainHyper, TrainOutcome,
};
pub use verify::{gradcheck_suite, GradCheckReport};
