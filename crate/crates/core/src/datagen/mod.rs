//! Ground-truth generative processes used to evaluate the method, and the
//! on-disk dataset format.
//!
//! Every generator draws each variable from its own ChaCha8 stream keyed by
//! `(seed, stream id)`, so adding observation columns never perturbs the draws
//! of `U`, `W`, `C` or `Y`.

mod app_a;
mod app_b;
mod batch;
mod io;
mod params;

pub use app_a::gen_app_a;
pub use app_b::{class_embed, gen_app_b, TemplateBank, W_CLASS_OFFSET};
pub use batch::{DatasetMeta, DatasetRole, EvalLabels, Generated, SourceBatch, TargetBatch, DATASET_FORMAT_VERSION};
pub use io::{read_eval, read_source, read_target, write_dataset, write_target};
pub use params::{sigmoid, softmax_column, EmbedConfig, GenParamsA, GenParamsB};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream for one variable of one dataset.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) fn check_simplex(pi: &[f64], k: usize) -> crate::Result<()> {
    let ok = pi.len() == k
        && pi.iter().all(|&p| (0.0..=1.0).contains(&p))
        && (pi.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(crate::Error::Config(format!("{pi:?} is not a distribution over {k} values")))
    }
}

pub(crate) fn sample_categorical(p: &[f64], r: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if r < acc {
            return i;
        }
    }
    // r landed in the rounding gap above the cumulative sum
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}
