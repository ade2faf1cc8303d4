use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{ModelDims, PartialRpm, RpmArchitecture, WRecognition};
use super::objective::{e_step_rows, log_joint_weights_batch, SourceObjective, SourceView};
use crate::error::Result;
use crate::nn::{finite_diff_grad, max_relative_error, value_and_grad, Objective, Parameters};

/// Largest per-tensor relative error between analytic and central-difference
/// gradients of the source free energy for one randomised case.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub case: String,
    pub max_relative_error: f64,
}

fn check_case(dims: ModelDims, w: WRecognition, n: usize, hidden: usize, beta: f64, seed: u64) -> Result<f64> {
    let levels = match &w {
        WRecognition::Table { levels } => Some(*levels),
        WRecognition::Mlp { .. } => None,
    };
    let arch = RpmArchitecture { hidden_x: vec![hidden], hidden_concept: vec![hidden], w };
    let mut model = PartialRpm::init(dims, &arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = Array2::from_shape_fn((n, dims.d_x), |_| rng.sample(StandardNormal));
    let w = match levels {
        Some(l) => Array2::from_shape_fn((n, 1), |_| rng.gen_range(0..l) as f64),
        None => Array2::from_shape_fn((n, dims.d_w), |_| rng.sample(StandardNormal)),
    };
    let c: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dims.k_c)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dims.k_y)).collect();
    let batch = SourceView { x: x.view(), w: w.view(), c: &c, y: &y };
    let fwd = model.forward(&batch)?;
    let (lw, _) = log_joint_weights_batch(&fwd, &fwd.batch_mixture())?;
    let eta = e_step_rows(lw.view(), beta)?;
    let objective = SourceObjective { batch, eta: &eta, beta };
    let (_, analytic) = value_and_grad(&objective, &model)?;
    let numeric = finite_diff_grad(|m| objective.value(m), &model, 1e-5)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Gradient checks on tiny random instances with a tabular and a network `W`
/// recognition model.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let table = ModelDims { k_u: 2, k_c: 2, k_y: 2, d_x: 2, d_w: 1 };
    let mlp = ModelDims { k_u: 3, k_c: 3, k_y: 2, d_x: 2, d_w: 3 };
    let cases = [
        ("table_w_beta1", table, WRecognition::Table { levels: 2 }, 1.0),
        ("table_w_beta3", table, WRecognition::Table { levels: 2 }, 3.0),
        ("mlp_w_beta1", mlp, WRecognition::Mlp { hidden: vec![4] }, 1.0),
        ("mlp_w_beta3", mlp, WRecognition::Mlp { hidden: vec![4] }, 3.0),
    ];
    cases
        .into_iter()
        .map(|(name, dims, w, beta)| {
            Ok(GradCheckReport {
                case: name.to_string(),
                max_relative_error: check_case(dims, w, 8, 4, beta, seed)?,
            })
        })
        .collect()
}
