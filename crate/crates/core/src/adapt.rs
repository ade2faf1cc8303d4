//! Target-prior estimation from unlabelled target observations, and the
//! adapted predictor `Q(Y|X) = Σ_{u,c} P(Y|c,u) P(c|X,u) Q(u|X)`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::log_softmax;
use crate::rpm::{MixtureMarginals, PartialRpm, LOG_FLOOR};

/// Provenance record of a target prior fitted against a source checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedPrior {
    pub q_logits: Vec<f64>,
    pub source_checkpoint_hash: String,
    pub target_dataset_hash: String,
    pub iterations: usize,
    pub final_free_energy: f64,
}

/// Categorical prior `Q(U) = softmax(q_logits)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPrior {
    pub q_logits: Vec<f64>,
    pub q: Vec<f64>,
}

impl TargetPrior {
    pub fn from_logits(q_logits: Vec<f64>) -> Result<Self> {
        let q: Vec<f64> = log_softmax(&q_logits)?.into_iter().map(f64::exp).collect();
        if q.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("target prior has a zero entry".into()));
        }
        Ok(TargetPrior { q_logits, q })
    }

    /// Builds a prior from probabilities; entries are floored at [`LOG_FLOOR`]
    /// so that every value stays strictly positive.
    pub fn from_probs(q: &[f64]) -> Result<Self> {
        let s: f64 = q.iter().sum();
        if q.is_empty() || q.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("{q:?} is not a probability vector")));
        }
        Self::from_logits(q.iter().map(|&p| p.max(LOG_FLOOR).ln()).collect())
    }

    /// The source model's own prior `P(U)`.
    pub fn source(model: &PartialRpm) -> Self {
        Self::from_logits(model.prior_logits.to_vec()).expect("validated prior logits")
    }

    /// Relabels the latent values: new value `u` is old value `perm[u]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let logits = perm.iter().map(|&p| self.q_logits[p]).collect();
        Self::from_logits(logits).expect("permuted logits stay finite")
    }
}

/// Result of fitting a target prior.
#[derive(Clone, Debug)]
pub struct TargetFit {
    pub prior: TargetPrior,
    /// Target free energy after each exact E-step, starting from the source
    /// prior.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptHyper {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AdaptHyper {
    fn default() -> Self {
        AdaptHyper { tolerance: 1e-8, max_iterations: 500 }
    }
}

fn check_mixture(model: &PartialRpm, mix: &MixtureMarginals) -> Result<Vec<f64>> {
    if mix.f_x.len() != model.dims.k_u {
        return Err(Error::Shape(format!(
            "mixture has {} entries, model has {} latent values",
            mix.f_x.len(),
            model.dims.k_u
        )));
    }
    Ok(mix.f_x.iter().map(|&f| f.max(LOG_FLOOR).ln()).collect())
}

/// Unnormalised `log f(u|x) - log F_x(u)` for every row of `x`.
fn log_ratio(model: &PartialRpm, mix: &MixtureMarginals, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let log_mix = check_mixture(model, mix)?;
    if x.ncols() != model.dims.d_x {
        return Err(Error::Shape(format!(
            "expected X of width {}, got {}",
            model.dims.d_x,
            x.ncols()
        )));
    }
    let (mut lf, _) = model.log_recog_x(x)?;
    for mut row in lf.rows_mut() {
        for (v, lm) in row.iter_mut().zip(&log_mix) {
            *v = v.max(LOG_FLOOR.ln()) - lm;
        }
    }
    Ok(lf)
}

/// Normalises each row of `log_ratio + log q`, returning the posteriors and
/// the per-row log normalisers.
fn normalise(log_ratio: &Array2<f64>, q: &TargetPrior) -> Result<(Array2<f64>, Vec<f64>)> {
    let log_q: Vec<f64> = q.q.iter().map(|p| p.max(LOG_FLOOR).ln()).collect();
    let mut post = log_ratio.clone();
    let mut log_z = Vec::with_capacity(post.nrows());
    for (i, mut row) in post.rows_mut().into_iter().enumerate() {
        row.iter_mut().zip(&log_q).for_each(|(v, lq)| *v += lq);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::numeric(format!("target posterior, point {i}")));
        }
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
        log_z.push(m + s.ln());
    }
    Ok((post, log_z))
}

/// `Q(U|x_n) ∝ f(U|x_n) Q(U) / F_x(U)` for every row of `x`.
pub fn target_posteriors(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    qprior: &TargetPrior,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if qprior.q.len() != model.dims.k_u {
        return Err(Error::Shape("target prior length differs from k_u".into()));
    }
    Ok(normalise(&log_ratio(model, mix, x)?, qprior)?.0)
}

/// Single-observation form of [`target_posteriors`].
pub fn target_posterior(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    qprior: &TargetPrior,
    x: &[f64],
) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(target_posteriors(model, mix, qprior, x)?.row(0).to_vec())
}

/// Estimates `Q(U)` by EM on the target free energy with every model
/// parameter and the source mixture held fixed. The M-step sets `q` to the
/// mean posterior.
pub fn fit_target_prior(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    target_x: ArrayView2<f64>,
    hyper: &AdaptHyper,
) -> Result<TargetFit> {
    if target_x.nrows() == 0 {
        return Err(Error::Empty("target dataset"));
    }
    if !(hyper.tolerance > 0.0) || hyper.max_iterations == 0 {
        return Err(Error::Config("adaptation needs a positive tolerance and iteration cap".into()));
    }
    let ratio = log_ratio(model, mix, target_x)?;
    let n = target_x.nrows() as f64;
    let mut prior = TargetPrior::source(model);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (post, log_z) = normalise(&ratio, &prior)?;
        // at the exact E-step the free energy equals the mean log normaliser
        let fe = log_z.iter().sum::<f64>() / n;
        if !fe.is_finite() {
            return Err(Error::numeric(format!("target free energy, iteration {iterations}")));
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (fe - prev).abs() <= hyper.tolerance * prev.abs().max(1e-300) {
                trace.push(fe);
                converged = true;
                break;
            }
        }
        trace.push(fe);
        if iterations == hyper.max_iterations {
            break;
        }
        let mean = post.mean_axis(Axis(0)).expect("non-empty target");
        prior = TargetPrior::from_probs(mean.as_slice().expect("contiguous"))?;
        iterations += 1;
    }
    log::debug!("target prior after {iterations} iterations: {:?}", prior.q);
    Ok(TargetFit { prior, trace, iterations, converged })
}

/// `Q(Y|x_n)` for every row of `x`.
pub fn predict_target_batch(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    qprior: &TargetPrior,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let post = target_posteriors(model, mix, qprior, x)?;
    let (log_pc, _) = model.log_concept_all(x)?;
    let y_table = model.y_table();
    let n = x.nrows();
    let dims = model.dims;
    let mut out = Array2::zeros((n, dims.k_y));
    for i in 0..n {
        for u in 0..dims.k_u {
            let qu = post[[i, u]];
            for c in 0..dims.k_c {
                let w = qu * log_pc[[u * n + i, c]].exp();
                for y in 0..dims.k_y {
                    out[[i, y]] += w * y_table[[c, u, y]];
                }
            }
        }
    }
    for mut row in out.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    Ok(out)
}

/// Single-observation form of [`predict_target_batch`].
pub fn predict_target(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    qprior: &TargetPrior,
    x: &[f64],
) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(predict_target_batch(model, mix, qprior, x)?.row(0).to_vec())
}

/// The unadapted source predictive `Σ_{u,c} P(Y|c,u) P(c|X,u) P(u|X)`.
pub fn predict_source_batch(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    predict_target_batch(model, mix, &TargetPrior::source(model), x)
}
