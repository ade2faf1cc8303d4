use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelDims, PartialRpm, RpmArchitecture};
use super::objective::{
    e_step_rows, free_energy_from, log_joint_weights_batch, MixtureMarginals, SourceObjective, SourceView,
};
use crate::error::{Error, Result};
use crate::nn::AdamState;

/// Linear decay of the entropy weight from `beta_start` to `beta_end` over
/// `anneal_epochs`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub anneal_epochs: usize,
}

impl AnnealSchedule {
    pub const fn constant(beta: f64) -> Self {
        AnnealSchedule { beta_start: beta, beta_end: beta, anneal_epochs: 1 }
    }

    pub fn beta(&self, epoch: usize) -> f64 {
        let t = (epoch as f64 / self.anneal_epochs as f64).min(1.0);
        self.beta_start + (self.beta_end - self.beta_start) * t
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_start < 1.0 || self.beta_end < 1.0 || self.anneal_epochs == 0 {
            return Err(Error::Config(format!("invalid anneal schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_recognition: f64,
    pub lr_generative: f64,
    pub lr_prior: f64,
    pub anneal: AnnealSchedule,
    pub seed: u64,
    #[serde(default)]
    pub architecture: RpmArchitecture,
    /// Independent initialisations; the one with the highest full-data free
    /// energy is kept.
    #[serde(default = "one")]
    pub restarts: usize,
    /// When set, `epochs` is replaced by however many epochs give about this
    /// many optimiser steps on the training set, and the annealing length is
    /// scaled by the same factor.
    #[serde(default)]
    pub step_budget: Option<usize>,
}

fn one() -> usize {
    1
}

impl TrainHyper {
    /// Numerical-simulation setting: Adam at 1e-3 for 2000 epochs, batches of
    /// 1000, entropy weight 5 -> 1 over 400 epochs.
    pub fn app_a(seed: u64) -> Self {
        TrainHyper {
            epochs: 2000,
            batch_size: 1000,
            lr_recognition: 1e-3,
            lr_generative: 1e-3,
            lr_prior: 1e-3,
            anneal: AnnealSchedule { beta_start: 5.0, beta_end: 1.0, anneal_epochs: 400 },
            seed,
            architecture: RpmArchitecture::default(),
            restarts: 1,
            step_budget: None,
        }
    }

    /// Image-observation setting: 20000 epochs, batches of 2000, learning rates
    /// 1e-3 / 1e-4 / 1e-3 and annealing over 3000 epochs.
    pub fn app_b(seed: u64) -> Self {
        TrainHyper {
            epochs: 20000,
            batch_size: 2000,
            lr_recognition: 1e-3,
            lr_generative: 1e-4,
            lr_prior: 1e-3,
            anneal: AnnealSchedule { beta_start: 5.0, beta_end: 1.0, anneal_epochs: 3000 },
            seed,
            architecture: RpmArchitecture {
                hidden_x: vec![100],
                hidden_concept: vec![100],
                w: super::WRecognition::Mlp { hidden: vec![100] },
            },
            restarts: 1,
            step_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.anneal.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.restarts == 0 || self.step_budget == Some(0) {
            return Err(Error::Config("epochs, batch_size, restarts and step_budget must be positive".into()));
        }
        for lr in [self.lr_recognition, self.lr_generative, self.lr_prior] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        Ok(())
    }

    /// Epoch count and annealing schedule used on a training set of `n`
    /// points, after applying `step_budget`.
    pub fn schedule_for(&self, n: usize) -> (usize, AnnealSchedule) {
        let Some(budget) = self.step_budget else {
            return (self.epochs, self.anneal);
        };
        let batches = n.div_ceil(self.batch_size.min(n).max(1)).max(1);
        let epochs = budget.div_ceil(batches).max(1);
        let ratio = self.anneal.anneal_epochs as f64 / self.epochs as f64;
        let anneal_epochs = ((epochs as f64 * ratio).round() as usize).max(1);
        (epochs, AnnealSchedule { anneal_epochs, ..self.anneal })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub beta: f64,
    /// Size-weighted mean of the minibatch free energies, each evaluated at the
    /// E-step posterior before that batch's parameter update.
    pub free_energy: f64,
    /// Number of logarithms clamped at the probability floor.
    pub floored: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PartialRpm,
    /// Mixture marginals over the whole training set at the final parameters.
    pub mixture: MixtureMarginals,
    /// Trace of the kept initialisation.
    pub trace: Vec<EpochStat>,
    /// Full-data free energy at `beta = 1` of the kept initialisation.
    pub free_energy: f64,
    /// Full-data free energy of every initialisation, in order.
    pub restart_free_energies: Vec<f64>,
    /// Index of the kept initialisation.
    pub chosen_restart: usize,
}

const MIXTURE_CHUNK: usize = 4096;

/// `F_x` and `F_w` averaged over an entire dataset.
pub fn full_data_mixture(
    model: &PartialRpm,
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
) -> Result<MixtureMarginals> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("mixture dataset"));
    }
    if w.nrows() != n {
        return Err(Error::Shape("X and W differ in length".into()));
    }
    let k_u = model.dims.k_u;
    let mut f_x = vec![0.0; k_u];
    let mut f_w = vec![0.0; k_u];
    let mut start = 0;
    while start < n {
        let end = (start + MIXTURE_CHUNK).min(n);
        let (lx, _) = model.log_recog_x(x.slice(ndarray::s![start..end, ..]))?;
        let (lw, _) = model.log_recog_w(w.slice(ndarray::s![start..end, ..]))?;
        for (acc, col) in f_x.iter_mut().zip(lx.axis_iter(Axis(1))) {
            *acc += col.iter().map(|v| v.exp()).sum::<f64>();
        }
        for (acc, col) in f_w.iter_mut().zip(lw.axis_iter(Axis(1))) {
            *acc += col.iter().map(|v| v.exp()).sum::<f64>();
        }
        start = end;
    }
    for v in f_x.iter_mut().chain(f_w.iter_mut()) {
        *v /= n as f64;
    }
    Ok(MixtureMarginals { f_x, f_w, source_size: n })
}

/// Fits the source model by generalised EM.
///
/// Each minibatch recomputes its own mixture marginals, takes the exact
/// tempered E-step and then one Adam ascent step on the free energy with the
/// posteriors held fixed. With several `restarts` the initialisation with the
/// highest full-data free energy is returned. The returned mixture is computed
/// over the full dataset at the final parameters.
pub fn train_source(data: &SourceView, dims: ModelDims, hyper: &TrainHyper) -> Result<TrainOutcome> {
    hyper.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("source data"));
    }
    if data.x.ncols() != dims.d_x || data.w.ncols() != dims.d_w {
        return Err(Error::Shape(format!(
            "data has X width {} and W width {}, dims say {} and {}",
            data.x.ncols(),
            data.w.ncols(),
            dims.d_x,
            dims.d_w
        )));
    }
    if data.x.iter().chain(data.w.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numeric("source observations"));
    }

    let mut best: Option<TrainOutcome> = None;
    let mut energies = Vec::with_capacity(hyper.restarts);
    for r in 0..hyper.restarts {
        let seed = hyper.seed.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (model, trace) = fit_once(data, dims, hyper, seed)?;
        let mixture = full_data_mixture(&model, data.x, data.w)?;
        let fe = source_free_energy(&model, &mixture, data)?;
        log::debug!("restart {r}: full-data free energy {fe}");
        energies.push(fe);
        if best.as_ref().is_none_or(|b| fe > b.free_energy) {
            best = Some(TrainOutcome {
                model,
                mixture,
                trace,
                free_energy: fe,
                restart_free_energies: Vec::new(),
                chosen_restart: r,
            });
        }
    }
    let mut out = best.expect("at least one restart");
    out.restart_free_energies = energies;
    Ok(out)
}

/// Free energy at `beta = 1` over a whole dataset with the exact E-step and
/// the given (normally full-data) mixture marginals.
pub fn source_free_energy(model: &PartialRpm, mix: &MixtureMarginals, data: &SourceView) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("source data"));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + MIXTURE_CHUNK).min(n);
        let chunk = SourceView {
            x: data.x.slice(ndarray::s![start..end, ..]),
            w: data.w.slice(ndarray::s![start..end, ..]),
            c: &data.c[start..end],
            y: &data.y[start..end],
        };
        let fwd = model.forward(&chunk)?;
        let (logw, _) = log_joint_weights_batch(&fwd, mix)?;
        let eta = e_step_rows(logw.view(), 1.0)?;
        total += free_energy_from(&fwd, mix, &eta, 1.0)? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

fn fit_once(data: &SourceView, dims: ModelDims, hyper: &TrainHyper, seed: u64) -> Result<(PartialRpm, Vec<EpochStat>)> {
    let n = data.len();
    let (epochs, anneal) = hyper.schedule_for(n);
    let mut model = PartialRpm::init(dims, &hyper.architecture, seed)?;
    let lrs = [hyper.lr_recognition, hyper.lr_generative, hyper.lr_prior];
    let mut optimizers: Vec<AdamState> = model
        .grouped_tensors()
        .iter()
        .zip(lrs)
        .map(|(group, lr)| AdamState::for_shapes(group.iter().map(|t| t.len()), lr))
        .collect();

    let batch_size = hyper.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_0000_0001);
    let mut trace = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let beta = anneal.beta(epoch);
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        let mut fe_sum = 0.0;
        let mut floored = 0;
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let location = |what: &str| format!("epoch {epoch}, batch {b}: {what}");
            let full = batch_size == n;
            let (x, w, c, y);
            let batch = if full {
                SourceView { x: data.x.view(), w: data.w.view(), c: data.c, y: data.y }
            } else {
                x = data.x.select(Axis(0), idx);
                w = data.w.select(Axis(0), idx);
                c = idx.iter().map(|&i| data.c[i]).collect::<Vec<_>>();
                y = idx.iter().map(|&i| data.y[i]).collect::<Vec<_>>();
                SourceView { x: x.view(), w: w.view(), c: &c, y: &y }
            };
            let fwd = model.forward(&batch)?;
            let mix = fwd.batch_mixture();
            let (logw, fl) = log_joint_weights_batch(&fwd, &mix)
                .map_err(|_| Error::numeric(location("log joint weights")))?;
            floored += fl;
            let eta = e_step_rows(logw.view(), beta)
                .map_err(|_| Error::numeric(location("E-step")))?;
            let objective = SourceObjective { batch, eta: &eta, beta };
            let (fe, grad) = objective.value_and_grad_from(&model, &fwd)?;
            if !fe.is_finite() {
                return Err(Error::numeric(location("free energy")));
            }
            let grads = grad.grouped_tensors();
            if grads.iter().flatten().any(|t| t.iter().any(|g| !g.is_finite())) {
                return Err(Error::numeric(location("gradient")));
            }
            let params = model.grouped_tensors_mut();
            for ((opt, p), g) in optimizers.iter_mut().zip(params).zip(grads) {
                opt.step_tensors(p, g, true)?;
            }
            fe_sum += fe * idx.len() as f64;
        }
        trace.push(EpochStat {
            epoch,
            beta,
            free_energy: fe_sum / n as f64,
            floored,
        });
    }

    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anneal_is_linear_then_clamped() {
        let s = AnnealSchedule { beta_start: 5.0, beta_end: 1.0, anneal_epochs: 400 };
        assert_eq!(s.beta(0), 5.0);
        assert_eq!(s.beta(200), 3.0);
        assert_eq!(s.beta(400), 1.0);
        assert_eq!(s.beta(5000), 1.0);
        assert!(AnnealSchedule { beta_start: 0.5, beta_end: 1.0, anneal_epochs: 1 }
            .validate()
            .is_err());
    }

    #[test]
    fn step_budget_sets_epochs_and_scales_annealing() {
        let mut h = TrainHyper::app_b(0);
        h.epochs = 6;
        h.anneal.anneal_epochs = 3;
        assert_eq!(h.schedule_for(100_000), (6, h.anneal));
        h.step_budget = Some(300);
        assert_eq!(h.schedule_for(100_000).0, 6);
        let (epochs, anneal) = h.schedule_for(10_000);
        assert_eq!((epochs, anneal.anneal_epochs), (60, 30));
        let (epochs, anneal) = h.schedule_for(1_500);
        assert_eq!((epochs, anneal.anneal_epochs), (300, 150));
        h.step_budget = Some(0);
        assert!(h.validate().is_err());
    }

    #[test]
    fn paper_presets_validate() {
        TrainHyper::app_a(0).validate().unwrap();
        TrainHyper::app_b(0).validate().unwrap();
    }
}
