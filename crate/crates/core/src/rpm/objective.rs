use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::model::{PartialRpm, RecogW, WTrace};
use crate::error::{Error, Result};
use crate::nn::{MlpTrace, Objective};

/// Probabilities below this value are clamped before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-30;

fn floored_ln(p: f64, floored: &mut usize) -> f64 {
    if p < LOG_FLOOR {
        *floored += 1;
        LOG_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// Recognition distributions averaged over a dataset: `F_x(U)` and `F_w(U)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixtureMarginals {
    pub f_x: Vec<f64>,
    pub f_w: Vec<f64>,
    pub source_size: usize,
}

/// One categorical distribution over `U` per data point.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix {
    pub rows: Array2<f64>,
}

impl PosteriorMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        for (i, row) in rows.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Config(format!("posterior row {i} is not a distribution")));
            }
        }
        Ok(PosteriorMatrix { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Column-wise mean of a matrix of recognition probabilities.
pub fn mixture_marginal(recognition_rows: ArrayView2<f64>) -> Result<Vec<f64>> {
    if recognition_rows.nrows() == 0 {
        return Err(Error::Empty("mixture_marginal rows"));
    }
    for (i, row) in recognition_rows.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("recognition row {i} does not sum to 1")));
        }
    }
    Ok(recognition_rows
        .mean_axis(Axis(0))
        .expect("non-empty")
        .to_vec())
}

/// `softmax(log_weights / beta)`.
///
/// At `beta = 1` this is the exact posterior over `U`; larger `beta` flattens
/// it, which maximises the free energy with its entropy term weighted by
/// `beta`.
pub fn e_step(log_weights: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta >= 1.0) {
        return Err(Error::Config(format!("E-step temperature must be >= 1, got {beta}")));
    }
    if log_weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("E-step log weights"));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_weights.iter().map(|v| ((v - max) / beta).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|v| v / total).collect())
}

/// Row-wise [`e_step`].
pub fn e_step_rows(log_weights: ArrayView2<f64>, beta: f64) -> Result<PosteriorMatrix> {
    let mut rows = Array2::zeros(log_weights.dim());
    for (i, row) in log_weights.rows().into_iter().enumerate() {
        let eta = e_step(row.as_slice().expect("standard layout"), beta)
            .map_err(|e| match e {
                Error::Numeric { .. } => Error::numeric(format!("E-step row {i}")),
                other => other,
            })?;
        rows.row_mut(i).assign(&Array1::from(eta));
    }
    Ok(PosteriorMatrix { rows })
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Borrowed columns of a batch of source tuples `{X, W, C, Y}`.
#[derive(Clone, Copy, Debug)]
pub struct SourceView<'a> {
    pub x: ArrayView2<'a, f64>,
    pub w: ArrayView2<'a, f64>,
    pub c: &'a [usize],
    pub y: &'a [usize],
}

impl SourceView<'_> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-factor log terms of the joint for a batch of source tuples.
pub struct RpmForward {
    /// `log f(u | x_n)`, `n × k_u`.
    pub log_f_x: Array2<f64>,
    pub log_f_w: Array2<f64>,
    /// `log P(c_n | x_n, u)`, `n × k_u`.
    pub log_pc: Array2<f64>,
    /// `log P(y_n | c_n, u)`, `n × k_u`.
    pub log_py: Array2<f64>,
    pub log_prior: Vec<f64>,
    x_trace: MlpTrace,
    w_trace: WTrace,
    concept_trace: MlpTrace,
    /// `log P(C | x_n, u)` for every `u`, stacked `u`-major.
    concept_logp: Array2<f64>,
    log_y_table: ndarray::Array3<f64>,
}

impl RpmForward {
    pub fn len(&self) -> usize {
        self.log_f_x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mixture marginals of this batch's recognition outputs.
    pub fn batch_mixture(&self) -> MixtureMarginals {
        let f_x = self.log_f_x.mapv(f64::exp).mean_axis(Axis(0)).expect("non-empty");
        let f_w = self.log_f_w.mapv(f64::exp).mean_axis(Axis(0)).expect("non-empty");
        MixtureMarginals {
            f_x: f_x.to_vec(),
            f_w: f_w.to_vec(),
            source_size: self.len(),
        }
    }
}

fn check_labels(model: &PartialRpm, batch: &SourceView) -> Result<()> {
    let SourceView { x, w, c, y } = *batch;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("source batch"));
    }
    if w.nrows() != n || c.len() != n || y.len() != n {
        return Err(Error::Shape(format!(
            "source columns disagree in length: X {n}, W {}, C {}, Y {}",
            w.nrows(),
            c.len(),
            y.len()
        )));
    }
    if let Some(&bad) = c.iter().find(|&&v| v >= model.dims.k_c) {
        return Err(Error::Shape(format!("C label {bad} out of range")));
    }
    if let Some(&bad) = y.iter().find(|&&v| v >= model.dims.k_y) {
        return Err(Error::Shape(format!("Y label {bad} out of range")));
    }
    Ok(())
}

impl PartialRpm {
    /// Evaluates every factor of the joint on a batch of source tuples.
    pub fn forward(&self, batch: &SourceView) -> Result<RpmForward> {
        check_labels(self, batch)?;
        let SourceView { x, w, c, y } = *batch;
        let n = x.nrows();
        let k_u = self.dims.k_u;
        let (log_f_x, x_trace) = self.log_recog_x(x)?;
        let (log_f_w, w_trace) = self.log_recog_w(w)?;
        let (concept_logp, concept_trace) = self.log_concept_all(x)?;
        let log_y_table = self.log_y_table();
        let mut log_pc = Array2::zeros((n, k_u));
        let mut log_py = Array2::zeros((n, k_u));
        for u in 0..k_u {
            for i in 0..n {
                log_pc[[i, u]] = concept_logp[[u * n + i, c[i]]];
                log_py[[i, u]] = log_y_table[[c[i], u, y[i]]];
            }
        }
        let log_prior = self.prior().iter().map(|p| p.ln()).collect();
        Ok(RpmForward {
            log_f_x,
            log_f_w,
            log_pc,
            log_py,
            log_prior,
            x_trace,
            w_trace,
            concept_trace,
            concept_logp,
            log_y_table,
        })
    }
}

/// Log joint weights for every point of a batch, given mixture marginals.
/// Returns the `n × k_u` matrix and the number of floored logarithms.
pub fn log_joint_weights_batch(fwd: &RpmForward, mix: &MixtureMarginals) -> Result<(Array2<f64>, usize)> {
    let k_u = fwd.log_prior.len();
    if mix.f_x.len() != k_u || mix.f_w.len() != k_u {
        return Err(Error::Shape("mixture marginals must have k_u entries".into()));
    }
    let mut floored = 0;
    let log_fx: Vec<f64> = mix.f_x.iter().map(|&p| floored_ln(p, &mut floored)).collect();
    let log_fw: Vec<f64> = mix.f_w.iter().map(|&p| floored_ln(p, &mut floored)).collect();
    let mut out = Array2::zeros((fwd.len(), k_u));
    for ((i, u), v) in out.indexed_iter_mut() {
        *v = fwd.log_f_x[[i, u]] - log_fx[u] + fwd.log_f_w[[i, u]] - log_fw[u]
            + fwd.log_pc[[i, u]]
            + fwd.log_py[[i, u]]
            + fwd.log_prior[u];
    }
    if let Some(((i, u), _)) = out.indexed_iter().find(|(_, v)| v.is_nan()) {
        return Err(Error::numeric(format!("log joint weight of point {i}, latent {u}")));
    }
    Ok((out, floored))
}

/// Unnormalised log posterior over `U` for a single source tuple:
/// `log f(u|x) - log F_x(u) + log g(u|w) - log F_w(u) + log P(c|x,u) +
/// log P(y|c,u) + log P(u)`.
pub fn log_joint_weights(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    x: &[f64],
    w: &[f64],
    c: usize,
    y: usize,
) -> Result<Vec<f64>> {
    let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let wv = ArrayView2::from_shape((1, w.len()), w).map_err(|e| Error::Shape(e.to_string()))?;
    let fwd = model.forward(&SourceView { x: xv, w: wv, c: &[c], y: &[y] })?;
    Ok(log_joint_weights_batch(&fwd, mix)?.0.row(0).to_vec())
}

pub(crate) fn free_energy_from(fwd: &RpmForward, mix: &MixtureMarginals, eta: &PosteriorMatrix, beta: f64) -> Result<f64> {
    if eta.rows.dim() != fwd.log_f_x.dim() {
        return Err(Error::Shape(format!(
            "posterior is {:?} but the batch is {:?}",
            eta.rows.dim(),
            fwd.log_f_x.dim()
        )));
    }
    let (logw, _) = log_joint_weights_batch(fwd, mix)?;
    let n = fwd.len() as f64;
    let mut total = 0.0;
    for (lw, e) in logw.rows().into_iter().zip(eta.rows.rows()) {
        let expected: f64 = lw.iter().zip(e.iter()).map(|(a, b)| a * b).sum();
        total += expected + beta * entropy(e.as_slice().expect("standard layout"));
    }
    Ok(total / n)
}

/// Batch-average free energy `⟨log joint⟩_η + beta · H[η]` under the given
/// mixture marginals.
pub fn free_energy(
    model: &PartialRpm,
    mix: &MixtureMarginals,
    batch: &SourceView,
    eta: &PosteriorMatrix,
    beta: f64,
) -> Result<f64> {
    let fwd = model.forward(batch)?;
    free_energy_from(&fwd, mix, eta, beta)
}

/// The source free energy as a function of the model parameters, with the
/// posteriors `eta` held fixed and the mixture marginals recomputed from the
/// batch (so gradients also flow through the mixture denominators).
pub struct SourceObjective<'a> {
    pub batch: SourceView<'a>,
    pub eta: &'a PosteriorMatrix,
    pub beta: f64,
}

/// Gradient of the free energy with respect to the recognition logits of each
/// point, including the path through the batch mixture.
fn recognition_logit_grad(log_f: &Array2<f64>, eta: &Array2<f64>, mixture: &[f64]) -> Array2<f64> {
    let (n, k_u) = log_f.dim();
    let inv_n = 1.0 / n as f64;
    let eta_mean = eta.mean_axis(Axis(0)).expect("non-empty");
    let ratio: Vec<f64> = (0..k_u)
        .map(|u| if mixture[u] < LOG_FLOOR { 0.0 } else { eta_mean[u] / mixture[u] })
        .collect();
    let mut grad = Array2::zeros((n, k_u));
    for i in 0..n {
        let f: Vec<f64> = log_f.row(i).iter().map(|v| v.exp()).collect();
        let mean_ratio: f64 = f.iter().zip(&ratio).map(|(a, b)| a * b).sum();
        for k in 0..k_u {
            grad[[i, k]] = inv_n * (eta[[i, k]] - f[k] - f[k] * (ratio[k] - mean_ratio));
        }
    }
    grad
}

impl SourceObjective<'_> {
    /// Value and gradient from an already computed forward pass.
    pub fn value_and_grad_from(&self, model: &PartialRpm, fwd: &RpmForward) -> Result<(f64, PartialRpm)> {
        let mix = fwd.batch_mixture();
        let value = free_energy_from(fwd, &mix, self.eta, self.beta)?;
        let n = fwd.len();
        let dims = model.dims;
        let inv_n = 1.0 / n as f64;
        let eta = &self.eta.rows;

        let d_x = recognition_logit_grad(&fwd.log_f_x, eta, &mix.f_x);
        let recog_x = model.recog_x.backward(&fwd.x_trace, d_x.view());

        let d_w = recognition_logit_grad(&fwd.log_f_w, eta, &mix.f_w);
        let recog_w = match (&fwd.w_trace, &model.recog_w) {
            (WTrace::Table(idx), RecogW::Table(table)) => {
                let mut g = Array2::zeros(table.dim());
                for (i, &level) in idx.iter().enumerate() {
                    let mut row = g.row_mut(level);
                    row += &d_w.row(i);
                }
                RecogW::Table(g)
            }
            (WTrace::Mlp(trace), RecogW::Mlp(net)) => RecogW::Mlp(net.backward(trace, d_w.view())),
            _ => unreachable!("trace variant follows the model"),
        };

        let mut d_concept = Array2::zeros(fwd.concept_logp.dim());
        for u in 0..dims.k_u {
            for i in 0..n {
                let a = eta[[i, u]] * inv_n;
                let row = u * n + i;
                for k in 0..dims.k_c {
                    let target = if k == self.batch.c[i] { 1.0 } else { 0.0 };
                    d_concept[[row, k]] = a * (target - fwd.concept_logp[[row, k]].exp());
                }
            }
        }
        let concept_net = model.concept_net.backward(&fwd.concept_trace, d_concept.view());

        let mut y_logits = ndarray::Array3::zeros(model.y_logits.dim());
        for i in 0..n {
            for u in 0..dims.k_u {
                let a = eta[[i, u]] * inv_n;
                for k in 0..dims.k_y {
                    let target = if k == self.batch.y[i] { 1.0 } else { 0.0 };
                    y_logits[[self.batch.c[i], u, k]] +=
                        a * (target - fwd.log_y_table[[self.batch.c[i], u, k]].exp());
                }
            }
        }

        let eta_mean = eta.mean_axis(Axis(0)).expect("non-empty");
        let prior_logits =
            Array1::from_iter((0..dims.k_u).map(|k| eta_mean[k] - fwd.log_prior[k].exp()));

        Ok((
            value,
            PartialRpm {
                dims,
                recog_x,
                recog_w,
                concept_net,
                y_logits,
                prior_logits,
            },
        ))
    }
}

impl Objective<PartialRpm> for SourceObjective<'_> {
    fn value(&self, model: &PartialRpm) -> Result<f64> {
        let fwd = model.forward(&self.batch)?;
        free_energy_from(&fwd, &fwd.batch_mixture(), self.eta, self.beta)
    }

    fn value_and_grad(&self, model: &PartialRpm) -> Result<(f64, PartialRpm)> {
        let fwd = model.forward(&self.batch)?;
        self.value_and_grad_from(model, &fwd)
    }
}
