use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::params::Parameters;
use crate::error::{Error, Result};

/// Dense feed-forward network: ReLU on hidden layers, identity on the output.
///
/// `weights[l]` has shape `(layer_sizes[l + 1], layer_sizes[l])`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Per-layer activations retained by a forward pass for backpropagation.
///
/// `activations[0]` is the input batch, intermediate entries are post-ReLU
/// hidden activations and the last entry holds the logits.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub activations: Vec<Array2<f64>>,
}

impl MlpTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds at least the input")
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Zero-mean normal weights with standard deviation `1/sqrt(fan_in)`, zero
/// biases.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive scale");
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(&mut rng)));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpParams {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
    })
}

/// Output-layer pre-activations for a single input vector.
pub fn mlp_logits(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    let input = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(params.logits_batch(input)?.into_raw_vec_and_offset().0)
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|p| Array2::zeros((p[1], p[0])))
                .collect(),
            biases: layer_sizes.windows(2).map(|p| Array1::zeros(p[1])).collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated sizes")
    }

    /// Checks shapes against `layer_sizes` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        check_sizes(&self.layer_sizes)?;
        let layers = self.layer_sizes.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Shape(format!(
                "expected {layers} layers, found {} weights and {} biases",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[l].dim() != (pair[1], pair[0]) {
                return Err(Error::Shape(format!(
                    "layer {l} weight is {:?}, expected ({}, {})",
                    self.weights[l].dim(),
                    pair[1],
                    pair[0]
                )));
            }
            if self.biases[l].len() != pair[1] {
                return Err(Error::Shape(format!(
                    "layer {l} bias has length {}, expected {}",
                    self.biases[l].len(),
                    pair[1]
                )));
            }
        }
        if let Some((ti, _)) = self
            .tensors()
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::numeric(format!("MLP parameter tensor {ti}")));
        }
        Ok(())
    }

    /// Forward pass over a batch (one row per example), keeping activations.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpTrace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects inputs of width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].dot(&w.t());
            z += b;
            if l + 1 < layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(MlpTrace { activations })
    }

    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut trace = self.forward(x)?;
        Ok(trace.activations.pop().expect("non-empty trace"))
    }

    /// Backpropagates `d_logits` (derivative of a scalar with respect to each
    /// logit, one row per example) and returns the parameter gradient.
    pub fn backward(&self, trace: &MlpTrace, d_logits: ArrayView2<f64>) -> MlpParams {
        let layers = self.weights.len();
        let mut grad_w = Vec::with_capacity(layers);
        let mut grad_b = Vec::with_capacity(layers);
        let mut delta = d_logits.to_owned();
        for l in (0..layers).rev() {
            grad_w.push(delta.t().dot(&trace.activations[l]));
            grad_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l]);
                ndarray::Zip::from(&mut upstream)
                    .and(&trace.activations[l])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        grad_w.reverse();
        grad_b.reverse();
        MlpParams {
            layer_sizes: self.layer_sizes.clone(),
            weights: grad_w,
            biases: grad_b,
        }
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// Numerically stable log-softmax (max subtraction).
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("log_softmax input"));
    }
    if let Some(i) = v.iter().position(|x| x.is_nan()) {
        return Err(Error::numeric(format!("log_softmax input entry {i}")));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numeric("log_softmax input maximum"));
    }
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - lse).collect())
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    Ok(log_softmax(v)?.into_iter().map(f64::exp).collect())
}

/// Row-wise log-softmax in place. Rows are assumed finite; callers check the
/// result.
pub fn log_softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
}
