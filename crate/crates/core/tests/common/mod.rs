#![allow(dead_code)]

use ndarray::Array2;
use partial_rpm::nn::MlpParams;
use partial_rpm::rpm::{ModelDims, PartialRpm, RecogW, RpmArchitecture, WRecognition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random source tuples for tiny-instance checks.
pub struct TinyData {
    pub x: Array2<f64>,
    pub w: Array2<f64>,
    pub c: Vec<usize>,
    pub y: Vec<usize>,
}

pub fn tiny_data(n: usize, dims: ModelDims, w_levels: Option<usize>, seed: u64) -> TinyData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, dims.d_x), |_| rng.sample(StandardNormal));
    let w = match w_levels {
        Some(levels) => Array2::from_shape_fn((n, 1), |_| rng.gen_range(0..levels) as f64),
        None => Array2::from_shape_fn((n, dims.d_w), |_| rng.sample(StandardNormal)),
    };
    let c = (0..n).map(|_| rng.gen_range(0..dims.k_c)).collect();
    let y = (0..n).map(|_| rng.gen_range(0..dims.k_y)).collect();
    TinyData { x, w, c, y }
}

/// A tiny model with all parameters (including biases and tables) randomised.
pub fn tiny_model(dims: ModelDims, w: WRecognition, hidden: usize, seed: u64) -> PartialRpm {
    let arch = RpmArchitecture { hidden_x: vec![hidden], hidden_concept: vec![hidden], w };
    let mut model = PartialRpm::init(dims, &arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    use partial_rpm::nn::Parameters;
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v += 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    model
}

/// Straightforward loop-based MLP forward pass.
pub fn naive_forward(net: &MlpParams, input: &[f64]) -> Vec<f64> {
    let mut h = input.to_vec();
    let layers = net.weights.len();
    for l in 0..layers {
        let w = &net.weights[l];
        let mut out = vec![0.0; w.nrows()];
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = net.biases[l][i];
            for (j, hj) in h.iter().enumerate() {
                s += w[[i, j]] * hj;
            }
            *o = if l + 1 < layers { s.max(0.0) } else { s };
        }
        h = out;
    }
    h
}

pub fn naive_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn naive_recog_w(model: &PartialRpm, w: &[f64]) -> Vec<f64> {
    match &model.recog_w {
        RecogW::Table(t) => naive_softmax(&t.row(w[0] as usize).to_vec()),
        RecogW::Mlp(net) => naive_softmax(&naive_forward(net, w)),
    }
}

pub fn naive_concept(model: &PartialRpm, x: &[f64], u: usize) -> Vec<f64> {
    let mut input = x.to_vec();
    input.extend((0..model.dims.k_u).map(|k| if k == u { 1.0 } else { 0.0 }));
    naive_softmax(&naive_forward(&model.concept_net, &input))
}

pub fn naive_y(model: &PartialRpm, c: usize, u: usize) -> Vec<f64> {
    naive_softmax(&model.y_logits.slice(ndarray::s![c, u, ..]).to_vec())
}

/// Posterior over `U` for every point by enumerating the normalised joint in
/// probability space, with mixtures averaged over `data` directly.
pub fn brute_force_posteriors(model: &PartialRpm, data: &TinyData) -> Vec<Vec<f64>> {
    let n = data.x.nrows();
    let k_u = model.dims.k_u;
    let fx: Vec<Vec<f64>> = (0..n)
        .map(|i| naive_softmax(&naive_forward(&model.recog_x, &data.x.row(i).to_vec())))
        .collect();
    let gw: Vec<Vec<f64>> = (0..n).map(|i| naive_recog_w(model, &data.w.row(i).to_vec())).collect();
    let mix = |rows: &Vec<Vec<f64>>, u: usize| rows.iter().map(|r| r[u]).sum::<f64>() / n as f64;
    let prior = naive_softmax(&model.prior_logits.to_vec());
    (0..n)
        .map(|i| {
            let joint: Vec<f64> = (0..k_u)
                .map(|u| {
                    fx[i][u] / mix(&fx, u) * gw[i][u] / mix(&gw, u)
                        * naive_concept(model, &data.x.row(i).to_vec(), u)[data.c[i]]
                        * naive_y(model, data.c[i], u)[data.y[i]]
                        * prior[u]
                })
                .collect();
            let z: f64 = joint.iter().sum();
            joint.iter().map(|j| j / z).collect()
        })
        .collect()
}
