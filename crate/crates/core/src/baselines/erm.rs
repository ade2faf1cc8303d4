use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, mlp_init, AdamState, MlpParams, PlateauSchedule, Sgd};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErmOptimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 penalty on weight matrices; biases are not decayed.
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub optimizer: ErmOptimizer,
    /// Reduce the rate on plateaus of the epoch training loss.
    pub plateau: bool,
    pub seed: u64,
}

impl ErmHyper {
    /// One hidden layer of 100 units, SGD at 0.01 with batches of 128.
    pub fn app_a(seed: u64) -> Self {
        ErmHyper {
            epochs: 500,
            batch_size: 128,
            learning_rate: 0.01,
            weight_decay: 1e-6,
            hidden: vec![100],
            optimizer: ErmOptimizer::Sgd,
            plateau: true,
            seed,
        }
    }

    /// Same network trained with Adam, for the surrogate image observations.
    pub fn app_b(seed: u64) -> Self {
        ErmHyper {
            learning_rate: 1e-3,
            optimizer: ErmOptimizer::Adam,
            ..Self::app_a(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("ERM needs at least one epoch and a positive batch size".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("ERM learning rate must be positive and decay non-negative".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

/// Feed-forward classifier of `Y` from `X`.
#[derive(Clone, Debug)]
pub struct ErmClassifier {
    pub net: MlpParams,
    pub hyper: ErmHyper,
    /// Mean training cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
}

/// Mean cross-entropy of a minibatch and its gradient with respect to the
/// network, weight decay included in the gradient only.
fn batch_step(net: &MlpParams, x: ArrayView2<f64>, y: &[usize], weight_decay: f64) -> Result<(f64, MlpParams)> {
    let trace = net.forward(x)?;
    let mut logp = trace.logits().clone();
    log_softmax_rows(&mut logp);
    let b = y.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = logp.mapv(f64::exp);
    for (i, &yi) in y.iter().enumerate() {
        loss -= logp[[i, yi]];
        d_logits[[i, yi]] -= 1.0;
    }
    d_logits.mapv_inplace(|v| v / b);
    let mut grad = net.backward(&trace, d_logits.view());
    for (g, w) in grad.weights.iter_mut().zip(&net.weights) {
        g.scaled_add(weight_decay, w);
    }
    Ok((loss / b, grad))
}

/// Minimises the mean cross-entropy of `y` given `x` by minibatch descent.
pub fn train_erm(x: ArrayView2<f64>, y: &[usize], k_y: usize, hyper: &ErmHyper) -> Result<ErmClassifier> {
    hyper.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("ERM training set"));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} inputs for {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&v| v >= k_y) {
        return Err(Error::Config(format!("label {bad} outside 0..{k_y}")));
    }
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("ERM training labels are all {}", y[0]);
    }
    let mut sizes = vec![x.ncols()];
    sizes.extend(&hyper.hidden);
    sizes.push(k_y);
    let mut net = mlp_init(&sizes, hyper.seed)?;
    let mut adam = AdamState::new(&net, hyper.learning_rate);
    let mut schedule = PlateauSchedule::new(hyper.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x0e53_0e53_0000_0002);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(hyper.epochs);
    let mut lr = hyper.learning_rate;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grad) = batch_step(&net, xb.view(), &yb, hyper.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("ERM epoch {epoch}, batch {b}: loss")));
            }
            total += loss * chunk.len() as f64;
            match hyper.optimizer {
                ErmOptimizer::Sgd => Sgd { learning_rate: lr }.step(&mut net, &grad)?,
                ErmOptimizer::Adam => {
                    adam.learning_rate = lr;
                    adam.step(&mut net, &grad, false)?
                }
            }
        }
        let epoch_loss = total / n as f64;
        loss_trace.push(epoch_loss);
        if hyper.plateau {
            lr = schedule.update(epoch_loss);
        }
    }
    Ok(ErmClassifier { net, hyper: hyper.clone(), loss_trace })
}

/// Class probabilities for every row of `x`.
pub fn erm_predict_batch(clf: &ErmClassifier, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != clf.net.input_dim() {
        return Err(Error::Shape(format!(
            "classifier expects width {}, got {}",
            clf.net.input_dim(),
            x.ncols()
        )));
    }
    let mut logp = clf.net.logits_batch(x)?;
    log_softmax_rows(&mut logp);
    Ok(logp.mapv(f64::exp))
}

pub fn erm_predict(clf: &ErmClassifier, x: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(erm_predict_batch(clf, x)?.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::accuracy;
    use crate::nn::{finite_diff_grad, log_softmax, max_relative_error, mlp_logits};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let y = x.rows().into_iter().map(|r| usize::from(r[0] + 0.5 * r[1] > 0.0)).collect();
        (x, y)
    }

    fn quick(seed: u64) -> ErmHyper {
        ErmHyper { epochs: 40, hidden: vec![16], ..ErmHyper::app_a(seed) }
    }

    #[test]
    fn separable_data_is_fitted() {
        let (x, y) = toy(600, 1);
        let mut hyper = quick(3);
        hyper.learning_rate = 0.1;
        let clf = train_erm(x.view(), &y, 2, &hyper).unwrap();
        let acc = accuracy(erm_predict_batch(&clf, x.view()).unwrap().view(), &y).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn uninformative_labels_give_majority_rate() {
        let (x, _) = toy(4000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<usize> = (0..4000).map(|_| usize::from(rng.gen::<f64>() < 0.3)).collect();
        let clf = train_erm(x.slice(ndarray::s![..2000, ..]), &y[..2000], 2, &quick(4)).unwrap();
        let test = x.slice(ndarray::s![2000.., ..]);
        let acc = accuracy(erm_predict_batch(&clf, test).unwrap().view(), &y[2000..]).unwrap();
        let majority = y[2000..].iter().filter(|&&v| v == 0).count() as f64 / 2000.0;
        assert!((acc - majority).abs() <= 0.02, "{acc} vs {majority}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy(300, 5);
        let mut hyper = quick(8);
        hyper.epochs = 3;
        let a = train_erm(x.view(), &y, 2, &hyper).unwrap();
        let b = train_erm(x.view(), &y, 2, &hyper).unwrap();
        assert_eq!(a.net, b.net);
        hyper.optimizer = ErmOptimizer::Adam;
        let c = train_erm(x.view(), &y, 2, &hyper).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn zero_network_predicts_uniform() {
        let clf = ErmClassifier {
            net: MlpParams::zeros(&[3, 4, 2]).unwrap(),
            hyper: ErmHyper::app_a(0),
            loss_trace: vec![],
        };
        assert_eq!(erm_predict(&clf, &[1.0, -2.0, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert!(erm_predict(&clf, &[1.0]).is_err());
    }

    #[test]
    fn prediction_is_softmax_of_logits() {
        let (x, y) = toy(100, 6);
        let mut hyper = quick(1);
        hyper.epochs = 2;
        let clf = train_erm(x.view(), &y, 2, &hyper).unwrap();
        let row = x.row(7).to_vec();
        let direct: Vec<f64> = log_softmax(&mlp_logits(&clf.net, &row).unwrap())
            .unwrap()
            .into_iter()
            .map(f64::exp)
            .collect();
        let p = erm_predict(&clf, &row).unwrap();
        for (a, b) in p.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (x, y) = toy(10, 7);
        let net = mlp_init(&[2, 5, 2], 2).unwrap();
        let (_, grad) = batch_step(&net, x.view(), &y, 0.0).unwrap();
        let numeric = finite_diff_grad(|m: &MlpParams| Ok(batch_step(m, x.view(), &y, 0.0)?.0), &net, 1e-5).unwrap();
        assert!(max_relative_error(&grad, &numeric) < 1e-6);
    }

    #[test]
    fn weight_decay_skips_biases() {
        let (x, y) = toy(10, 7);
        let net = mlp_init(&[2, 5, 2], 2).unwrap();
        let (_, plain) = batch_step(&net, x.view(), &y, 0.0).unwrap();
        let (_, decayed) = batch_step(&net, x.view(), &y, 0.5).unwrap();
        assert_eq!(plain.biases, decayed.biases);
        let expected = &plain.weights[0] + &(net.weights[0].clone() * 0.5);
        assert!((&decayed.weights[0] - &expected).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn bad_labels_are_refused() {
        let (x, _) = toy(4, 1);
        assert!(train_erm(x.view(), &[0, 1, 2, 0], 2, &quick(0)).is_err());
        assert!(train_erm(x.view(), &[0, 1], 2, &quick(0)).is_err());
    }
}
