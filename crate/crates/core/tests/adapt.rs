mod common;

use common::{naive_concept, naive_forward, naive_softmax, naive_y, tiny_data, tiny_model};
use ndarray::Array2;
use partial_rpm::adapt::{
    fit_target_prior, predict_source_batch, predict_target, predict_target_batch, target_posterior,
    AdaptHyper, TargetPrior,
};
use partial_rpm::baselines::oracle_plugin_app_a;
use partial_rpm::datagen::{gen_app_a, GenParamsA};
use partial_rpm::nn::Parameters;
use partial_rpm::rpm::{MixtureMarginals, ModelDims, PartialRpm, WRecognition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims() -> ModelDims {
    ModelDims { k_u: 3, k_c: 3, k_y: 2, d_x: 2, d_w: 1 }
}

fn random_mix(rng: &mut ChaCha8Rng, k: usize) -> MixtureMarginals {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    MixtureMarginals { f_x: raw.iter().map(|v| v / s).collect(), f_w: vec![1.0 / k as f64; k], source_size: 10 }
}

fn random_prior(rng: &mut ChaCha8Rng, k: usize) -> TargetPrior {
    TargetPrior::from_logits((0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// `Σ_u Σ_c P(y|c,u) P(c|x,u) Q(u|x)` by explicit loops in probability space.
fn enumerate_prediction(m: &PartialRpm, mix: &MixtureMarginals, q: &TargetPrior, x: &[f64]) -> Vec<f64> {
    let d = m.dims;
    let f = naive_softmax(&naive_forward(&m.recog_x, x));
    let unnorm: Vec<f64> = (0..d.k_u).map(|u| f[u] * q.q[u] / mix.f_x[u]).collect();
    let z: f64 = unnorm.iter().sum();
    let mut out = vec![0.0; d.k_y];
    for u in 0..d.k_u {
        let pc = naive_concept(m, x, u);
        for c in 0..d.k_c {
            let py = naive_y(m, c, u);
            for y in 0..d.k_y {
                out[y] += py[y] * pc[c] * unnorm[u] / z;
            }
        }
    }
    out
}

#[test]
fn prediction_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..30 {
        let m = tiny_model(dims(), WRecognition::Table { levels: 2 }, 4, seed);
        let mix = random_mix(&mut rng, 3);
        let q = random_prior(&mut rng, 3);
        let data = tiny_data(5, dims(), Some(2), seed);
        let batch = predict_target_batch(&m, &mix, &q, data.x.view()).unwrap();
        for i in 0..5 {
            let x = data.x.row(i).to_vec();
            let oracle = enumerate_prediction(&m, &mix, &q, &x);
            let single = predict_target(&m, &mix, &q, &x).unwrap();
            for y in 0..2 {
                assert!((batch[[i, y]] - oracle[y]).abs() < 1e-12);
                assert_eq!(batch[[i, y]], single[y]);
            }
        }
    }
}

#[test]
fn relabelling_latents_leaves_predictions_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..10 {
        let m = tiny_model(dims(), WRecognition::Table { levels: 2 }, 4, seed);
        let mix = random_mix(&mut rng, 3);
        let q = random_prior(&mut rng, 3);
        let perm = [2, 0, 1];
        let pm = m.permute_latent(&perm).unwrap();
        let pmix = MixtureMarginals {
            f_x: perm.iter().map(|&p| mix.f_x[p]).collect(),
            f_w: perm.iter().map(|&p| mix.f_w[p]).collect(),
            source_size: mix.source_size,
        };
        let pq = q.permute(&perm);
        let data = tiny_data(6, dims(), Some(2), seed + 7);
        let a = predict_target_batch(&m, &mix, &q, data.x.view()).unwrap();
        let b = predict_target_batch(&pm, &pmix, &pq, data.x.view()).unwrap();
        assert!((a - b).iter().all(|d| d.abs() < 1e-12));
        let post = target_posterior(&m, &mix, &q, &data.x.row(0).to_vec()).unwrap();
        let ppost = target_posterior(&pm, &pmix, &pq, &data.x.row(0).to_vec()).unwrap();
        for u in 0..3 {
            assert!((ppost[u] - post[perm[u]]).abs() < 1e-12);
        }
    }
}

#[test]
fn source_prior_reproduces_the_source_predictive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = tiny_model(dims(), WRecognition::Table { levels: 2 }, 4, 5);
    let mix = random_mix(&mut rng, 3);
    let data = tiny_data(20, dims(), Some(2), 5);
    let adapted = predict_target_batch(&m, &mix, &TargetPrior::source(&m), data.x.view()).unwrap();
    let source = predict_source_batch(&m, &mix, data.x.view()).unwrap();
    assert_eq!(adapted, source);
    let prior = m.prior();
    for i in 0..20 {
        let x = data.x.row(i).to_vec();
        let q = TargetPrior::from_probs(&prior).unwrap();
        let oracle = enumerate_prediction(&m, &mix, &q, &x);
        assert!((source[[i, 1]] - oracle[1]).abs() < 1e-12);
    }
}

#[test]
fn target_em_is_monotone_and_touches_only_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..5 {
        let m = tiny_model(dims(), WRecognition::Table { levels: 2 }, 4, seed);
        let before = m.to_flat();
        let mix = random_mix(&mut rng, 3);
        let x = Array2::from_shape_fn((300, 2), |_| rng.gen_range(-3.0..3.0));
        let fit = fit_target_prior(&m, &mix, x.view(), &AdaptHyper::default()).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
        assert!(fit.converged);
        assert_eq!(m.to_flat(), before);
        // the fixed point is the mean posterior under the fitted prior
        let post = partial_rpm::adapt::target_posteriors(&m, &mix, &fit.prior, x.view()).unwrap();
        let mean = post.mean_axis(ndarray::Axis(0)).unwrap();
        for u in 0..3 {
            assert!((mean[u] - fit.prior.q[u]).abs() < 1e-4);
        }
    }
}

#[test]
fn plugin_model_recovers_the_generating_prior() {
    let params = GenParamsA::new(2, GenParamsA::SOURCE_PI);
    let (m, mix) = oracle_plugin_app_a(&params).unwrap();
    let data = gen_app_a(70_000, 2, GenParamsA::SOURCE_PI, 17).unwrap();
    let fit = fit_target_prior(&m, &mix, data.source.x.view(), &AdaptHyper::default()).unwrap();
    let prior = m.prior();
    for u in 0..2 {
        assert!((fit.prior.q[u] - prior[u]).abs() <= 0.02, "{:?} vs {prior:?}", fit.prior.q);
    }
}

proptest! {
    #[test]
    fn predictions_are_distributions(seed in 0u64..1000, x0 in -20.0f64..20.0, x1 in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tiny_model(dims(), WRecognition::Table { levels: 2 }, 4, seed);
        let mix = random_mix(&mut rng, 3);
        let q = random_prior(&mut rng, 3);
        let p = predict_target(&m, &mix, &q, &[x0, x1]).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let post = target_posterior(&m, &mix, &q, &[x0, x1]).unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
