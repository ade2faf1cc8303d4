use ndarray::{Array1, Array2, ArrayView2};

use crate::datagen::{GenParamsA, GenParamsB, TemplateBank};
use crate::error::{Error, Result};
use crate::rpm::{MixtureMarginals, ModelDims, PartialRpm, RecogW, RpmArchitecture, WRecognition};

/// Offset that switches off the concept-net units of inactive latent values
/// in [`oracle_plugin_app_a`].
const GATE: f64 = 1e6;

fn check_pi(pi: &[f64], k: usize) -> Result<()> {
    let s: f64 = pi.iter().sum();
    if pi.len() != k || pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{pi:?} is not a distribution over {k} values")));
    }
    Ok(())
}

/// Normalises `exp(log_w)`; entries at `-inf` get zero weight.
fn normalise_log(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_w.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Exact `P(Y|x)` under the continuous-observation process with prior
/// `pi_eval` on `U`. The noise coordinates of `x` do not depend on `U` and
/// drop out.
pub fn bayes_oracle_app_a(params: &GenParamsA, pi_eval: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_pi(pi_eval, 2)?;
    if x.len() != params.d_x {
        return Err(Error::Shape(format!("expected {} coordinates, got {}", params.d_x, x.len())));
    }
    let x01 = [x[0], x[1]];
    let log_w: Vec<f64> = (0..2)
        .map(|u| safe_ln(pi_eval[u]) + params.log_px_informative(x01, u))
        .collect();
    let post = normalise_log(&log_w);
    let mut out = vec![0.0; 2];
    for (u, &pu) in post.iter().enumerate() {
        let pc1 = params.p_c1(x01, u);
        for (c, pc) in [1.0 - pc1, pc1].into_iter().enumerate() {
            let py1 = params.p_y1(c, u);
            out[0] += pu * pc * (1.0 - py1);
            out[1] += pu * pc * py1;
        }
    }
    Ok(out)
}

pub fn bayes_oracle_app_a_batch(params: &GenParamsA, pi_eval: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), 2));
    for (i, row) in x.rows().into_iter().enumerate() {
        let p = bayes_oracle_app_a(params, pi_eval, &row.to_vec())?;
        out.row_mut(i).assign(&Array1::from(p));
    }
    Ok(out)
}

/// Exact `P(Y|x)` under the image-observation process, enumerating `U` and
/// the class `X̃` behind the surrogate observation `x`.
pub fn bayes_oracle_app_b(
    params: &GenParamsB,
    bank: &TemplateBank,
    pi_eval: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    check_pi(pi_eval, GenParamsB::K_U)?;
    if x.len() != bank.d_embed() {
        return Err(Error::Shape(format!("expected {} coordinates, got {}", bank.d_embed(), x.len())));
    }
    if !(bank.noise_std > 0.0) {
        return Err(Error::Config("the oracle needs positive observation noise".into()));
    }
    let var2 = 2.0 * bank.noise_std * bank.noise_std;
    let log_lik: Vec<f64> = (0..GenParamsB::K_XT)
        .map(|xt| {
            -bank
                .templates
                .row(xt)
                .iter()
                .zip(x)
                .map(|(t, v)| (v - t) * (v - t))
                .sum::<f64>()
                / var2
        })
        .collect();
    let mut log_w = Vec::with_capacity(GenParamsB::K_U * GenParamsB::K_XT);
    for u in 0..GenParamsB::K_U {
        let p_xt = params.p_xt(u);
        for xt in 0..GenParamsB::K_XT {
            log_w.push(safe_ln(pi_eval[u]) + safe_ln(p_xt[xt]) + log_lik[xt]);
        }
    }
    let post = normalise_log(&log_w);
    let mut out = vec![0.0; GenParamsB::K_Y];
    for u in 0..GenParamsB::K_U {
        for xt in 0..GenParamsB::K_XT {
            let w = post[u * GenParamsB::K_XT + xt];
            if w == 0.0 {
                continue;
            }
            for (c, pc) in params.p_c(xt, u).into_iter().enumerate() {
                for (y, py) in params.p_y(c, u).into_iter().enumerate() {
                    out[y] += w * pc * py;
                }
            }
        }
    }
    Ok(out)
}

pub fn bayes_oracle_app_b_batch(
    params: &GenParamsB,
    bank: &TemplateBank,
    pi_eval: &[f64],
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), GenParamsB::K_Y));
    for (i, row) in x.rows().into_iter().enumerate() {
        let p = bayes_oracle_app_b(params, bank, pi_eval, &row.to_vec())?;
        out.row_mut(i).assign(&Array1::from(p));
    }
    Ok(out)
}

/// A partial RPM whose factors reproduce the continuous-observation process
/// exactly, together with the mixture it is consistent with.
///
/// The `x` recognition outputs `x·μ_u - |μ_u|²/2` through ReLU pairs, which is
/// the Gaussian posterior under a uniform reference mixture, so `F_x` is
/// `[0.5, 0.5]`. The concept net computes the true logit of `C = 1` for the
/// active latent value and switches the other off with a large negative
/// offset.
pub fn oracle_plugin_app_a(params: &GenParamsA) -> Result<(PartialRpm, MixtureMarginals)> {
    let d = params.d_x;
    let dims = ModelDims { k_u: 2, k_c: 2, k_y: 2, d_x: d, d_w: 1 };
    let arch = RpmArchitecture {
        hidden_x: vec![4],
        hidden_concept: vec![4],
        w: WRecognition::Table { levels: 2 },
    };
    let mut m = PartialRpm::init(dims, &arch, 0)?;

    let rx = &mut m.recog_x;
    rx.weights[0].fill(0.0);
    rx.biases[0].fill(0.0);
    for j in 0..2 {
        rx.weights[0][[2 * j, j]] = 1.0;
        rx.weights[0][[2 * j + 1, j]] = -1.0;
    }
    for u in 0..2 {
        let mu = params.m_x_u[u];
        for j in 0..2 {
            rx.weights[1][[u, 2 * j]] = mu[j];
            rx.weights[1][[u, 2 * j + 1]] = -mu[j];
        }
        rx.biases[1][u] = -0.5 * (mu[0] * mu[0] + mu[1] * mu[1]);
    }

    let cn = &mut m.concept_net;
    cn.weights[0].fill(0.0);
    for u in 0..2 {
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let h = 2 * u + s;
            cn.weights[0][[h, 0]] = sign * params.m_c_x[u][0];
            cn.weights[0][[h, 1]] = sign * params.m_c_x[u][1];
            cn.weights[0][[h, d + u]] = GATE;
            cn.biases[0][h] = sign * params.m_c_u[u] - GATE;
        }
    }
    cn.weights[1].fill(0.0);
    cn.biases[1].fill(0.0);
    for h in 0..4 {
        cn.weights[1][[1, h]] = if h % 2 == 0 { 1.0 } else { -1.0 };
    }

    for c in 0..2 {
        for u in 0..2 {
            m.y_logits[[c, u, 0]] = 0.0;
            m.y_logits[[c, u, 1]] = params.m_y_c[u][c] + params.m_y_u[u];
        }
    }
    if let RecogW::Table(t) = &mut m.recog_w {
        for u in 0..2 {
            let p1 = params.p_w1(u);
            t[[0, u]] = (1.0 - p1).ln();
            t[[1, u]] = p1.ln();
        }
    }
    m.prior_logits = params.pi.iter().map(|&p| safe_ln(p).max(-700.0)).collect();
    m.validate()?;
    let mix = MixtureMarginals { f_x: vec![0.5, 0.5], f_w: vec![0.5, 0.5], source_size: 0 };
    Ok((m, mix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{predict_target, target_posterior, TargetPrior};
    use crate::datagen::{sigmoid, EmbedConfig};
    use crate::nn::mlp_logits;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()
    }

    #[test]
    fn point_mass_prior_reduces_to_one_latent() {
        let p = GenParamsA::new(4, GenParamsA::SOURCE_PI);
        let x = [0.3, -1.2, 5.0, -5.0];
        let out = bayes_oracle_app_a(&p, &[0.0, 1.0], &x).unwrap();
        let pc1 = p.p_c1([0.3, -1.2], 1);
        let py1 = (1.0 - pc1) * p.p_y1(0, 1) + pc1 * p.p_y1(1, 1);
        assert!((out[1] - py1).abs() < 1e-15);
    }

    #[test]
    fn outputs_are_normalised() {
        let pa = GenParamsA::new(6, GenParamsA::SOURCE_PI);
        let pb = GenParamsB::new(GenParamsB::source_pi(), EmbedConfig::default());
        let bank = TemplateBank::new(&pb.embed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = bayes_oracle_app_a(&pa, &[0.3, 0.7], &point(&mut rng, 6)).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let b = bayes_oracle_app_b(&pb, &bank, &GenParamsB::target_pi(), &point(&mut rng, 64)).unwrap();
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_width_is_refused() {
        let p = GenParamsA::new(4, GenParamsA::SOURCE_PI);
        assert!(bayes_oracle_app_a(&p, &[0.5, 0.5], &[0.0, 0.0]).is_err());
        assert!(bayes_oracle_app_a(&p, &[0.5, 0.6], &[0.0; 4]).is_err());
    }

    #[test]
    fn image_oracle_on_exact_templates() {
        let pb = GenParamsB::new(GenParamsB::source_pi(), EmbedConfig::default());
        let bank = TemplateBank::new(&pb.embed).unwrap();
        // the observation sits on the X̃ = 1 template, which only U0 and U2 emit
        let x = bank.templates.row(1).to_vec();
        let pi = [0.2, 0.3, 0.5];
        let out = bayes_oracle_app_b(&pb, &bank, &pi, &x).unwrap();
        let weights = [pi[0] * pb.p_xt(0)[1], 0.0, pi[2] * pb.p_xt(2)[1]];
        let z: f64 = weights.iter().sum();
        let mut expected = 0.0;
        for u in [0, 2] {
            for (c, pc) in pb.p_c(1, u).into_iter().enumerate() {
                expected += weights[u] / z * pc * pb.p_y(c, u)[1];
            }
        }
        assert!((out[1] - expected).abs() < 1e-9);
    }

    #[test]
    fn plugin_factors_match_the_generator() {
        let p = GenParamsA::new(4, GenParamsA::SOURCE_PI);
        let (m, mix) = oracle_plugin_app_a(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = point(&mut rng, 4);
            let x01 = [x[0], x[1]];
            for u in 0..2 {
                let mut input = x.clone();
                input.extend([(u == 0) as u8 as f64, (u == 1) as u8 as f64]);
                let l = mlp_logits(&m.concept_net, &input).unwrap();
                assert!((sigmoid(l[1] - l[0]) - p.p_c1(x01, u)).abs() < 1e-9);
            }
            let q = TargetPrior::from_probs(&[0.9, 0.1]).unwrap();
            let post = target_posterior(&m, &mix, &q, &x).unwrap();
            let lw = [0.9f64.ln() + p.log_px_informative(x01, 0), 0.1f64.ln() + p.log_px_informative(x01, 1)];
            let expected = 1.0 / (1.0 + (lw[1] - lw[0]).exp());
            assert!((post[0] - expected).abs() < 1e-9);
            let a = predict_target(&m, &mix, &q, &x).unwrap();
            let b = bayes_oracle_app_a(&p, &[0.9, 0.1], &x).unwrap();
            assert!((a[1] - b[1]).abs() < 1e-9);
        }
    }
}
