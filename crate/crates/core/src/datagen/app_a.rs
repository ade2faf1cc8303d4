use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::batch::{DatasetMeta, DatasetRole, EvalLabels, Generated, SourceBatch, DATASET_FORMAT_VERSION};
use super::params::{sigmoid, GenParamsA};
use super::{check_simplex, sample_categorical, stream};
use crate::error::{Error, Result};

const STREAM_U: u64 = 0;
const STREAM_W: u64 = 1;
const STREAM_X: u64 = 2;
const STREAM_C: u64 = 3;
const STREAM_Y: u64 = 4;
const STREAM_NOISE_BASE: u64 = 16;

/// Draws `n` tuples from the numerical-simulation process.
///
/// `X[0:2] | u ~ N(m_x_u[u], I)`, the remaining `d_x - 2` coordinates are
/// `±10` with equal probability, `W = 1[N(m_w_u[u], 1) > 0]`, and `C`, `Y`
/// are logistic in `(X[0:2], U)` and `(C, U)` respectively.
pub fn gen_app_a(n: usize, d_x: usize, pi: [f64; 2], seed: u64) -> Result<Generated> {
    if d_x < 2 || !d_x.is_multiple_of(2) {
        return Err(Error::Config(format!("d_x must be even and at least 2, got {d_x}")));
    }
    check_simplex(&pi, 2)?;
    let params = GenParamsA::new(d_x, pi);

    let mut rng_u = stream(seed, STREAM_U);
    let mut rng_w = stream(seed, STREAM_W);
    let mut rng_x = stream(seed, STREAM_X);
    let mut rng_c = stream(seed, STREAM_C);
    let mut rng_y = stream(seed, STREAM_Y);

    let mut x = Array2::zeros((n, d_x));
    let mut w = Array2::zeros((n, 1));
    let mut u_true = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let u = sample_categorical(&pi, rng_u.gen::<f64>());
        let latent_w: f64 = rng_w.sample::<f64, _>(StandardNormal) + params.m_w_u[u];
        w[[i, 0]] = if latent_w > 0.0 { 1.0 } else { 0.0 };
        let x0 = params.m_x_u[u][0] + rng_x.sample::<f64, _>(StandardNormal);
        let x1 = params.m_x_u[u][1] + rng_x.sample::<f64, _>(StandardNormal);
        x[[i, 0]] = x0;
        x[[i, 1]] = x1;
        let ci = usize::from(rng_c.gen::<f64>() < params.p_c1([x0, x1], u));
        let yi = usize::from(rng_y.gen::<f64>() < sigmoid(params.m_y_c[u][ci] + params.m_y_u[u]));
        u_true.push(u);
        c.push(ci);
        y.push(yi);
    }
    for j in 2..d_x {
        let mut rng = stream(seed, STREAM_NOISE_BASE + j as u64);
        for i in 0..n {
            x[[i, j]] = if rng.gen::<bool>() { 10.0 } else { -10.0 };
        }
    }

    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION.to_string(),
        generator: "app_a".into(),
        params_hash: params.hash(),
        seed,
        n,
        d_x,
        d_w: 1,
        k_u: 2,
        k_c: 2,
        k_y: 2,
        pi: pi.to_vec(),
        role: DatasetRole::Source,
        data_hash: String::new(),
    };
    let mut source = SourceBatch { x, w, c, y, meta };
    source.meta.data_hash = source.content_hash();
    Ok(Generated { source, eval: EvalLabels { u_true, y_true: None, x_class: None, w_class: None } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_dimension() {
        assert!(gen_app_a(10, 3, [0.5, 0.5], 0).is_err());
        assert!(gen_app_a(10, 0, [0.5, 0.5], 0).is_err());
        assert!(gen_app_a(10, 2, [0.5, 0.6], 0).is_err());
    }

    #[test]
    fn seeded_and_stream_stable() {
        let a = gen_app_a(200, 2, [0.1, 0.9], 7).unwrap();
        let b = gen_app_a(200, 2, [0.1, 0.9], 7).unwrap();
        assert_eq!(a, b);
        let wide = gen_app_a(200, 8, [0.1, 0.9], 7).unwrap();
        assert_eq!(wide.eval.u_true, a.eval.u_true);
        assert_eq!(wide.source.w, a.source.w);
        assert_eq!(wide.source.c, a.source.c);
        assert_eq!(wide.source.y, a.source.y);
        assert_eq!(wide.source.x.column(1), a.source.x.column(1));
    }

    #[test]
    fn noise_coordinates_are_plus_minus_ten() {
        let g = gen_app_a(500, 6, [0.5, 0.5], 1).unwrap();
        for j in 2..6 {
            assert!(g.source.x.column(j).iter().all(|&v| v == 10.0 || v == -10.0));
        }
    }
}
