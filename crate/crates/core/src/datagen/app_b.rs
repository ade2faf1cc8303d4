use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::batch::{DatasetMeta, DatasetRole, EvalLabels, Generated, SourceBatch, DATASET_FORMAT_VERSION};
use super::params::{EmbedConfig, GenParamsB};
use super::{check_simplex, sample_categorical, stream};
use crate::error::{Error, Result};

const STREAM_U: u64 = 0;
const STREAM_WT: u64 = 1;
const STREAM_XT: u64 = 2;
const STREAM_C: u64 = 3;
const STREAM_Y: u64 = 4;
const STREAM_X_NOISE: u64 = 5;
const STREAM_W_NOISE: u64 = 6;
const STREAM_TEMPLATE_BASE: u64 = 1000;

/// Bank index of `W̃` class 0; `X̃` classes occupy the indices below it, so
/// `X` and `W` never share a template.
pub const W_CLASS_OFFSET: usize = GenParamsB::K_XT;

/// Fixed per-class template vectors, drawn standard normal and scaled by
/// `template_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    pub templates: Array2<f64>,
    pub noise_std: f64,
}

impl TemplateBank {
    pub const CLASSES: usize = GenParamsB::K_XT + GenParamsB::K_WT;

    pub fn new(cfg: &EmbedConfig) -> Result<Self> {
        if cfg.d_embed == 0 || !(cfg.template_scale > 0.0) || !(cfg.noise_std >= 0.0) {
            return Err(Error::Config(format!("invalid embedding config {cfg:?}")));
        }
        let mut templates = Array2::zeros((Self::CLASSES, cfg.d_embed));
        for (k, mut row) in templates.rows_mut().into_iter().enumerate() {
            let mut rng = stream(cfg.template_seed, STREAM_TEMPLATE_BASE + k as u64);
            for v in row.iter_mut() {
                *v = cfg.template_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(TemplateBank { templates, noise_std: cfg.noise_std })
    }

    pub fn d_embed(&self) -> usize {
        self.templates.ncols()
    }

    /// Template of `class_id` plus `N(0, noise_std²)` per coordinate.
    pub fn embed<R: Rng>(&self, class_id: usize, rng: &mut R) -> Result<Vec<f64>> {
        if class_id >= self.templates.nrows() {
            return Err(Error::Config(format!(
                "class {class_id} outside the template bank of {}",
                self.templates.nrows()
            )));
        }
        Ok(self
            .templates
            .row(class_id)
            .iter()
            .map(|&t| t + self.noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

/// One surrogate observation of `class_id` under `cfg`.
pub fn class_embed<R: Rng>(class_id: usize, cfg: &EmbedConfig, rng: &mut R) -> Result<Vec<f64>> {
    TemplateBank::new(cfg)?.embed(class_id, rng)
}

/// Draws `n` tuples from the image-observation process with surrogate
/// embeddings for `X` and `W`.
pub fn gen_app_b(n: usize, pi: &[f64], seed: u64, embed: &EmbedConfig) -> Result<Generated> {
    check_simplex(pi, GenParamsB::K_U)?;
    let params = GenParamsB::new(pi.to_vec(), embed.clone());
    let bank = TemplateBank::new(embed)?;
    let d = bank.d_embed();

    let mut rng_u = stream(seed, STREAM_U);
    let mut rng_wt = stream(seed, STREAM_WT);
    let mut rng_xt = stream(seed, STREAM_XT);
    let mut rng_c = stream(seed, STREAM_C);
    let mut rng_y = stream(seed, STREAM_Y);
    let mut rng_xn = stream(seed, STREAM_X_NOISE);
    let mut rng_wn = stream(seed, STREAM_W_NOISE);

    let p_wt: Vec<Vec<f64>> = (0..GenParamsB::K_U).map(|u| params.p_wt(u)).collect();
    let p_xt: Vec<Vec<f64>> = (0..GenParamsB::K_U).map(|u| params.p_xt(u)).collect();

    let mut x = Array2::zeros((n, d));
    let mut w = Array2::zeros((n, d));
    let mut u_true = Vec::with_capacity(n);
    let mut x_class = Vec::with_capacity(n);
    let mut w_class = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let u = sample_categorical(pi, rng_u.gen::<f64>());
        let wt = sample_categorical(&p_wt[u], rng_wt.gen::<f64>());
        let xt = sample_categorical(&p_xt[u], rng_xt.gen::<f64>());
        let ci = sample_categorical(&params.p_c(xt, u), rng_c.gen::<f64>());
        let yi = sample_categorical(&params.p_y(ci, u), rng_y.gen::<f64>());
        x.row_mut(i).assign(&ndarray::Array1::from(bank.embed(xt, &mut rng_xn)?));
        w.row_mut(i)
            .assign(&ndarray::Array1::from(bank.embed(W_CLASS_OFFSET + wt, &mut rng_wn)?));
        u_true.push(u);
        x_class.push(xt);
        w_class.push(wt);
        c.push(ci);
        y.push(yi);
    }

    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION.to_string(),
        generator: "app_b".into(),
        params_hash: params.hash(),
        seed,
        n,
        d_x: d,
        d_w: d,
        k_u: GenParamsB::K_U,
        k_c: GenParamsB::K_C,
        k_y: GenParamsB::K_Y,
        pi: pi.to_vec(),
        role: DatasetRole::Source,
        data_hash: String::new(),
    };
    let mut source = SourceBatch { x, w, c, y, meta };
    source.meta.data_hash = source.content_hash();
    Ok(Generated {
        source,
        eval: EvalLabels {
            u_true,
            y_true: None,
            x_class: Some(x_class),
            w_class: Some(w_class),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_gives_exact_template() {
        let cfg = EmbedConfig { noise_std: 0.0, ..Default::default() };
        let bank = TemplateBank::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = class_embed(3, &cfg, &mut rng).unwrap();
        let b = class_embed(3, &cfg, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, bank.templates.row(3).to_vec());
    }

    #[test]
    fn out_of_range_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(class_embed(TemplateBank::CLASSES, &EmbedConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn same_class_draws_have_chi_square_spacing() {
        // E‖a − b‖² = 2 d σ² for two draws of the same class
        let cfg = EmbedConfig { d_embed: 16, noise_std: 0.5, ..Default::default() };
        let bank = TemplateBank::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let reps = 4000;
        let mut total = 0.0;
        for _ in 0..reps {
            let a = bank.embed(1, &mut rng).unwrap();
            let b = bank.embed(1, &mut rng).unwrap();
            total += a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        }
        let mean = total / reps as f64;
        let expected = 2.0 * 16.0 * 0.25;
        // variance of ‖a−b‖² is 2 d (2σ²)² = 8; s.e. of the mean ≈ 0.045
        assert!((mean - expected).abs() < 4.0 * (8.0f64 / reps as f64).sqrt(), "{mean}");
    }

    #[test]
    fn template_spacing_matches_prior() {
        // E‖t_i − t_j‖² = 2 d s² over template seeds
        let d = 32;
        let seeds = 400;
        let mut total = 0.0;
        for s in 0..seeds {
            let cfg = EmbedConfig { d_embed: d, template_scale: 2.0, noise_std: 1.0, template_seed: s };
            let bank = TemplateBank::new(&cfg).unwrap();
            let diff = &bank.templates.row(0) - &bank.templates.row(1);
            total += diff.mapv(|v| v * v).sum();
        }
        let mean = total / seeds as f64;
        let expected = 2.0 * d as f64 * 4.0;
        // ‖t_i − t_j‖² / 8 ~ χ²_d, so the s.e. is 8 sqrt(2d / seeds)
        let se = 8.0 * (2.0 * d as f64 / seeds as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn w_tilde_equals_u() {
        let cfg = EmbedConfig::default();
        let g = gen_app_b(3000, &GenParamsB::source_pi(), 2, &cfg).unwrap();
        let bank = TemplateBank::new(&cfg).unwrap();
        // the nearest W template recovers W̃, which must equal U
        for (i, &u) in g.eval.u_true.iter().enumerate() {
            let row = g.source.w.row(i);
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da = (&row - &bank.templates.row(W_CLASS_OFFSET + a)).mapv(|v| v * v).sum();
                    let db = (&row - &bank.templates.row(W_CLASS_OFFSET + b)).mapv(|v| v * v).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, u);
        }
        assert_eq!(g.eval.w_class.as_ref().unwrap(), &g.eval.u_true);
    }
}
