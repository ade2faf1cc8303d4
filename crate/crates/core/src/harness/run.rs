use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Generator, Method};
use crate::adapt::{fit_target_prior, predict_source_batch, predict_target_batch, AdaptedPrior};
use crate::baselines::{
    accuracy, bayes_oracle_app_a_batch, bayes_oracle_app_b_batch, erm_predict_batch, train_erm, ErmHyper,
};
use crate::datagen::{gen_app_a, gen_app_b, GenParamsA, GenParamsB, Generated, SourceBatch, TargetBatch, TemplateBank};
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::rpm::{train_source, Checkpoint, ModelDims};
use crate::util::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// Outcome of one `(setting, method, seed)` job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub generator: String,
    pub setting: usize,
    pub method: Method,
    pub seed: u64,
    pub status: RowStatus,
    pub target_accuracy: Option<f64>,
    pub source_accuracy: Option<f64>,
    /// Fitted target prior, for `rpm` rows.
    pub recovered_q: Vec<f64>,
    pub checkpoint_hash: String,
    pub error: String,
    pub wall_time_seconds: f64,
}

/// Data for one setting: labelled source, unlabelled target with held-out
/// labels, a held-out source test set and, when needed, labelled target
/// training data.
pub struct Datasets {
    pub source: SourceBatch,
    pub target: TargetBatch,
    pub target_y: Vec<usize>,
    pub source_test: SourceBatch,
    pub target_train: Option<SourceBatch>,
}

fn generate(cfg: &ExperimentConfig, setting: usize, n: usize, pi: &[f64], seed: u64) -> Result<Generated> {
    match cfg.generator {
        Generator::AppA => gen_app_a(n, setting, [pi[0], pi[1]], seed),
        Generator::AppB => gen_app_b(n, pi, seed, &cfg.embed),
    }
}

impl Datasets {
    pub fn generate(cfg: &ExperimentConfig, setting: usize, seed: u64, with_target_train: bool) -> Result<Self> {
        let (n_source, n_target) = cfg.sizes(setting);
        let s = cfg.data_seed_for(setting, seed);
        let source = generate(cfg, setting, n_source, &cfg.pi_source, s)?.source;
        let (target, eval) = generate(cfg, setting, n_target, &cfg.pi_target, s.wrapping_add(1))?.into_target();
        let source_test = generate(cfg, setting, n_target, &cfg.pi_source, s.wrapping_add(2))?.source;
        let target_train = if with_target_train {
            Some(generate(cfg, setting, n_source, &cfg.pi_target, s.wrapping_add(3))?.source)
        } else {
            None
        };
        Ok(Datasets {
            source,
            target,
            target_y: eval.y_true.expect("target datasets carry labels"),
            source_test,
            target_train,
        })
    }
}

struct Evaluated {
    target_accuracy: f64,
    source_accuracy: f64,
    recovered_q: Vec<f64>,
    checkpoint_hash: String,
    checkpoint: Option<Checkpoint>,
}

fn erm_row(hyper: &ErmHyper, train: &SourceBatch, data: &Datasets, k_y: usize) -> Result<Evaluated> {
    let clf = train_erm(train.x.view(), &train.y, k_y, hyper)?;
    let target = erm_predict_batch(&clf, data.target.x.view())?;
    let source = erm_predict_batch(&clf, data.source_test.x.view())?;
    let bytes: Vec<u8> = clf.net.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok(Evaluated {
        target_accuracy: accuracy(target.view(), &data.target_y)?,
        source_accuracy: accuracy(source.view(), &data.source_test.y)?,
        recovered_q: vec![],
        checkpoint_hash: sha256_hex(&bytes),
        checkpoint: None,
    })
}

fn evaluate(cfg: &ExperimentConfig, setting: usize, method: Method, seed: u64, data: &Datasets) -> Result<Evaluated> {
    let meta = &data.source.meta;
    match method {
        Method::Oracle => {
            let (target, source, hash) = match cfg.generator {
                Generator::AppA => {
                    let params = GenParamsA::new(setting, [cfg.pi_source[0], cfg.pi_source[1]]);
                    (
                        bayes_oracle_app_a_batch(&params, &cfg.pi_target, data.target.x.view())?,
                        bayes_oracle_app_a_batch(&params, &cfg.pi_source, data.source_test.x.view())?,
                        params.hash(),
                    )
                }
                Generator::AppB => {
                    let params = GenParamsB::new(cfg.pi_source.clone(), cfg.embed.clone());
                    let bank = TemplateBank::new(&cfg.embed)?;
                    (
                        bayes_oracle_app_b_batch(&params, &bank, &cfg.pi_target, data.target.x.view())?,
                        bayes_oracle_app_b_batch(&params, &bank, &cfg.pi_source, data.source_test.x.view())?,
                        params.hash(),
                    )
                }
            };
            Ok(Evaluated {
                target_accuracy: accuracy(target.view(), &data.target_y)?,
                source_accuracy: accuracy(source.view(), &data.source_test.y)?,
                recovered_q: vec![],
                checkpoint_hash: hash,
                checkpoint: None,
            })
        }
        Method::ErmSource => erm_row(&ErmHyper { seed, ..cfg.erm.clone() }, &data.source, data, meta.k_y),
        Method::ErmTarget => {
            let train = data
                .target_train
                .as_ref()
                .ok_or_else(|| Error::Config("erm_target needs labelled target data".into()))?;
            erm_row(&ErmHyper { seed, ..cfg.erm.clone() }, train, data, meta.k_y)
        }
        Method::Rpm => {
            let dims = ModelDims { k_u: meta.k_u, k_c: meta.k_c, k_y: meta.k_y, d_x: meta.d_x, d_w: meta.d_w };
            let mut hyper = cfg.rpm.clone();
            hyper.seed = seed;
            let out = train_source(&data.source.view(), dims, &hyper)?;
            let fit = fit_target_prior(&out.model, &out.mixture, data.target.x.view(), &cfg.adapt)?;
            let target = predict_target_batch(&out.model, &out.mixture, &fit.prior, data.target.x.view())?;
            let source = predict_source_batch(&out.model, &out.mixture, data.source_test.x.view())?;
            let mut checkpoint = Checkpoint { model: out.model, mixture: out.mixture, hyper: Some(hyper), adapted: None };
            let source_hash = checkpoint.source_hash()?;
            checkpoint.adapted = Some(AdaptedPrior {
                q_logits: fit.prior.q_logits.clone(),
                source_checkpoint_hash: source_hash.clone(),
                target_dataset_hash: data.target.content_hash(),
                iterations: fit.iterations,
                final_free_energy: *fit.trace.last().expect("non-empty trace"),
            });
            Ok(Evaluated {
                target_accuracy: accuracy(target.view(), &data.target_y)?,
                source_accuracy: accuracy(source.view(), &data.source_test.y)?,
                recovered_q: fit.prior.q,
                checkpoint_hash: source_hash,
                checkpoint: Some(checkpoint),
            })
        }
    }
}

/// Runs one job on pre-generated data. Errors inside training or evaluation
/// produce a failed row rather than an `Err`.
pub(crate) fn run_with_data(
    cfg: &ExperimentConfig,
    setting: usize,
    method: Method,
    seed: u64,
    data: &Datasets,
) -> (ResultRow, Option<Checkpoint>) {
    let start = Instant::now();
    let result = evaluate(cfg, setting, method, seed, data);
    let mut row = ResultRow {
        generator: cfg.generator.name().to_string(),
        setting,
        method,
        seed,
        status: RowStatus::Ok,
        target_accuracy: None,
        source_accuracy: None,
        recovered_q: vec![],
        checkpoint_hash: String::new(),
        error: String::new(),
        wall_time_seconds: 0.0,
    };
    let checkpoint = match result {
        Ok(ev) => {
            row.target_accuracy = Some(ev.target_accuracy);
            row.source_accuracy = Some(ev.source_accuracy);
            row.recovered_q = ev.recovered_q;
            row.checkpoint_hash = ev.checkpoint_hash;
            ev.checkpoint
        }
        Err(e) => {
            log::warn!("{} setting {setting}, {method}, seed {seed} failed: {e}", cfg.generator.name());
            row.status = RowStatus::Failed;
            row.error = e.to_string();
            None
        }
    };
    row.wall_time_seconds = start.elapsed().as_secs_f64();
    (row, checkpoint)
}

/// Generates the data for `setting`, trains and evaluates `method`, and
/// returns the result row together with the adapted checkpoint for `rpm`.
pub fn run_single(
    cfg: &ExperimentConfig,
    setting: usize,
    method: Method,
    seed: u64,
) -> Result<(ResultRow, Option<Checkpoint>)> {
    cfg.validate()?;
    if !cfg.settings.contains(&setting) {
        log::info!("setting {setting} is not in the configured grid");
    }
    let data = Datasets::generate(cfg, setting, seed, method == Method::ErmTarget)?;
    Ok(run_with_data(cfg, setting, method, seed, &data))
}
