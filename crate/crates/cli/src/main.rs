use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use partial_rpm::adapt::{fit_target_prior, predict_target_batch, AdaptHyper, AdaptedPrior, TargetPrior};
use partial_rpm::baselines::accuracy;
use partial_rpm::datagen::{
    gen_app_a, gen_app_b, read_eval, read_source, read_target, write_dataset, write_target, EmbedConfig,
    GenParamsA, GenParamsB,
};
use partial_rpm::harness::{run_sweep, ExperimentConfig, SweepOptions};
use partial_rpm::rpm::{gradcheck_suite, train_source, Checkpoint, ModelDims, TrainHyper};

#[derive(Parser)]
#[command(name = "partial-rpm", version, about = "Prediction under latent subgroup shift with a partial recognition-parametrised model")]
struct Cli {
    /// JSON configuration: training hyperparameters for `train`, an experiment
    /// for `sweep`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Write per-method mean and standard-error files after a sweep.
    #[arg(long, global = true)]
    emit_plot_data: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    AppA,
    AppB,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Source,
    Target,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset and write it to `--out`.
    Gen {
        #[arg(long, value_enum)]
        generator: GeneratorArg,
        #[arg(long)]
        n: usize,
        /// Covariate dimension (app-a only).
        #[arg(long, default_value_t = 2)]
        d_x: usize,
        #[arg(long, value_enum, default_value = "source")]
        role: RoleArg,
        /// Comma-separated prior over U; defaults to the generator's source or
        /// target prior.
        #[arg(long, value_delimiter = ',')]
        pi: Option<Vec<f64>>,
    },
    /// Fit the source model and write a checkpoint to `--out`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Fixed epoch count, replacing any step budget in the hyperparameters.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the target prior on unlabelled target covariates.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Write predicted class probabilities for a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Use the source prior even when the checkpoint has an adapted one.
        #[arg(long)]
        unadapted: bool,
    },
    /// Accuracy of a prediction file against a dataset's labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a full experiment sweep into `--out`.
    Sweep {
        /// Built-in experiment used when no `--config` is given.
        #[arg(long, value_enum, default_value = "app-a")]
        preset: GeneratorArg,
    },
    /// Compare analytic and finite-difference gradients on tiny models.
    Gradcheck,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        let config = matches!(e.downcast_ref::<partial_rpm::Error>(), Some(partial_rpm::Error::Config(_)));
        if config {
            Failure::Config(e)
        } else {
            Failure::Run(e)
        }
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path, Failure> {
    out.as_deref()
        .ok_or_else(|| Failure::Config(anyhow!("--out is required for this command")))
}

fn read_x(dir: &Path) -> anyhow::Result<Array2<f64>> {
    match read_target(dir) {
        Ok(t) => Ok(t.x),
        Err(_) => Ok(read_source(dir).with_context(|| format!("reading {}", dir.display()))?.x),
    }
}

fn write_predictions(p: &Array2<f64>, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = (0..p.ncols()).map(|k| format!("p{k}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for row in p.rows() {
        text.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_predictions(path: &Path) -> anyhow::Result<Array2<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let k = lines.next().ok_or_else(|| anyhow!("empty prediction file"))?.split(',').count();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("line {}", i + 2))?;
        if row.len() != k {
            bail!("line {} has {} fields, expected {k}", i + 2, row.len());
        }
        values.extend(row);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, k), values)?)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen { generator, n, d_x, role, pi } => {
            let out = require_out(&cli.out)?;
            let target = matches!(role, RoleArg::Target);
            let data = match generator {
                GeneratorArg::AppA => {
                    let pi = pi.unwrap_or_else(|| {
                        (if target { GenParamsA::TARGET_PI } else { GenParamsA::SOURCE_PI }).to_vec()
                    });
                    if pi.len() != 2 {
                        return Err(Failure::Config(anyhow!("app-a needs a prior over 2 values")));
                    }
                    gen_app_a(n, d_x, [pi[0], pi[1]], seed)?
                }
                GeneratorArg::AppB => {
                    let pi = pi.unwrap_or_else(|| {
                        if target { GenParamsB::target_pi() } else { GenParamsB::source_pi() }
                    });
                    gen_app_b(n, &pi, seed, &EmbedConfig::default())?
                }
            };
            if target {
                let (t, eval) = data.into_target();
                write_target(&t, &eval, out)?;
            } else {
                write_dataset(&data, out)?;
            }
            log::info!("wrote {n} rows to {}", out.display());
        }
        Command::Train { data, epochs } => {
            let out = require_out(&cli.out)?;
            let src = read_source(&data).with_context(|| format!("reading {}", data.display()))?;
            let mut hyper = match &cli.config {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<TrainHyper>(&text)
                        .map_err(|e| Failure::Config(anyhow!("{}: {e}", path.display())))?
                }
                None if src.meta.generator == "app_b" => ExperimentConfig::app_b_desk().rpm,
                None => ExperimentConfig::app_a_desk().rpm,
            };
            if let Some(s) = cli.seed {
                hyper.seed = s;
            }
            if let Some(e) = epochs {
                hyper.epochs = e;
                hyper.step_budget = None;
            }
            let m = &src.meta;
            let dims = ModelDims { k_u: m.k_u, k_c: m.k_c, k_y: m.k_y, d_x: m.d_x, d_w: m.d_w };
            let result = train_source(&src.view(), dims, &hyper)?;
            log::info!(
                "kept restart {} of {}, full-data free energy {}",
                result.chosen_restart + 1,
                result.restart_free_energies.len(),
                result.free_energy
            );
            let ckpt = Checkpoint { model: result.model, mixture: result.mixture, hyper: Some(hyper), adapted: None };
            ckpt.save(out)?;
            println!("{}", serde_json::json!({ "checkpoint": out, "source_hash": ckpt.source_hash()? }));
        }
        Command::Adapt { checkpoint, target } => {
            let mut ckpt = Checkpoint::load(&checkpoint)?;
            let t = read_target(&target).with_context(|| format!("reading {}", target.display()))?;
            let fit = fit_target_prior(&ckpt.model, &ckpt.mixture, t.x.view(), &AdaptHyper::default())?;
            ckpt.adapted = Some(AdaptedPrior {
                q_logits: fit.prior.q_logits.clone(),
                source_checkpoint_hash: ckpt.source_hash()?,
                target_dataset_hash: t.content_hash(),
                iterations: fit.iterations,
                final_free_energy: *fit.trace.last().expect("non-empty trace"),
            });
            let out = cli.out.unwrap_or(checkpoint);
            ckpt.save(&out)?;
            println!(
                "{}",
                serde_json::json!({ "q": fit.prior.q, "iterations": fit.iterations, "converged": fit.converged })
            );
        }
        Command::Predict { checkpoint, data, unadapted } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let prior = match (&ckpt.adapted, unadapted) {
                (Some(a), false) => TargetPrior::from_logits(a.q_logits.clone())?,
                _ => TargetPrior::source(&ckpt.model),
            };
            let x = read_x(&data)?;
            let p = predict_target_batch(&ckpt.model, &ckpt.mixture, &prior, x.view())?;
            write_predictions(&p, cli.out.as_deref())?;
        }
        Command::Eval { pred, data } => {
            let p = read_predictions(&pred)?;
            let labels = match read_eval(&data).ok().and_then(|e| e.y_true) {
                Some(y) => y,
                None => read_source(&data).with_context(|| format!("reading {}", data.display()))?.y,
            };
            let acc = accuracy(p.view(), &labels)?;
            println!("{}", serde_json::json!({ "accuracy": acc, "n": labels.len() }));
        }
        Command::Sweep { preset } => {
            let out = require_out(&cli.out)?;
            let mut cfg = match &cli.config {
                Some(path) => ExperimentConfig::load(path)?,
                None => match preset {
                    GeneratorArg::AppA => ExperimentConfig::app_a_desk(),
                    GeneratorArg::AppB => ExperimentConfig::app_b_desk(),
                },
            };
            if let Some(s) = cli.seed {
                cfg.data_seed = s;
            }
            let opts = SweepOptions { out_dir: out.to_path_buf(), jobs: cli.jobs, emit_plot_data: cli.emit_plot_data };
            let outcome = run_sweep(&cfg, &opts)?;
            for s in &outcome.summary {
                println!(
                    "setting {:>7}  {:<10}  target {:.4} ± {:.4}  ({} ok, {} failed)",
                    s.setting,
                    s.method.name(),
                    s.target_mean.unwrap_or(f64::NAN),
                    s.target_se.unwrap_or(f64::NAN),
                    s.n_ok,
                    s.n_failed
                );
            }
            log::info!("{} jobs run, {} reused", outcome.executed, outcome.skipped);
            return Ok(outcome.failed == 0);
        }
        Command::Gradcheck => {
            let mut ok = true;
            for r in gradcheck_suite(seed)? {
                let pass = r.max_relative_error <= 1e-4;
                ok &= pass;
                println!(
                    "{:<14} max relative error {:.3e}  {}",
                    r.case,
                    r.max_relative_error,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
