use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::run::{run_with_data, Datasets, ResultRow, RowStatus};
use crate::error::{Error, Result};
use crate::rpm::Checkpoint;

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub emit_plot_data: bool,
}

/// Mean and standard error over the successful seeds of one
/// `(setting, method)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub setting: usize,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub target_mean: Option<f64>,
    pub target_se: Option<f64>,
    pub source_mean: Option<f64>,
    pub source_se: Option<f64>,
    pub recovered_q_mean: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryEntry>,
    /// Jobs run in this invocation; the rest were reused from earlier runs.
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Serialize, Deserialize)]
struct StoredRow {
    job_hash: String,
    row: ResultRow,
}

#[derive(Clone, Copy)]
struct Job {
    setting: usize,
    method: Method,
    seed: u64,
}

impl Job {
    fn stem(&self) -> String {
        format!("{}-{}-{}", self.setting, self.method, self.seed)
    }

    /// Hash of the configuration restricted to this job.
    fn hash(&self, cfg: &ExperimentConfig) -> String {
        let mut one = cfg.clone();
        one.settings = vec![self.setting];
        one.methods = vec![self.method];
        one.seeds = vec![self.seed];
        one.hash()
    }
}

fn reusable(job: &Job, cfg: &ExperimentConfig, out: &Path) -> Option<ResultRow> {
    let text = fs::read_to_string(out.join("rows").join(format!("{}.json", job.stem()))).ok()?;
    let stored: StoredRow = serde_json::from_str(&text).ok()?;
    if stored.job_hash != job.hash(cfg) || stored.row.status != RowStatus::Ok {
        return None;
    }
    if job.method == Method::Rpm {
        let ckpt = Checkpoint::load(out.join("checkpoints").join(format!("{}.json", job.stem()))).ok()?;
        if ckpt.source_hash().ok()? != stored.row.checkpoint_hash {
            return None;
        }
    }
    Some(stored.row)
}

fn execute(job: &Job, cfg: &ExperimentConfig, out: &Path) -> Result<ResultRow> {
    let (row, checkpoint) = match Datasets::generate(cfg, job.setting, job.seed, job.method == Method::ErmTarget) {
        Ok(data) => run_with_data(cfg, job.setting, job.method, job.seed, &data),
        Err(e) => {
            let row = ResultRow {
                generator: cfg.generator.name().to_string(),
                setting: job.setting,
                method: job.method,
                seed: job.seed,
                status: RowStatus::Failed,
                target_accuracy: None,
                source_accuracy: None,
                recovered_q: vec![],
                checkpoint_hash: String::new(),
                error: e.to_string(),
                wall_time_seconds: 0.0,
            };
            (row, None)
        }
    };
    if let Some(ckpt) = checkpoint {
        ckpt.save(out.join("checkpoints").join(format!("{}.json", job.stem())))?;
    }
    let stored = StoredRow { job_hash: job.hash(cfg), row };
    fs::write(
        out.join("rows").join(format!("{}.json", job.stem())),
        serde_json::to_string_pretty(&stored)?,
    )?;
    Ok(stored.row)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const RESULT_HEADER: [&str; 11] = [
    "generator",
    "setting",
    "method",
    "seed",
    "status",
    "target_accuracy",
    "source_accuracy",
    "recovered_q",
    "checkpoint_hash",
    "error",
    "wall_time_seconds",
];

fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(RESULT_HEADER).map_err(csv_err)?;
    for r in rows {
        let q: Vec<String> = r.recovered_q.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.generator.clone(),
            r.setting.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            match r.status {
                RowStatus::Ok => "ok".into(),
                RowStatus::Failed => "failed".into(),
            },
            fmt_opt(r.target_accuracy),
            fmt_opt(r.source_accuracy),
            q.join(";"),
            r.checkpoint_hash.clone(),
            r.error.clone(),
            r.wall_time_seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `results.csv` written by [`run_sweep`].
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| Error::Format(e.to_string()))?;
    let fmt = |m: String| Error::Format(m);
    let parse_f = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        if rec.len() != RESULT_HEADER.len() {
            return Err(fmt(format!("expected {} fields, got {}", RESULT_HEADER.len(), rec.len())));
        }
        rows.push(ResultRow {
            generator: rec[0].to_string(),
            setting: rec[1].parse().map_err(|_| fmt(format!("bad setting {:?}", &rec[1])))?,
            method: Method::parse(&rec[2]).map_err(|e| fmt(e.to_string()))?,
            seed: rec[3].parse().map_err(|_| fmt(format!("bad seed {:?}", &rec[3])))?,
            status: match &rec[4] {
                "ok" => RowStatus::Ok,
                "failed" => RowStatus::Failed,
                other => return Err(fmt(format!("bad status {other:?}"))),
            },
            target_accuracy: parse_f(&rec[5])?,
            source_accuracy: parse_f(&rec[6])?,
            recovered_q: if rec[7].is_empty() {
                vec![]
            } else {
                rec[7]
                    .split(';')
                    .map(|s| s.parse().map_err(|_| fmt(format!("bad q entry {s:?}"))))
                    .collect::<Result<_>>()?
            },
            checkpoint_hash: rec[8].to_string(),
            error: rec[9].to_string(),
            wall_time_seconds: parse_f(&rec[10])?.unwrap_or(0.0),
        });
    }
    Ok(rows)
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// Aggregates rows per `(setting, method)`, in sorted order.
pub fn summarise(rows: &[ResultRow]) -> Vec<SummaryEntry> {
    let mut keys: Vec<(usize, Method)> = rows.iter().map(|r| (r.setting, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(setting, method)| {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.setting == setting && r.method == method)
                .collect();
            let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.status == RowStatus::Ok).collect();
            let target: Vec<f64> = ok.iter().filter_map(|r| r.target_accuracy).collect();
            let source: Vec<f64> = ok.iter().filter_map(|r| r.source_accuracy).collect();
            let (target_mean, target_se) = mean_se(&target);
            let (source_mean, source_se) = mean_se(&source);
            let qs: Vec<&Vec<f64>> = ok.iter().map(|r| &r.recovered_q).filter(|q| !q.is_empty()).collect();
            let recovered_q_mean = match qs.first() {
                Some(first) => (0..first.len())
                    .map(|k| qs.iter().map(|q| q[k]).sum::<f64>() / qs.len() as f64)
                    .collect(),
                None => vec![],
            };
            SummaryEntry {
                setting,
                method,
                n_ok: ok.len(),
                n_failed: cell.len() - ok.len(),
                target_mean,
                target_se,
                source_mean,
                source_se,
                recovered_q_mean,
            }
        })
        .collect()
}

/// One file per method with `setting,target_mean,target_se` lines.
pub fn write_plot_data(summary: &[SummaryEntry], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut methods: Vec<Method> = summary.iter().map(|s| s.method).collect();
    methods.sort();
    methods.dedup();
    for m in methods {
        let mut text = String::from("setting,target_mean,target_se\n");
        for s in summary.iter().filter(|s| s.method == m) {
            text.push_str(&format!("{},{},{}\n", s.setting, fmt_opt(s.target_mean), fmt_opt(s.target_se)));
        }
        fs::write(dir.join(format!("{m}.csv")), text)?;
    }
    Ok(())
}

/// Runs every `(setting, method, seed)` job not already completed under
/// `opts.out_dir`, then writes `results.csv`, `summary.json` and optionally
/// per-method plot data.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let out = &opts.out_dir;
    fs::create_dir_all(out.join("rows"))?;
    fs::create_dir_all(out.join("checkpoints"))?;
    fs::write(out.join("config.json"), cfg.to_json())?;

    let mut jobs = Vec::new();
    for &setting in &cfg.settings {
        for &method in &cfg.methods {
            for &seed in &cfg.seeds {
                jobs.push(Job { setting, method, seed });
            }
        }
    }
    let mut rows = Vec::with_capacity(jobs.len());
    let mut pending = Vec::new();
    for job in jobs {
        match reusable(&job, cfg, out) {
            Some(row) => rows.push(row),
            None => pending.push(job),
        }
    }
    let skipped = rows.len();
    let executed = pending.len();
    log::info!("{executed} jobs to run, {skipped} reused");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let fresh: Vec<Result<ResultRow>> = pool.install(|| {
        use rayon::prelude::*;
        pending.par_iter().map(|job| execute(job, cfg, out)).collect()
    });
    for r in fresh {
        rows.push(r?);
    }
    rows.sort_by_key(|a| (a.setting, a.method, a.seed));

    write_results(&rows, &out.join("results.csv"))?;
    let summary = summarise(&rows);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if opts.emit_plot_data {
        write_plot_data(&summary, out.join("plot"))?;
    }
    let failed = rows.iter().filter(|r| r.status == RowStatus::Failed).count();
    Ok(SweepOutcome { rows, summary, executed, skipped, failed })
}
