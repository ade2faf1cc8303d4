use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpm::SourceView;
use crate::util::sha256_hex;

pub const DATASET_FORMAT_VERSION: &str = "1.0.0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: String,
    pub generator: String,
    pub params_hash: String,
    pub seed: u64,
    pub n: usize,
    pub d_x: usize,
    pub d_w: usize,
    pub k_u: usize,
    pub k_c: usize,
    pub k_y: usize,
    pub pi: Vec<f64>,
    pub role: DatasetRole,
    /// SHA-256 of the training-visible columns, see [`SourceBatch::content_hash`].
    pub data_hash: String,
}

/// Labelled source observations `{X, W, C, Y}`. The latent `U` is kept apart in
/// [`EvalLabels`].
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBatch {
    pub x: Array2<f64>,
    pub w: Array2<f64>,
    pub c: Vec<usize>,
    pub y: Vec<usize>,
    pub meta: DatasetMeta,
}

/// Unlabelled target observations.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub x: Array2<f64>,
    pub meta: DatasetMeta,
}

/// Held-out ground truth used only for evaluation and diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalLabels {
    pub u_true: Vec<usize>,
    /// Present for target datasets, whose `Y` is never shown to training.
    pub y_true: Option<Vec<usize>>,
    /// Class identities behind surrogate `X` and `W` observations, when the
    /// generator has them.
    pub x_class: Option<Vec<usize>>,
    pub w_class: Option<Vec<usize>>,
}

/// Output of a generator: the training-visible batch and the held-out labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub source: SourceBatch,
    pub eval: EvalLabels,
}

fn hash_columns(mats: &[&Array2<f64>], ints: &[&[usize]]) -> String {
    let mut bytes = Vec::new();
    for m in mats {
        bytes.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        bytes.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for col in ints {
        bytes.extend_from_slice(&(col.len() as u64).to_le_bytes());
        for &v in *col {
            bytes.extend_from_slice(&(v as u64).to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

impl SourceBatch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view(&self) -> SourceView<'_> {
        SourceView { x: self.x.view(), w: self.w.view(), c: &self.c, y: &self.y }
    }

    /// SHA-256 over the exact bit patterns of `X`, `W`, `C` and `Y`.
    pub fn content_hash(&self) -> String {
        hash_columns(&[&self.x, &self.w], &[&self.c, &self.y])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.w.nrows() != n || self.c.len() != n || self.y.len() != n || self.meta.n != n {
            return Err(Error::Shape("source columns disagree in length".into()));
        }
        if self.x.iter().chain(self.w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("source observations"));
        }
        if self.c.iter().any(|&c| c >= self.meta.k_c) || self.y.iter().any(|&y| y >= self.meta.k_y) {
            return Err(Error::Format("label out of range".into()));
        }
        Ok(())
    }

    /// Rows `idx` as a new batch (metadata copied with the new size).
    pub fn select(&self, idx: &[usize]) -> SourceBatch {
        let mut meta = self.meta.clone();
        meta.n = idx.len();
        let mut out = SourceBatch {
            x: self.x.select(Axis(0), idx),
            w: self.w.select(Axis(0), idx),
            c: idx.iter().map(|&i| self.c[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            meta,
        };
        out.meta.data_hash = out.content_hash();
        out
    }
}

impl TargetBatch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn content_hash(&self) -> String {
        hash_columns(&[&self.x], &[])
    }
}

impl Generated {
    /// Drops `W` and `C` and moves `Y` to the held-out labels, giving an
    /// unlabelled target dataset.
    pub fn into_target(self) -> (TargetBatch, EvalLabels) {
        let Generated { source, eval } = self;
        let mut meta = source.meta;
        meta.role = DatasetRole::Target;
        meta.d_w = 0;
        let mut target = TargetBatch { x: source.x, meta };
        target.meta.data_hash = target.content_hash();
        (target, EvalLabels { y_true: Some(source.y), ..eval })
    }
}
