use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::model::{ModelDims, PartialRpm, RecogW};
use super::objective::MixtureMarginals;
use super::train::TrainHyper;
use crate::adapt::AdaptedPrior;
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::util::sha256_hex;

pub const CHECKPOINT_FORMAT_VERSION: &str = "1.0.0";

/// A trained source model with its frozen mixture marginals and, after
/// adaptation, the target prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: PartialRpm,
    pub mixture: MixtureMarginals,
    pub hyper: Option<TrainHyper>,
    pub adapted: Option<AdaptedPrior>,
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RecogWDoc {
    Table { logits: Vec<Vec<f64>> },
    Mlp(MlpDoc),
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: String,
    dims: ModelDims,
    recog_x: MlpDoc,
    recog_w: RecogWDoc,
    concept_net: MlpDoc,
    y_logits: Vec<Vec<Vec<f64>>>,
    prior_logits: Vec<f64>,
    mixture: MixtureMarginals,
    hyper: Option<TrainHyper>,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adapted: Option<AdaptedPrior>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what}: ragged rows")));
    }
    Array2::from_shape_vec((rows.len(), ncols), rows.concat())
        .map_err(|e| Error::Format(format!("{what}: {e}")))
}

impl From<&MlpParams> for MlpDoc {
    fn from(p: &MlpParams) -> Self {
        MlpDoc {
            layer_sizes: p.layer_sizes.clone(),
            weights: p.weights.iter().map(rows).collect(),
            biases: p.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }
}

impl MlpDoc {
    fn into_params(self, what: &str) -> Result<MlpParams> {
        let weights = self
            .weights
            .iter()
            .map(|w| from_rows(w, what))
            .collect::<Result<Vec<_>>>()?;
        let params = MlpParams {
            layer_sizes: self.layer_sizes,
            weights,
            biases: self.biases.into_iter().map(Array1::from).collect(),
        };
        params.validate().map_err(|e| Error::Format(format!("{what}: {e}")))?;
        Ok(params)
    }
}

impl Checkpoint {
    fn to_doc(&self, include_adapted: bool) -> CheckpointDoc {
        let m = &self.model;
        let (k_c, k_u, _) = m.y_logits.dim();
        CheckpointDoc {
            format_version: CHECKPOINT_FORMAT_VERSION.to_string(),
            dims: m.dims,
            recog_x: (&m.recog_x).into(),
            recog_w: match &m.recog_w {
                RecogW::Table(t) => RecogWDoc::Table { logits: rows(t) },
                RecogW::Mlp(net) => RecogWDoc::Mlp(net.into()),
            },
            concept_net: (&m.concept_net).into(),
            y_logits: (0..k_c)
                .map(|c| (0..k_u).map(|u| m.y_logits.slice(ndarray::s![c, u, ..]).to_vec()).collect())
                .collect(),
            prior_logits: m.prior_logits.to_vec(),
            mixture: self.mixture.clone(),
            hyper: self.hyper.clone(),
            seed: self.hyper.as_ref().map(|h| h.seed),
            adapted: if include_adapted { self.adapted.clone() } else { None },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc(true))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.format_version.split('.').next() != CHECKPOINT_FORMAT_VERSION.split('.').next() {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                doc.format_version
            )));
        }
        let dims = doc.dims;
        let recog_w = match doc.recog_w {
            RecogWDoc::Table { logits } => RecogW::Table(from_rows(&logits, "recog_w")?),
            RecogWDoc::Mlp(net) => RecogW::Mlp(net.into_params("recog_w")?),
        };
        let flat_y: Vec<f64> = doc.y_logits.iter().flatten().flatten().copied().collect();
        let y_logits = Array3::from_shape_vec((dims.k_c, dims.k_u, dims.k_y), flat_y)
            .map_err(|e| Error::Format(format!("y_logits: {e}")))?;
        let model = PartialRpm {
            dims,
            recog_x: doc.recog_x.into_params("recog_x")?,
            recog_w,
            concept_net: doc.concept_net.into_params("concept_net")?,
            y_logits,
            prior_logits: Array1::from(doc.prior_logits),
        };
        model.validate().map_err(|e| Error::Format(e.to_string()))?;
        if doc.mixture.f_x.len() != dims.k_u || doc.mixture.f_w.len() != dims.k_u {
            return Err(Error::Format("mixture marginals must have k_u entries".into()));
        }
        Ok(Checkpoint {
            model,
            mixture: doc.mixture,
            hyper: doc.hyper,
            adapted: doc.adapted,
        })
    }

    /// SHA-256 of the source part of the document (everything except the
    /// adapted prior).
    pub fn source_hash(&self) -> Result<String> {
        let text = serde_json::to_string(&self.to_doc(false))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
