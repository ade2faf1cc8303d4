use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{log_softmax, log_softmax_rows, mlp_init, MlpParams, MlpTrace, Parameters};

/// Cardinalities of the discrete variables and widths of the observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub k_u: usize,
    pub k_c: usize,
    pub k_y: usize,
    pub d_x: usize,
    pub d_w: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if [self.k_u, self.k_c, self.k_y, self.d_x, self.d_w].contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// How `W` is recognised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WRecognition {
    /// `W` is a single integer-valued column taking `levels` values; the
    /// recognition factor is a learned table of logits.
    Table { levels: usize },
    Mlp { hidden: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpmArchitecture {
    pub hidden_x: Vec<usize>,
    pub hidden_concept: Vec<usize>,
    pub w: WRecognition,
}

impl Default for RpmArchitecture {
    fn default() -> Self {
        RpmArchitecture {
            hidden_x: vec![100],
            hidden_concept: vec![100],
            w: WRecognition::Table { levels: 2 },
        }
    }
}

/// Recognition factor for `W`.
#[derive(Clone, Debug, PartialEq)]
pub enum RecogW {
    /// `levels × k_u` logits; row `w` is the distribution over `U` given `W = w`.
    Table(Array2<f64>),
    Mlp(MlpParams),
}

/// Learned parameters of the partial RPM.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialRpm {
    pub dims: ModelDims,
    /// `X -> k_u` logits of `f(U|X)`.
    pub recog_x: MlpParams,
    pub recog_w: RecogW,
    /// `concat(X, onehot(U)) -> k_c` logits of `P(C|X,U)`.
    pub concept_net: MlpParams,
    /// `(k_c, k_u, k_y)` logits; softmax over the last axis gives `P(Y|C,U)`.
    pub y_logits: Array3<f64>,
    pub prior_logits: Array1<f64>,
}

pub(crate) enum WTrace {
    Table(Vec<usize>),
    Mlp(MlpTrace),
}

impl PartialRpm {
    pub fn init(dims: ModelDims, arch: &RpmArchitecture, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let mut next_seed = || rand::Rng::gen::<u64>(&mut seeds);

        let sizes = |input: usize, hidden: &[usize], output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(output);
            s
        };
        let recog_x = mlp_init(&sizes(dims.d_x, &arch.hidden_x, dims.k_u), next_seed())?;
        let concept_net = mlp_init(
            &sizes(dims.d_x + dims.k_u, &arch.hidden_concept, dims.k_c),
            next_seed(),
        )?;
        let recog_w = match &arch.w {
            WRecognition::Table { levels } => {
                if *levels == 0 || dims.d_w != 1 {
                    return Err(Error::Config(
                        "a W table needs at least one level and a single W column".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(next_seed());
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                RecogW::Table(Array2::from_shape_fn((*levels, dims.k_u), |_| {
                    normal.sample(&mut rng)
                }))
            }
            WRecognition::Mlp { hidden } => {
                RecogW::Mlp(mlp_init(&sizes(dims.d_w, hidden, dims.k_u), next_seed())?)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(next_seed());
        let normal = Normal::new(0.0, 0.1).expect("positive scale");
        let y_logits =
            Array3::from_shape_fn((dims.k_c, dims.k_u, dims.k_y), |_| normal.sample(&mut rng));
        let model = PartialRpm {
            dims,
            recog_x,
            recog_w,
            concept_net,
            y_logits,
            prior_logits: Array1::zeros(dims.k_u),
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks every parameter shape against `dims`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        d.validate()?;
        self.recog_x.validate()?;
        self.concept_net.validate()?;
        if self.recog_x.input_dim() != d.d_x || self.recog_x.output_dim() != d.k_u {
            return Err(Error::Shape("recog_x must map d_x to k_u".into()));
        }
        if self.concept_net.input_dim() != d.d_x + d.k_u || self.concept_net.output_dim() != d.k_c
        {
            return Err(Error::Shape("concept_net must map d_x + k_u to k_c".into()));
        }
        match &self.recog_w {
            RecogW::Table(t) => {
                if t.ncols() != d.k_u || d.d_w != 1 {
                    return Err(Error::Shape("W table must have k_u columns and d_w = 1".into()));
                }
            }
            RecogW::Mlp(m) => {
                m.validate()?;
                if m.input_dim() != d.d_w || m.output_dim() != d.k_u {
                    return Err(Error::Shape("recog_w must map d_w to k_u".into()));
                }
            }
        }
        if self.y_logits.dim() != (d.k_c, d.k_u, d.k_y) {
            return Err(Error::Shape("y_logits must be (k_c, k_u, k_y)".into()));
        }
        if self.prior_logits.len() != d.k_u {
            return Err(Error::Shape("prior_logits must have k_u entries".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric("model parameters"));
        }
        Ok(())
    }

    /// `P(U) = softmax(prior_logits)`.
    pub fn prior(&self) -> Vec<f64> {
        log_softmax(self.prior_logits.as_slice().expect("contiguous"))
            .expect("validated prior logits")
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    /// `log P(Y|C,U)` as a `(k_c, k_u, k_y)` array.
    pub fn log_y_table(&self) -> Array3<f64> {
        let mut out = self.y_logits.clone();
        for mut lane in out.lanes_mut(ndarray::Axis(2)) {
            let lp = log_softmax(lane.as_slice().expect("contiguous lane"))
                .expect("finite y logits");
            lane.assign(&Array1::from(lp));
        }
        out
    }

    /// `P(Y|C,U)` as a `(k_c, k_u, k_y)` array.
    pub fn y_table(&self) -> Array3<f64> {
        self.log_y_table().mapv(f64::exp)
    }

    /// Row-wise `log f(U|X)` for a batch of observations.
    pub fn log_recog_x(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTrace)> {
        let trace = self.recog_x.forward(x)?;
        let mut logp = trace.logits().clone();
        log_softmax_rows(&mut logp);
        Ok((logp, trace))
    }

    pub(crate) fn log_recog_w(&self, w: ArrayView2<f64>) -> Result<(Array2<f64>, WTrace)> {
        match &self.recog_w {
            RecogW::Table(table) => {
                if w.ncols() != 1 {
                    return Err(Error::Shape(format!(
                        "a W table expects one column, got {}",
                        w.ncols()
                    )));
                }
                let levels = table.nrows();
                let mut idx = Vec::with_capacity(w.nrows());
                for &v in w.column(0) {
                    let level = v.round();
                    if (v - level).abs() > 1e-9 || level < 0.0 || level as usize >= levels {
                        return Err(Error::Shape(format!(
                            "W value {v} is not one of the {levels} table levels"
                        )));
                    }
                    idx.push(level as usize);
                }
                let mut logp = table.select(ndarray::Axis(0), &idx);
                log_softmax_rows(&mut logp);
                Ok((logp, WTrace::Table(idx)))
            }
            RecogW::Mlp(net) => {
                let trace = net.forward(w)?;
                let mut logp = trace.logits().clone();
                log_softmax_rows(&mut logp);
                Ok((logp, WTrace::Mlp(trace)))
            }
        }
    }

    /// Concept-net inputs for every latent value, stacked `u`-major: row
    /// `u * n + i` is `concat(x_i, onehot(u))`.
    pub(crate) fn concept_inputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (n, d) = x.dim();
        let k_u = self.dims.k_u;
        let mut inputs = Array2::zeros((k_u * n, d + k_u));
        for u in 0..k_u {
            for i in 0..n {
                let mut row = inputs.row_mut(u * n + i);
                row.slice_mut(ndarray::s![..d]).assign(&x.row(i));
                row[d + u] = 1.0;
            }
        }
        inputs
    }

    /// `log P(C|X,U)` for every `u`, as a `(k_u * n) × k_c` stacked array.
    pub fn log_concept_all(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTrace)> {
        if x.ncols() != self.dims.d_x {
            return Err(Error::Shape(format!(
                "expected X of width {}, got {}",
                self.dims.d_x,
                x.ncols()
            )));
        }
        let trace = self.concept_net.forward(self.concept_inputs(x).view())?;
        let mut logp = trace.logits().clone();
        log_softmax_rows(&mut logp);
        Ok((logp, trace))
    }

    /// Tensor indices of the recognition, generative and prior groups, in the
    /// order used by [`Parameters::tensors`].
    pub fn group_sizes(&self) -> [usize; 3] {
        let w = match &self.recog_w {
            RecogW::Table(_) => 1,
            RecogW::Mlp(m) => m.tensors().len(),
        };
        [
            self.recog_x.tensors().len() + w,
            self.concept_net.tensors().len() + 1,
            1,
        ]
    }

    /// Parameter tensors split into recognition (`θx`, `θw`), generative
    /// (`φ`, `ψ`) and prior (`θP`) groups.
    pub fn grouped_tensors_mut(&mut self) -> [Vec<&mut [f64]>; 3] {
        let sizes = self.group_sizes();
        let mut all = self.tensors_mut().into_iter();
        let mut take = |n: usize| all.by_ref().take(n).collect::<Vec<_>>();
        let a = take(sizes[0]);
        let b = take(sizes[1]);
        let c = take(sizes[2]);
        [a, b, c]
    }

    pub fn grouped_tensors(&self) -> [Vec<&[f64]>; 3] {
        let sizes = self.group_sizes();
        let mut all = self.tensors().into_iter();
        let mut take = |n: usize| all.by_ref().take(n).collect::<Vec<_>>();
        let a = take(sizes[0]);
        let b = take(sizes[1]);
        let c = take(sizes[2]);
        [a, b, c]
    }

    /// Returns a copy with the latent values relabelled: new value `u` is old
    /// value `perm[u]`.
    pub fn permute_latent(&self, perm: &[usize]) -> Result<Self> {
        let k_u = self.dims.k_u;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..k_u).collect::<Vec<_>>() {
            return Err(Error::Config(format!("{perm:?} is not a permutation of 0..{k_u}")));
        }
        let mut out = self.clone();
        let last = out.recog_x.weights.len() - 1;
        for u in 0..k_u {
            out.recog_x.weights[last]
                .row_mut(u)
                .assign(&self.recog_x.weights[last].row(perm[u]));
            out.recog_x.biases[last][u] = self.recog_x.biases[last][perm[u]];
            out.prior_logits[u] = self.prior_logits[perm[u]];
            for c in 0..self.dims.k_c {
                for y in 0..self.dims.k_y {
                    out.y_logits[[c, u, y]] = self.y_logits[[c, perm[u], y]];
                }
            }
            let d = self.dims.d_x;
            out.concept_net.weights[0]
                .column_mut(d + u)
                .assign(&self.concept_net.weights[0].column(d + perm[u]));
        }
        match (&mut out.recog_w, &self.recog_w) {
            (RecogW::Table(new), RecogW::Table(old)) => {
                for u in 0..k_u {
                    new.column_mut(u).assign(&old.column(perm[u]));
                }
            }
            (RecogW::Mlp(new), RecogW::Mlp(old)) => {
                let last = old.weights.len() - 1;
                for u in 0..k_u {
                    new.weights[last].row_mut(u).assign(&old.weights[last].row(perm[u]));
                    new.biases[last][u] = old.biases[last][perm[u]];
                }
            }
            _ => unreachable!("clone preserves the variant"),
        }
        Ok(out)
    }
}

impl Parameters for PartialRpm {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.recog_x.tensors();
        match &self.recog_w {
            RecogW::Table(t) => out.push(t.as_slice().expect("standard layout")),
            RecogW::Mlp(m) => out.extend(m.tensors()),
        }
        out.extend(self.concept_net.tensors());
        out.push(self.y_logits.as_slice().expect("standard layout"));
        out.push(self.prior_logits.as_slice().expect("standard layout"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.recog_x.tensors_mut();
        match &mut self.recog_w {
            RecogW::Table(t) => out.push(t.as_slice_mut().expect("standard layout")),
            RecogW::Mlp(m) => out.extend(m.tensors_mut()),
        }
        out.extend(self.concept_net.tensors_mut());
        out.push(self.y_logits.as_slice_mut().expect("standard layout"));
        out.push(self.prior_logits.as_slice_mut().expect("standard layout"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims { k_u: 3, k_c: 2, k_y: 2, d_x: 4, d_w: 1 }
    }

    #[test]
    fn init_is_valid_and_seeded() {
        let arch = RpmArchitecture { w: WRecognition::Table { levels: 2 }, ..Default::default() };
        let a = PartialRpm::init(dims(), &arch, 3).unwrap();
        let b = PartialRpm::init(dims(), &arch, 3).unwrap();
        assert_eq!(a, b);
        let p = a.prior();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let y = a.y_table();
        for c in 0..2 {
            for u in 0..3 {
                let s: f64 = (0..2).map(|k| y[[c, u, k]]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn table_requires_scalar_w() {
        let mut d = dims();
        d.d_w = 3;
        assert!(PartialRpm::init(d, &RpmArchitecture::default(), 0).is_err());
    }

    #[test]
    fn table_rejects_out_of_range_levels() {
        let m = PartialRpm::init(dims(), &RpmArchitecture::default(), 0).unwrap();
        let w = Array2::from_shape_vec((2, 1), vec![0.0, 2.0]).unwrap();
        assert!(m.log_recog_w(w.view()).is_err());
        let w = Array2::from_shape_vec((2, 1), vec![0.0, 0.5]).unwrap();
        assert!(m.log_recog_w(w.view()).is_err());
    }

    #[test]
    fn groups_cover_all_tensors() {
        let arch = RpmArchitecture {
            hidden_x: vec![5],
            hidden_concept: vec![4],
            w: WRecognition::Mlp { hidden: vec![3] },
        };
        let d = ModelDims { d_w: 6, ..dims() };
        let mut m = PartialRpm::init(d, &arch, 1).unwrap();
        let total = m.tensors().len();
        let g = m.grouped_tensors_mut();
        assert_eq!(g.iter().map(|v| v.len()).sum::<usize>(), total);
        assert_eq!(g[2].len(), 1);
        assert_eq!(g[2][0].len(), 3);
    }
}
