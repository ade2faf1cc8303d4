use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softmax(M · onehot(col))`, i.e. softmax of column `col` of a row-major
/// matrix.
pub fn softmax_column(m: &[Vec<f64>], col: usize) -> Vec<f64> {
    let logits: Vec<f64> = m.iter().map(|row| row[col]).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Numerical-simulation process with binary `U`, `W`, `C`, `Y` and
/// continuous `X` whose first two coordinates depend on `U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParamsA {
    pub pi: Vec<f64>,
    /// Mean of the latent Gaussian thresholded into `W`, per `u`.
    pub m_w_u: [f64; 2],
    /// Mean of `X[0:2]`, one row per `u`.
    pub m_x_u: [[f64; 2]; 2],
    pub m_c_u: [f64; 2],
    /// Weights of `X[0:2]` in the logit of `C = 1`, one row per `u`.
    pub m_c_x: [[f64; 2]; 2],
    pub m_y_u: [f64; 2],
    /// Contribution of `C` to the logit of `Y = 1`, indexed `[u][c]`.
    pub m_y_c: [[f64; 2]; 2],
    pub d_x: usize,
}

impl GenParamsA {
    pub fn new(d_x: usize, pi: [f64; 2]) -> Self {
        GenParamsA {
            pi: pi.to_vec(),
            m_w_u: [-3.0, 3.0],
            m_x_u: [[-0.5, 0.5], [0.5, -0.5]],
            m_c_u: [-1.0, 1.0],
            m_c_x: [[-1.0, 1.0], [1.0, -1.0]],
            m_y_u: [-2.0, 2.0],
            m_y_c: [[-1.0, 1.0], [1.0, -1.0]],
            d_x,
        }
    }

    pub const SOURCE_PI: [f64; 2] = [0.1, 0.9];
    pub const TARGET_PI: [f64; 2] = [0.9, 0.1];

    /// `P(W = 1 | U = u) = Φ(m_w_u[u])`.
    pub fn p_w1(&self, u: usize) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        Normal::new(0.0, 1.0).expect("unit normal").cdf(self.m_w_u[u])
    }

    pub fn p_c1(&self, x01: [f64; 2], u: usize) -> f64 {
        sigmoid(x01[0] * self.m_c_x[u][0] + x01[1] * self.m_c_x[u][1] + self.m_c_u[u])
    }

    pub fn p_y1(&self, c: usize, u: usize) -> f64 {
        sigmoid(self.m_y_c[u][c] + self.m_y_u[u])
    }

    /// Log density of `X[0:2]` given `u` up to a constant shared by all `u`.
    pub fn log_px_informative(&self, x01: [f64; 2], u: usize) -> f64 {
        let d0 = x01[0] - self.m_x_u[u][0];
        let d1 = x01[1] - self.m_x_u[u][1];
        -0.5 * (d0 * d0 + d1 * d1)
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serialisable").as_bytes())
    }
}

/// Surrogate observations: class templates plus isotropic Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub d_embed: usize,
    pub template_scale: f64,
    pub noise_std: f64,
    pub template_seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { d_embed: 64, template_scale: 2.0, noise_std: 1.0, template_seed: 0 }
    }
}

/// Image-observation process: discrete `U`, `C`, `Y` and class variables
/// `X̃`, `W̃` that select the surrogate observations `X` and `W`.
///
/// Matrices are row-major; multiplying by a one-hot column vector selects a
/// column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParamsB {
    pub pi: Vec<f64>,
    pub m_wt_u: Vec<Vec<f64>>,
    pub m_xt_u: Vec<Vec<f64>>,
    pub m_c_u: Vec<Vec<f64>>,
    pub m_c_xt: Vec<Vec<f64>>,
    pub m_y_u: Vec<Vec<f64>>,
    pub m_y_c: Vec<Vec<f64>>,
    pub embed: EmbedConfig,
}

impl GenParamsB {
    pub const K_U: usize = 3;
    pub const K_C: usize = 3;
    pub const K_Y: usize = 2;
    pub const K_XT: usize = 2;
    pub const K_WT: usize = 3;

    pub fn new(pi: Vec<f64>, embed: EmbedConfig) -> Self {
        let big = -1e20;
        GenParamsB {
            pi,
            m_wt_u: vec![vec![1e2, big, big], vec![big, 1e2, big], vec![big, big, 1e2]],
            m_xt_u: vec![vec![1e2, 1e2, big], vec![1e2, big, 1e2]],
            m_c_u: vec![vec![5.0, 5.0, 0.5], vec![5.0, 0.5, 5.0], vec![0.5, 5.0, 5.0]],
            m_c_xt: vec![vec![5.0, 0.5], vec![5.0, 5.0], vec![0.5, 5.0]],
            m_y_u: vec![vec![5.0, 5.0, 0.5], vec![0.5, 5.0, 5.0]],
            m_y_c: vec![vec![5.0, 5.0, 0.5], vec![0.5, 5.0, 5.0]],
            embed,
        }
    }

    /// `softmax([1.0, 0.1, 0.1])`.
    pub fn source_pi() -> Vec<f64> {
        crate::nn::softmax(&[1.0, 0.1, 0.1]).expect("finite")
    }

    /// `softmax([0.1, 0.1, 1.0])`.
    pub fn target_pi() -> Vec<f64> {
        crate::nn::softmax(&[0.1, 0.1, 1.0]).expect("finite")
    }

    pub fn p_wt(&self, u: usize) -> Vec<f64> {
        softmax_column(&self.m_wt_u, u)
    }

    pub fn p_xt(&self, u: usize) -> Vec<f64> {
        softmax_column(&self.m_xt_u, u)
    }

    pub fn p_c(&self, xt: usize, u: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..Self::K_C)
            .map(|c| self.m_c_xt[c][xt] + self.m_c_u[c][u])
            .collect();
        crate::nn::softmax(&logits).expect("finite")
    }

    /// Two-logit rule for `Y`, normalised with a softmax.
    pub fn p_y(&self, c: usize, u: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..Self::K_Y)
            .map(|y| self.m_y_c[y][c] + self.m_y_u[y][u])
            .collect();
        crate::nn::softmax(&logits).expect("finite")
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serialisable").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn app_b_saturating_columns() {
        let p = GenParamsB::new(GenParamsB::source_pi(), EmbedConfig::default());
        for u in 0..3 {
            let w = p.p_wt(u);
            for (k, &v) in w.iter().enumerate() {
                assert_eq!(v, if k == u { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(p.p_xt(0), vec![0.5, 0.5]);
        assert_eq!(p.p_xt(1), vec![1.0, 0.0]);
        assert_eq!(p.p_xt(2), vec![0.0, 1.0]);
    }

    #[test]
    fn app_b_source_prior() {
        let pi = GenParamsB::source_pi();
        // softmax([1.0, 0.1, 0.1]) = [e, e^0.1, e^0.1] / (e + 2 e^0.1)
        let z = 1f64.exp() + 2.0 * 0.1f64.exp();
        assert!((pi[0] - 1f64.exp() / z).abs() < 1e-15);
        assert!((pi[0] - 0.5516).abs() < 1e-4 && (pi[1] - 0.2242).abs() < 1e-4);
        assert_eq!(pi[1], pi[2]);
    }

    #[test]
    fn app_a_conditionals() {
        let p = GenParamsA::new(2, GenParamsA::SOURCE_PI);
        assert!((p.p_w1(0) - 0.001_349_898_031_630_094_6).abs() < 1e-12);
        assert!((p.p_w1(1) - (1.0 - 0.001_349_898_031_630_094_6)).abs() < 1e-12);
        assert!((p.p_y1(0, 0) - sigmoid(-3.0)).abs() < 1e-15);
        assert!((p.p_y1(1, 0) - sigmoid(-1.0)).abs() < 1e-15);
        assert!((p.p_y1(0, 1) - sigmoid(3.0)).abs() < 1e-15);
        assert!((p.p_y1(1, 1) - sigmoid(1.0)).abs() < 1e-15);
        assert!((p.p_c1([0.0, 0.0], 0) - sigmoid(-1.0)).abs() < 1e-15);
        assert!((p.p_c1([1.0, 2.0], 1) - sigmoid(1.0 - 2.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
