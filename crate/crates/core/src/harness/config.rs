use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptHyper;
use crate::baselines::ErmHyper;
use crate::datagen::{EmbedConfig, GenParamsA, GenParamsB};
use crate::error::{Error, Result};
use crate::rpm::{AnnealSchedule, RpmArchitecture, TrainHyper, WRecognition};
use crate::util::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    AppA,
    AppB,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::AppA => "app_a",
            Generator::AppB => "app_b",
        }
    }

    pub fn k_u(self) -> usize {
        match self {
            Generator::AppA => 2,
            Generator::AppB => GenParamsB::K_U,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rpm,
    ErmSource,
    ErmTarget,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rpm => "rpm",
            Method::ErmSource => "erm_source",
            Method::ErmTarget => "erm_target",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rpm" => Ok(Method::Rpm),
            "erm_source" => Ok(Method::ErmSource),
            "erm_target" => Ok(Method::ErmTarget),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_true() -> bool {
    true
}

/// A sweep over one setting axis: `d_x` for `app_a`, the dataset size for
/// `app_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: Generator,
    pub settings: Vec<usize>,
    /// Source and target sizes for `app_a`; ignored by `app_b`, whose setting
    /// is the size of both.
    #[serde(default)]
    pub n_source: usize,
    #[serde(default)]
    pub n_target: usize,
    pub pi_source: Vec<f64>,
    pub pi_target: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data_seed: u64,
    /// Reuse one generated dataset per setting across all seeds.
    #[serde(default = "default_true")]
    pub share_data: bool,
    pub rpm: TrainHyper,
    #[serde(default)]
    pub adapt: AdaptHyper,
    pub erm: ErmHyper,
    #[serde(default)]
    pub embed: EmbedConfig,
}

impl ExperimentConfig {
    /// Dimensionality sweep on the continuous-observation process at the
    /// published sample size, with training shortened to run on one core.
    pub fn app_a_desk() -> Self {
        ExperimentConfig {
            generator: Generator::AppA,
            settings: vec![2, 10, 20],
            n_source: 70_000,
            n_target: 70_000,
            pi_source: GenParamsA::SOURCE_PI.to_vec(),
            pi_target: GenParamsA::TARGET_PI.to_vec(),
            methods: vec![Method::Rpm, Method::ErmSource, Method::ErmTarget, Method::Oracle],
            seeds: vec![0, 1, 2],
            data_seed: 0,
            share_data: true,
            rpm: TrainHyper {
                epochs: 50,
                anneal: AnnealSchedule { beta_start: 5.0, beta_end: 1.0, anneal_epochs: 10 },
                restarts: 3,
                ..TrainHyper::app_a(0)
            },
            adapt: AdaptHyper::default(),
            erm: ErmHyper { epochs: 100, ..ErmHyper::app_a(0) },
            embed: EmbedConfig::default(),
        }
    }

    /// Dataset-size sweep on the image-observation process with surrogate
    /// embeddings, shortened and narrowed to run on one core.
    pub fn app_b_desk() -> Self {
        ExperimentConfig {
            generator: Generator::AppB,
            settings: vec![2_000, 10_000, 100_000],
            n_source: 0,
            n_target: 0,
            pi_source: GenParamsB::source_pi(),
            pi_target: GenParamsB::target_pi(),
            methods: vec![Method::Rpm, Method::ErmSource, Method::ErmTarget, Method::Oracle],
            seeds: vec![0, 1, 2],
            data_seed: 0,
            share_data: true,
            rpm: TrainHyper {
                epochs: 6,
                lr_generative: 1e-2,
                anneal: AnnealSchedule { beta_start: 5.0, beta_end: 1.0, anneal_epochs: 3 },
                restarts: 3,
                step_budget: Some(300),
                architecture: RpmArchitecture {
                    hidden_x: vec![16],
                    hidden_concept: vec![16],
                    w: WRecognition::Mlp { hidden: vec![16] },
                },
                ..TrainHyper::app_b(0)
            },
            adapt: AdaptHyper::default(),
            erm: ErmHyper { epochs: 20, ..ErmHyper::app_b(0) },
            embed: EmbedConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable config")
    }

    /// Hash identifying everything that affects a row's result.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serialisable config").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.settings.is_empty() {
            return bad("settings must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let k_u = self.generator.k_u();
        for (name, pi) in [("pi_source", &self.pi_source), ("pi_target", &self.pi_target)] {
            let s: f64 = pi.iter().sum();
            if pi.len() != k_u || pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
                return bad(format!("{name} must be a distribution over {k_u} values"));
            }
        }
        match self.generator {
            Generator::AppA => {
                if let Some(d) = self.settings.iter().find(|&&d| d < 2 || d % 2 == 1) {
                    return bad(format!("d_x = {d} must be even and at least 2"));
                }
                if self.n_source == 0 || self.n_target == 0 {
                    return bad("app_a needs positive n_source and n_target".into());
                }
            }
            Generator::AppB => {
                if self.settings.contains(&0) {
                    return bad("dataset sizes must be positive".into());
                }
            }
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        self.rpm.validate()?;
        self.erm.validate()?;
        if !(self.adapt.tolerance > 0.0) || self.adapt.max_iterations == 0 {
            return bad("adapt needs a positive tolerance and iteration cap".into());
        }
        Ok(())
    }

    /// `(n_source, n_target)` for a setting.
    pub fn sizes(&self, setting: usize) -> (usize, usize) {
        match self.generator {
            Generator::AppA => (self.n_source, self.n_target),
            Generator::AppB => (setting, setting),
        }
    }

    /// Seed for the data of one setting; independent of the method, and of
    /// the initialisation seed when data is shared.
    pub fn data_seed_for(&self, setting: usize, seed: u64) -> u64 {
        let mut s = self
            .data_seed
            .wrapping_add((setting as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        if !self.share_data {
            s ^= seed.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(17);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::app_a_desk(), ExperimentConfig::app_b_desk()] {
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let text = ExperimentConfig::app_a_desk().to_json().replace("\"oracle\"", "\"vae\"");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
        assert!(Method::parse("vae").is_err());
        assert_eq!(Method::parse("erm_target").unwrap(), Method::ErmTarget);
    }

    #[test]
    fn invalid_configs_are_refused() {
        let mut cfg = ExperimentConfig::app_a_desk();
        cfg.settings = vec![3];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::app_a_desk();
        cfg.pi_target = vec![0.5, 0.6];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::app_b_desk();
        cfg.pi_source = vec![0.5, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::app_b_desk();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::app_b_desk();
        cfg.methods = vec![Method::Rpm, Method::Rpm];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn data_seed_is_shared_across_initialisations() {
        let mut cfg = ExperimentConfig::app_a_desk();
        assert_eq!(cfg.data_seed_for(2, 0), cfg.data_seed_for(2, 5));
        assert_ne!(cfg.data_seed_for(2, 0), cfg.data_seed_for(4, 0));
        cfg.share_data = false;
        assert_ne!(cfg.data_seed_for(2, 0), cfg.data_seed_for(2, 5));
    }
}
