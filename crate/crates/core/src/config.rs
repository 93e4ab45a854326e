//! TOML run configuration. Every section and field is optional; missing
//! values take the library defaults.
//!
//! ```toml
//! [oracle]
//! variant = "kinematic"
//! v = 0.5
//! p_fail = 0.0
//!
//! [train]
//! n = 10
//! matrix_source = "predictor"
//!
//! [reward]
//! penalty = "adaptive"
//! include_return_cost = true
//! penalty_scale = 30.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costmodel::{CostOracle, KinematicParams, OracleVariant};
use crate::error::{CoopError, Result};
use crate::predictor::{PredictorArch, PredictorTrainConfig};
use crate::train::{MatrixSourceKind, RewardConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub oracle: OracleSection,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub predictor: PredictorSection,
    pub bench: BenchSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub variant: OracleVariant,
    pub v: f64,
    pub omega: f64,
    pub beta: f64,
    pub d0: f64,
    pub d_safe: f64,
    pub d_col: f64,
    pub p_fail: f64,
    pub seed: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self::from(CostOracle::default())
    }
}

impl From<CostOracle> for OracleSection {
    fn from(o: CostOracle) -> Self {
        let p = o.params;
        Self {
            variant: o.variant,
            v: p.v,
            omega: p.omega,
            beta: p.beta,
            d0: p.d0,
            d_safe: p.d_safe,
            d_col: p.d_col,
            p_fail: o.p_fail,
            seed: o.seed,
        }
    }
}

impl OracleSection {
    pub fn build(&self) -> Result<CostOracle> {
        let params =
            KinematicParams { v: self.v, omega: self.omega, beta: self.beta, d0: self.d0, d_safe: self.d_safe, d_col: self.d_col };
        params.validate()?;
        if !(0.0..=1.0).contains(&self.p_fail) {
            return Err(CoopError::InvalidConfig(format!("p_fail {} outside [0, 1]", self.p_fail)));
        }
        Ok(CostOracle::new(self.variant, params).with_failures(self.p_fail, self.seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub samples: usize,
    pub dataset_seed: u64,
    pub hidden: Vec<usize>,
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub split: f64,
    pub seed: u64,
    pub time_weight: f64,
    pub max_seconds: Option<f64>,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let arch = PredictorArch::default();
        let t = PredictorTrainConfig::default();
        Self {
            // 200k for training plus 10k held out.
            samples: 210_000,
            dataset_seed: 11,
            hidden: arch.hidden,
            threshold: arch.threshold,
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            split: 1.0 / 21.0,
            seed: t.seed,
            time_weight: t.time_weight,
            max_seconds: t.max_seconds,
        }
    }
}

impl PredictorSection {
    pub fn arch(&self) -> PredictorArch {
        PredictorArch { hidden: self.hidden.clone(), threshold: self.threshold }
    }

    pub fn train_config(&self) -> PredictorTrainConfig {
        PredictorTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            split: self.split,
            seed: self.seed,
            time_weight: self.time_weight,
            max_seconds: self.max_seconds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub count: usize,
    pub seed: u64,
    pub methods: Vec<String>,
    pub matrix_source: MatrixSourceKind,
    pub step_back: bool,
    pub step_back_budget: usize,
    pub exhaustive_budget_s: f64,
    pub exhaustive_max_n: usize,
    /// Policy checkpoint stem used by the `policy` method.
    pub policy: Option<PathBuf>,
    /// Predictor checkpoint stem used when `matrix_source = "predictor"`.
    pub predictor: Option<PathBuf>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sizes: vec![4, 6, 10, 20, 40],
            count: 100,
            seed: 1,
            methods: ["exhaustive", "greedy", "matching", "policy"].map(String::from).to_vec(),
            matrix_source: MatrixSourceKind::Oracle,
            step_back: true,
            step_back_budget: crate::solvers::DEFAULT_STEP_BACK_BUDGET,
            exhaustive_budget_s: 1000.0,
            exhaustive_max_n: 10,
            policy: None,
            predictor: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoopError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoopError::InvalidConfig(e.to_string()))
    }
}
