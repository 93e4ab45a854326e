use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{run_benchmark, BenchContext, Dataset, Method, MetricsRow};
use crate::config::PredictorSection;
use crate::costmodel::{CostOracle, MatrixSource, OracleVariant};
use crate::error::{CoopError, Result};
use crate::policy::{CoopEncoderKind, GeneratorKind, PolicyConfig};
use crate::predictor::{sample_predictor_dataset, train_predictor, PredictorArch};
use crate::train::{train_policy, PenaltyMode, RewardConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    CoopEncoder,
    ActionGenerator,
    Penalty,
    Oracle,
    PredictorSize,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::CoopEncoder,
        AblationAxis::ActionGenerator,
        AblationAxis::Penalty,
        AblationAxis::Oracle,
        AblationAxis::PredictorSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::CoopEncoder => "coop_encoder",
            AblationAxis::ActionGenerator => "action_generator",
            AblationAxis::Penalty => "penalty",
            AblationAxis::Oracle => "oracle",
            AblationAxis::PredictorSize => "predictor_size",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = CoopError;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| CoopError::UnsupportedAxis(s.into()))
    }
}

/// Base settings every variant starts from.
#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub reward: RewardConfig,
    /// Evaluation oracle, and the training oracle unless the axis changes it.
    pub oracle: CostOracle,
    pub step_back: Option<usize>,
    /// Dataset and training settings for the predictor-size axis.
    pub predictor: PredictorSection,
}

/// One configuration on an axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub policy: PolicyConfig,
    pub reward: RewardConfig,
    pub train_oracle: CostOracle,
    /// When set, a predictor of this shape is trained and used as the matrix
    /// source for both training and evaluation.
    pub predictor: Option<PredictorArch>,
}

pub fn ablation_variants(axis: AblationAxis, base: &AblationConfig) -> Vec<Variant> {
    let plain = |name: &str| Variant {
        name: name.into(),
        policy: base.train.policy.clone(),
        reward: base.reward,
        train_oracle: base.oracle,
        predictor: None,
    };
    match axis {
        AblationAxis::CoopEncoder => [
            ("row_column", CoopEncoderKind::RowColumn),
            ("dense_mhsa", CoopEncoderKind::Dense),
            ("mlp", CoopEncoderKind::Mlp),
        ]
        .map(|(name, k)| Variant { policy: PolicyConfig { coop_encoder: k, ..base.train.policy.clone() }, ..plain(name) })
        .to_vec(),
        AblationAxis::ActionGenerator => [
            ("fused", GeneratorKind::Fused),
            ("mhsa", GeneratorKind::SelfAttention),
            ("mhca", GeneratorKind::CrossAttention),
            ("mlp", GeneratorKind::Mlp),
        ]
        .map(|(name, k)| Variant { policy: PolicyConfig { generator: k, ..base.train.policy.clone() }, ..plain(name) })
        .to_vec(),
        AblationAxis::Penalty => [PenaltyMode::Adaptive, PenaltyMode::Fixed(1.0), PenaltyMode::None]
            .map(|p| Variant { reward: RewardConfig { penalty: p, ..base.reward }, ..plain(&p.to_string()) })
            .to_vec(),
        AblationAxis::Oracle => [OracleVariant::Kinematic, OracleVariant::Euclidean, OracleVariant::EuclideanOverlap]
            .map(|v| Variant { train_oracle: base.oracle.with_variant(v), ..plain(&variant_name(v)) })
            .to_vec(),
        AblationAxis::PredictorSize => [base.predictor.arch(), PredictorArch::small()]
            .map(|arch| {
                let name = arch.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x");
                Variant { predictor: Some(arch), ..plain(&name) }
            })
            .to_vec(),
    }
}

fn variant_name(v: OracleVariant) -> String {
    serde_json::to_value(v).ok().and_then(|s| s.as_str().map(String::from)).unwrap_or_default()
}

/// Trains one policy per variant and evaluates it on `dataset` under the
/// base oracle. Rows are named `axis=variant`. Each variant's artifacts go
/// to `out_dir/<axis>/<variant>`.
///
/// On the oracle axis the variant oracle also supplies the matrices the
/// policy sees, in training and in evaluation; execution and the reported
/// cost stay with the base oracle.
pub fn run_ablation(
    axis: AblationAxis,
    dataset: &Dataset,
    config: &AblationConfig,
    base_source: &dyn MatrixSource,
    out_dir: &Path,
    mut log: impl FnMut(&str),
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for variant in ablation_variants(axis, config) {
        let dir = out_dir.join(axis.name()).join(variant.name.replace(['(', ')'], ""));
        let trained_predictor;
        let source: &dyn MatrixSource = if let Some(arch) = &variant.predictor {
            let p = &config.predictor;
            let samples = sample_predictor_dataset(p.samples, &variant.train_oracle, p.dataset_seed)?;
            let t = train_predictor(&samples, arch.clone(), variant.train_oracle, &p.train_config(), |r| {
                log(&format!(
                    "{axis}={} predictor epoch {} accuracy {:.4} relative error {:.4}",
                    variant.name, r.epoch, r.held_out.mask_accuracy, r.held_out.mean_relative_time_error
                ))
            })?;
            trained_predictor = t.model;
            &trained_predictor
        } else if variant.train_oracle != config.oracle {
            &variant.train_oracle
        } else {
            base_source
        };
        let train = TrainConfig { policy: variant.policy.clone(), ..config.train.clone() };
        let outcome = train_policy(&train, &variant.reward, &variant.train_oracle, source, &dir, false, |r| {
            log(&format!("{axis}={} iteration {} mean cost {:.4} success {:.3}", variant.name, r.iteration, r.mean_cost, r.success_rate))
        })?;
        let ctx = BenchContext { policy: Some(&outcome.policy), step_back: config.step_back, ..BenchContext::new(config.oracle, source) };
        let mut row = run_benchmark(&[Method::Policy], dataset, &ctx)?.remove(0);
        row.method = format!("{axis}={}", variant.name);
        log(&format!("{} success {:.3} mean cost {:.4}", row.method, row.success_rate, row.mean_cost));
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> AblationConfig {
        AblationConfig {
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
            oracle: CostOracle::default(),
            step_back: Some(50),
            predictor: PredictorSection::default(),
        }
    }

    #[test]
    fn unknown_axis_is_unsupported() {
        assert!(matches!("color".parse::<AblationAxis>(), Err(CoopError::UnsupportedAxis(_))));
        for a in AblationAxis::ALL {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
    }

    #[test]
    fn penalty_axis_lists_three_modes() {
        let names: Vec<String> = ablation_variants(AblationAxis::Penalty, &base()).into_iter().map(|v| v.name).collect();
        assert_eq!(names, ["adaptive", "fixed(1)", "none"]);
    }

    #[test]
    fn oracle_axis_includes_euclidean() {
        let v = ablation_variants(AblationAxis::Oracle, &base());
        assert!(v.iter().any(|v| v.train_oracle.variant == OracleVariant::Euclidean && v.name == "euclidean"));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn predictor_axis_includes_small_model() {
        let v = ablation_variants(AblationAxis::PredictorSize, &base());
        assert_eq!(v[1].predictor.as_ref().unwrap().hidden, vec![64, 64]);
        assert_eq!(v[1].name, "64x64");
        assert_eq!(v[0].name, "512x512x512");
    }

    #[test]
    fn architecture_axes_vary_only_the_policy() {
        for axis in [AblationAxis::CoopEncoder, AblationAxis::ActionGenerator] {
            for v in ablation_variants(axis, &base()) {
                assert_eq!(v.train_oracle, CostOracle::default());
                assert_eq!(v.reward, RewardConfig::default());
                assert_eq!(v.policy.width, 128);
            }
        }
    }
}
