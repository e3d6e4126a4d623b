//! Serializable run configuration.
//!
//! Every command resolves a [`RunConfig`] from built-in defaults, an optional
//! config file (any run manifest written by this tool), and command-line
//! flags, in increasing precedence, and records the result in its manifest.

use std::path::PathBuf;

use causcf_core::baselines::PropensityConfig;
use causcf_core::metrics::EpsilonPooling;
use causcf_core::model::{EncoderMode, ModelConfig};
use causcf_core::rdd::RddConfig;
use causcf_core::synth::{Policy, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::io::LogFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Synth,
    Train,
    Estimate,
    Rdd,
    Evaluate,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Estimate => "estimate",
            Command::Rdd => "rdd",
            Command::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Id,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub k: usize,
    pub l2_coeff: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub encoder: Encoder,
    pub probability_scale_ite: bool,
    pub freeze_treatment_factors: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self::from_core(&ModelConfig::default())
    }
}

impl ModelSettings {
    pub fn from_core(c: &ModelConfig) -> Self {
        Self {
            k: c.k,
            l2_coeff: c.l2_coeff,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            encoder: match c.encoder_mode {
                EncoderMode::IdEmbedding => Encoder::Id,
                EncoderMode::FeatureLinear => Encoder::Features,
            },
            probability_scale_ite: c.use_probability_scale_ite,
            freeze_treatment_factors: c.freeze_treatment_factors,
        }
    }

    pub fn to_core(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            l2_coeff: self.l2_coeff,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            encoder_mode: match self.encoder {
                Encoder::Id => EncoderMode::IdEmbedding,
                Encoder::Features => EncoderMode::FeatureLinear,
            },
            use_probability_scale_ite: self.probability_scale_ite,
            freeze_treatment_factors: self.freeze_treatment_factors,
        }
    }
}

/// Vectors the balance test compares across a cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// The users' pre-treatment features.
    Features,
    /// The trained model's user factors (needs a checkpoint).
    Factors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RddSettings {
    pub window: u32,
    pub start: u32,
    pub end: u32,
    pub min_samples: usize,
    pub representation: Representation,
}

impl Default for RddSettings {
    fn default() -> Self {
        let c = RddConfig::default();
        Self {
            window: c.window,
            start: c.start,
            end: c.end,
            min_samples: c.min_samples,
            representation: Representation::Features,
        }
    }
}

impl RddSettings {
    pub fn to_core(&self) -> RddConfig {
        RddConfig {
            window: self.window,
            start: self.start,
            end: self.end,
            min_samples: self.min_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Preference,
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub n_users: usize,
    pub n_items: usize,
    pub k_star: usize,
    pub factor_mean: f64,
    pub factor_sd: f64,
    pub control_shift: f64,
    pub treated_shift: f64,
    pub treatment_sd: f64,
    pub segment_shift: f64,
    pub misspecification: f64,
    pub feature_noise: f64,
    pub policy: PolicyKind,
    pub gamma: f64,
    pub rho: f64,
    pub max_position: u32,
    pub control_ratio: u32,
    pub n_sessions: usize,
    pub days: u32,
    /// Also write pair-level true ITEs.
    pub pair_truth: bool,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            n_users: c.n_users,
            n_items: c.n_items,
            k_star: c.k_star,
            factor_mean: c.factor_mean,
            factor_sd: c.factor_sd,
            control_shift: c.control_shift,
            treated_shift: c.treated_shift,
            treatment_sd: c.treatment_sd,
            segment_shift: c.segment_shift,
            misspecification: c.misspecification,
            feature_noise: c.feature_noise,
            policy: PolicyKind::Preference,
            gamma: 0.0,
            rho: c.rho,
            max_position: c.max_position,
            control_ratio: c.control_ratio,
            n_sessions: c.n_sessions,
            days: c.days,
            pair_truth: false,
        }
    }
}

impl SynthSettings {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: self.n_users,
            n_items: self.n_items,
            k_star: self.k_star,
            factor_mean: self.factor_mean,
            factor_sd: self.factor_sd,
            control_shift: self.control_shift,
            treated_shift: self.treated_shift,
            treatment_sd: self.treatment_sd,
            segment_shift: self.segment_shift,
            misspecification: self.misspecification,
            feature_noise: self.feature_noise,
            policy: match self.policy {
                PolicyKind::Preference => Policy::Preference { gamma: self.gamma },
                PolicyKind::Interleaved => Policy::SegmentInterleaved,
            },
            rho: self.rho,
            max_position: self.max_position,
            control_ratio: self.control_ratio,
            n_sessions: self.n_sessions,
            days: self.days,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensitySettings {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2_coeff: f64,
    pub p_min: f64,
    pub interactions: bool,
}

impl Default for PropensitySettings {
    fn default() -> Self {
        let c = PropensityConfig::default();
        Self {
            learning_rate: c.learning_rate,
            iterations: c.iterations,
            l2_coeff: c.l2_coeff,
            p_min: c.p_min,
            interactions: c.interactions,
        }
    }
}

impl PropensitySettings {
    pub fn to_core(&self) -> PropensityConfig {
        PropensityConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            l2_coeff: self.l2_coeff,
            p_min: self.p_min,
            interactions: self.interactions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Reference,
    Own,
}

impl Pooling {
    pub fn to_core(self) -> EpsilonPooling {
        match self {
            Pooling::Reference => EpsilonPooling::ReferenceCounts,
            Pooling::Own => EpsilonPooling::OwnCounts,
        }
    }
}

/// Train/test boundary: a day stamp or a fraction of records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Day(u32),
    Fraction(f64),
}

impl Default for Split {
    fn default() -> Self {
        Split::Fraction(0.8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub split: Split,
    pub ranking_n: Vec<usize>,
    pub pooling: Pooling,
    /// Attribute key for subgroup tables (`all` or `user_feature:<j>`).
    pub group_by: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            split: Split::default(),
            ranking_n: vec![10, 30, 50],
            pooling: Pooling::Reference,
            group_by: "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input: Option<PathBuf>,
    pub format: Option<LogFormat>,
    pub checkpoint: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub verbosity: u8,
    pub model: ModelSettings,
    pub rdd: RddSettings,
    pub synth: SynthSettings,
    pub propensity: PropensitySettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            input: None,
            format: None,
            checkpoint: None,
            truth: None,
            out_dir: None,
            seed: 0,
            threads: 1,
            verbosity: 0,
            model: ModelSettings::default(),
            rdd: RddSettings::default(),
            synth: SynthSettings::default(),
            propensity: PropensitySettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_core() {
        assert_eq!(ModelSettings::default().to_core(), ModelConfig::default());
        assert_eq!(RddSettings::default().to_core(), RddConfig::default());
        assert_eq!(PropensitySettings::default().to_core(), PropensityConfig::default());
        assert_eq!(SynthSettings::default().to_core(0), SynthConfig::default());
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let mut c = RunConfig::default();
        c.eval.split = Split::Day(6);
        c.model.k = 4;
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"model": {"k": 3}}"#).unwrap();
        assert_eq!(partial.model.k, 3);
        assert_eq!(partial.model.epochs, ModelConfig::default().epochs);
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
    }
}
