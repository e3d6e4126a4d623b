//! Command-line parsing and config resolution.
//!
//! Precedence: flags, then the `--config` file, then built-in defaults. The
//! output directory falls back to `$CAUSCF_OUT_DIR` and then `causcf-out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Command, Encoder, Pooling, PolicyKind, Representation, RunConfig, Split};
use crate::error::{Error, Result};
use crate::io::LogFormat;

pub const OUT_DIR_ENV: &str = "CAUSCF_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "causcf", version, about = "Causal collaborative filtering and RDD evaluation for exposure logs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Simulate a browsing log with known effects.
    Synth(Flags),
    /// Train the factor model on the train side of the split.
    Train(Flags),
    /// Write per-pair ITEs and subgroup effects from a checkpoint.
    Estimate(Flags),
    /// Discontinuity analysis at the leave positions.
    Rdd(Flags),
    /// Compare estimators against RDD and score rankings.
    Evaluate(Flags),
}

impl Sub {
    pub fn split(self) -> (Command, Flags) {
        match self {
            Sub::Synth(f) => (Command::Synth, f),
            Sub::Train(f) => (Command::Train, f),
            Sub::Estimate(f) => (Command::Estimate, f),
            Sub::Rdd(f) => (Command::Rdd, f),
            Sub::Evaluate(f) => (Command::Evaluate, f),
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Config file: a RunConfig, or any run manifest to replay.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interaction log (csv or jsonl).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Log format; inferred from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<LogFormat>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// truth.csv from `synth`, for errors against the true ATE.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Training is always sequential.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub rdd: RddFlags,
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub propensity: PropensityFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Default, Args)]
#[command(next_help_heading = "Model")]
pub struct ModelFlags {
    /// Latent dimension.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub encoder: Option<Encoder>,
    /// ITEs as probability differences (true) or score differences (false).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub probability_ite: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub freeze_treatment: Option<bool>,
}

#[derive(Debug, Default, Args)]
#[command(next_help_heading = "RDD")]
pub struct RddFlags {
    /// Positions on each side of a cutoff.
    #[arg(long)]
    pub window: Option<u32>,
    #[arg(long)]
    pub start: Option<u32>,
    #[arg(long)]
    pub end: Option<u32>,
    /// Records required on each side before a cutoff counts.
    #[arg(long)]
    pub min_samples: Option<usize>,
    #[arg(long, value_enum)]
    pub representation: Option<Representation>,
}

#[derive(Debug, Default, Args)]
#[command(next_help_heading = "Generator")]
pub struct SynthFlags {
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub k_star: Option<usize>,
    #[arg(long)]
    pub factor_mean: Option<f64>,
    #[arg(long)]
    pub factor_sd: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub control_shift: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub treated_shift: Option<f64>,
    #[arg(long)]
    pub treatment_sd: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub segment_shift: Option<f64>,
    #[arg(long)]
    pub misspecification: Option<f64>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Confounding strength of the preference policy; 0 is random order.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Session-end probability per position.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_position: Option<u32>,
    /// Unseen positions logged per seen one.
    #[arg(long)]
    pub control_ratio: Option<u32>,
    #[arg(long)]
    pub sessions: Option<usize>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pair_truth: Option<bool>,
}

#[derive(Debug, Default, Args)]
#[command(next_help_heading = "Propensity")]
pub struct PropensityFlags {
    #[arg(long)]
    pub prop_lr: Option<f64>,
    #[arg(long)]
    pub prop_iterations: Option<usize>,
    #[arg(long)]
    pub prop_l2: Option<f64>,
    /// Propensity clip.
    #[arg(long)]
    pub p_min: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub prop_interactions: Option<bool>,
}

#[derive(Debug, Default, Args)]
#[command(next_help_heading = "Evaluation")]
pub struct EvalFlags {
    /// Train on records stamped up to this day.
    #[arg(long, conflicts_with = "split_fraction")]
    pub split_day: Option<u32>,
    /// Train on this leading fraction of records in time order.
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Comma-separated ranking depths.
    #[arg(long, value_delimiter = ',')]
    pub ranking_n: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub pooling: Option<Pooling>,
    /// `all` or `user_feature:<j>`.
    #[arg(long)]
    pub group_by: Option<String>,
}

/// Reads a config file. Run manifests are accepted and their `config`
/// member used, so any run can be replayed.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let inner = match value.get("config") {
        Some(c) if value.get("tool").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| Error::format(path, e.to_string()))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Layers flags over the config file over defaults.
pub fn resolve(command: Command, f: Flags, env_out_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut c = match &f.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    c.command = Some(command);
    if f.input.is_some() {
        c.input = f.input;
    }
    if f.format.is_some() {
        c.format = f.format;
    }
    if f.checkpoint.is_some() {
        c.checkpoint = f.checkpoint;
    }
    if f.truth.is_some() {
        c.truth = f.truth;
    }
    c.out_dir = f.out_dir.or(c.out_dir).or(env_out_dir);
    set(&mut c.seed, f.seed);
    set(&mut c.threads, f.threads);
    if f.verbose > 0 {
        c.verbosity = f.verbose;
    }

    let (m, mf) = (&mut c.model, f.model);
    set(&mut m.k, mf.k);
    set(&mut m.l2_coeff, mf.l2);
    set(&mut m.learning_rate, mf.lr);
    set(&mut m.batch_size, mf.batch_size);
    set(&mut m.epochs, mf.epochs);
    set(&mut m.seed, mf.model_seed);
    set(&mut m.encoder, mf.encoder);
    set(&mut m.probability_scale_ite, mf.probability_ite);
    set(&mut m.freeze_treatment_factors, mf.freeze_treatment);

    let (r, rf) = (&mut c.rdd, f.rdd);
    set(&mut r.window, rf.window);
    set(&mut r.start, rf.start);
    set(&mut r.end, rf.end);
    set(&mut r.min_samples, rf.min_samples);
    set(&mut r.representation, rf.representation);

    let (s, sf) = (&mut c.synth, f.synth);
    set(&mut s.n_users, sf.users);
    set(&mut s.n_items, sf.items);
    set(&mut s.k_star, sf.k_star);
    set(&mut s.factor_mean, sf.factor_mean);
    set(&mut s.factor_sd, sf.factor_sd);
    set(&mut s.control_shift, sf.control_shift);
    set(&mut s.treated_shift, sf.treated_shift);
    set(&mut s.treatment_sd, sf.treatment_sd);
    set(&mut s.segment_shift, sf.segment_shift);
    set(&mut s.misspecification, sf.misspecification);
    set(&mut s.feature_noise, sf.feature_noise);
    set(&mut s.policy, sf.policy);
    set(&mut s.gamma, sf.gamma);
    set(&mut s.rho, sf.rho);
    set(&mut s.max_position, sf.max_position);
    set(&mut s.control_ratio, sf.control_ratio);
    set(&mut s.n_sessions, sf.sessions);
    set(&mut s.days, sf.days);
    set(&mut s.pair_truth, sf.pair_truth);

    let (p, pf) = (&mut c.propensity, f.propensity);
    set(&mut p.learning_rate, pf.prop_lr);
    set(&mut p.iterations, pf.prop_iterations);
    set(&mut p.l2_coeff, pf.prop_l2);
    set(&mut p.p_min, pf.p_min);
    set(&mut p.interactions, pf.prop_interactions);

    let (e, ef) = (&mut c.eval, f.eval);
    set(&mut e.split, ef.split_day.map(Split::Day));
    set(&mut e.split, ef.split_fraction.map(Split::Fraction));
    set(&mut e.ranking_n, ef.ranking_n);
    set(&mut e.pooling, ef.pooling);
    set(&mut e.group_by, ef.group_by);
    if e.ranking_n.is_empty() || e.ranking_n.contains(&0) {
        return Err(Error::Usage("--ranking-n needs positive depths".into()));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> (Command, Flags) {
        Cli::try_parse_from(args).unwrap().command.split()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"k": 3, "epochs": 7}, "out_dir": "from-file"}"#).unwrap();
        let (cmd, f) = parse(&["causcf", "train", "--config", path.to_str().unwrap(), "--k", "5"]);
        let c = resolve(cmd, f, Some("from-env".into())).unwrap();
        assert_eq!(c.model.k, 5);
        assert_eq!(c.model.epochs, 7);
        assert_eq!(c.model.batch_size, RunConfig::default().model.batch_size);
        assert_eq!(c.out_dir.as_deref(), Some(Path::new("from-file")));
        assert_eq!(c.command, Some(Command::Train));
    }

    #[test]
    fn env_out_dir_is_the_fallback() {
        let (cmd, f) = parse(&["causcf", "rdd"]);
        let c = resolve(cmd, f, Some("from-env".into())).unwrap();
        assert_eq!(c.out_dir.as_deref(), Some(Path::new("from-env")));
    }

    #[test]
    fn manifests_replay_their_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut cfg = RunConfig::default();
        cfg.synth.gamma = 2.5;
        cfg.eval.split = Split::Day(4);
        let manifest = serde_json::json!({"tool": "causcf", "config": cfg});
        std::fs::write(&path, manifest.to_string()).unwrap();
        let c = read_config(&path).unwrap();
        assert_eq!(c.synth.gamma, 2.5);
        assert_eq!(c.eval.split, Split::Day(4));
    }

    #[test]
    fn negative_values_and_lists_parse() {
        let (cmd, f) = parse(&[
            "causcf", "synth", "--control-shift", "-1.25", "--ranking-n", "5,20", "--pair-truth",
        ]);
        let c = resolve(cmd, f, None).unwrap();
        assert_eq!(c.synth.control_shift, -1.25);
        assert_eq!(c.eval.ranking_n, vec![5, 20]);
        assert!(c.synth.pair_truth);
    }

    #[test]
    fn split_flags_conflict() {
        assert!(Cli::try_parse_from(["causcf", "evaluate", "--split-day", "3", "--split-fraction", "0.5"]).is_err());
    }
}
