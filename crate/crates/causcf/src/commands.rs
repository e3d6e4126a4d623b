//! The five subcommands. Each loads its inputs, calls the core operations,
//! writes CSVs into the output directory and finishes with a run manifest
//! `<command>.manifest.json` that echoes the resolved configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use causcf_core::baselines::{fit_propensity, CausCfEstimator, RddEstimator, SnipsEstimator, StatisticEstimator};
use causcf_core::data::{split_by_time, Dataset, SplitBoundary};
use causcf_core::effects::{compare_estimators, Estimator, KnownEffect};
use causcf_core::metrics::{precision_at_n, rank_logged_items, subgroup_cate, uplift_at_n, uplift_snips_at_n, Grouping, LogIndex};
use causcf_core::model::{init_factors, train, FactorSet, ModelConfig};
use causcf_core::rdd::{population_ate_rdd, UserVectors};
use causcf_core::synth::{generate_world, n_blocks, positivity_audit, simulate_log, SyntheticWorld};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::config::{Command, Representation, RunConfig, Split};
use crate::error::{Error, Result};
use crate::io::{dataset_manifest, load_dataset, manifest_path, save_dataset, sha256_file, write_json, LogFormat};
use crate::reports::{self, RankingRow};

pub const DEFAULT_OUT_DIR: &str = "causcf-out";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What a run read, wrote and found. Only `timings` differs between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub timings: BTreeMap<String, f64>,
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn new(cfg: &RunConfig, command: Command) -> Self {
        let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Self {
            out,
            manifest: RunManifest {
                tool: "causcf".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command,
                config: cfg.clone(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                summary: BTreeMap::new(),
                warnings: Vec::new(),
                timings: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    fn output(&mut self, name: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(name))?;
        self.manifest.outputs.push(FileDigest {
            path: name.into(),
            sha256,
        });
        Ok(())
    }

    fn note(&mut self, key: &str, value: Value) {
        self.manifest.summary.insert(key.into(), value);
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.manifest.warnings.push(message);
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let value = f()?;
        self.manifest.timings.insert(label.into(), start.elapsed().as_secs_f64());
        Ok(value)
    }

    fn finish(mut self) -> Result<RunManifest> {
        self.manifest
            .timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let name = format!("{}.manifest.json", self.manifest.command.as_str());
        write_json(&self.manifest, &self.path(&name))?;
        info!("wrote {}", self.path(&name).display());
        Ok(self.manifest)
    }
}

/// Runs `cfg.command` on a rayon pool of `cfg.threads` workers.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    let command = cfg
        .command
        .ok_or_else(|| Error::Usage("no command given".into()))?;
    if cfg.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Synth => cmd_synth(cfg),
        Command::Train => cmd_train(cfg),
        Command::Estimate => cmd_estimate(cfg),
        Command::Rdd => cmd_rdd(cfg),
        Command::Evaluate => cmd_evaluate(cfg),
    })
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, command: Command) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("{} needs {flag}", command.as_str())))
}

fn load_input(run: &mut Run, cfg: &RunConfig, command: Command) -> Result<Dataset> {
    let path = required(&cfg.input, "--input", command)?;
    run.input(path)?;
    let ds = run.timed("load", || load_dataset(path, cfg.format))?;
    info!("loaded {} records, {} users, {} items", ds.len(), ds.n_users(), ds.n_items());
    Ok(ds)
}

fn load_checkpoint(run: &mut Run, path: &Path, ds: &Dataset) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Validation(format!("missing checkpoint: {} does not exist", path.display())));
    }
    run.input(path)?;
    let ck = Checkpoint::load(path)?;
    ck.check_dataset(ds)?;
    Ok(ck)
}

fn split(ds: &Dataset, split: Split) -> Result<(Dataset, Dataset)> {
    let boundary = match split {
        Split::Day(d) => SplitBoundary::Timestamp(d),
        Split::Fraction(f) => SplitBoundary::Fraction(f),
    };
    Ok(split_by_time(ds, boundary)?)
}

fn simulate(world: &SyntheticWorld, threads: usize) -> Result<Dataset> {
    let n = world.config.n_sessions;
    if threads <= 1 {
        return Ok(simulate_log(world, n)?);
    }
    // blocks carry their own seeds, so the ordered merge matches the serial log
    let blocks: Vec<_> = (0..n_blocks(n))
        .into_par_iter()
        .map(|b| world.simulate_block(n, b))
        .collect();
    Ok(world.assemble(blocks.concat())?)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::new(cfg, Command::Synth);
    let sc = cfg.synth.to_core(cfg.seed);
    sc.validate()?;
    let world = run.timed("world", || Ok(generate_world(&sc)?))?;
    let ds = run.timed("simulate", || simulate(&world, cfg.threads))?;
    info!("simulated {} records", ds.len());

    let format = cfg.format.unwrap_or(LogFormat::Csv);
    let log_name = format!("log.{}", format.extension());
    let log_path = run.path(&log_name);
    run.timed("save", || save_dataset(&ds, &log_path, Some(format)))?;
    run.output(&log_name)?;
    let dm = dataset_manifest(&ds, &log_path, format)?;
    let dm_path = manifest_path(&log_path);
    write_json(&dm, &dm_path)?;
    run.output(&dm_path.file_name().unwrap().to_string_lossy())?;

    reports::write_truth(&run.path("truth.csv"), &world)?;
    run.output("truth.csv")?;
    if cfg.synth.pair_truth {
        reports::write_pair_truth(&run.path("pair_truth.csv"), &world)?;
        run.output("pair_truth.csv")?;
    }

    let audit = positivity_audit(&world, &ds);
    if audit.fraction() < 0.99 {
        run.warn(format!(
            "only {:.3} of segment x item cells hold both arms",
            audit.fraction()
        ));
    }
    run.note("records", json!(ds.len()));
    run.note("population_ate", json!(world.population_ate()));
    run.note("bayes_log_loss", json!(world.bayes_log_loss(&ds)?));
    run.note("positivity_fraction", json!(audit.fraction()));
    run.finish()
}

fn fit_model(run: &mut Run, label: &str, train_ds: &Dataset, mc: &ModelConfig) -> Result<(FactorSet, causcf_core::model::TrainReport)> {
    run.timed(label, || {
        let mut fs = init_factors(mc, train_ds)?;
        let report = train(&mut fs, train_ds, mc)?;
        Ok((fs, report))
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::new(cfg, Command::Train);
    let ds = load_input(&mut run, cfg, Command::Train)?;
    let (train_ds, test_ds) = split(&ds, cfg.eval.split)?;
    let mc = cfg.model.to_core();
    let (fs, report) = fit_model(&mut run, "train", &train_ds, &mc)?;

    Checkpoint::new(cfg.model.clone(), &ds, fs.clone()).save(&run.path("checkpoint.json"))?;
    run.output("checkpoint.json")?;
    reports::write_train_loss(&run.path("train_loss.csv"), &report)?;
    run.output("train_loss.csv")?;

    run.note("train_records", json!(train_ds.len()));
    run.note("test_records", json!(test_ds.len()));
    run.note("cells", json!(report.cells));
    run.note("final_objective", json!(report.objective.last()));
    run.note("train_log_loss", json!(fs.log_loss(&train_ds)?));
    run.note("test_log_loss", json!(fs.log_loss(&test_ds)?));
    run.finish()
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::new(cfg, Command::Estimate);
    let ds = load_input(&mut run, cfg, Command::Estimate)?;
    let ck_path = required(&cfg.checkpoint, "--checkpoint (missing checkpoint)", Command::Estimate)?;
    let ck = load_checkpoint(&mut run, ck_path, &ds)?;
    let fs = &ck.factors;
    let prob = ck.model.probability_scale_ite;

    let mut pairs: Vec<(u32, u32)> = ds.records().iter().map(|r| (r.user, r.item)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let rows = run.timed("ite", || {
        pairs
            .iter()
            .map(|&(u, i)| {
                Ok((
                    u,
                    i,
                    fs.estimate_ite(u, i, prob)?,
                    fs.predict_probability(u, i, 0)?,
                    fs.predict_probability(u, i, 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    reports::write_ite(&run.path("ite.csv"), &ds, &rows)?;
    run.output("ite.csv")?;

    let grouping = Grouping::from_key(&ds, &cfg.eval.group_by)?;
    let ites: Vec<(u32, u32, f64)> = rows.iter().map(|r| (r.0, r.1, r.2)).collect();
    let table = subgroup_cate(&ites, &grouping)?;
    let (sub, adv) = (run.path("subgroups.csv"), run.path("subgroup_advantage.csv"));
    reports::write_subgroups(&sub, &adv, &ds, &table)?;
    run.output("subgroups.csv")?;
    if adv.exists() && table.labels.len() == 2 {
        run.output("subgroup_advantage.csv")?;
    }

    run.note("pairs", json!(rows.len()));
    run.note("mean_ite", json!(ites.iter().map(|r| r.2).sum::<f64>() / ites.len().max(1) as f64));
    run.finish()
}

fn representations(run: &mut Run, cfg: &RunConfig, ds: &Dataset) -> Result<Option<UserVectors>> {
    match cfg.rdd.representation {
        Representation::Features => Ok(None),
        Representation::Factors => {
            let path = required(&cfg.checkpoint, "--checkpoint for factor representations", cfg.command.unwrap_or(Command::Rdd))?;
            let ck = load_checkpoint(run, path, ds)?;
            Ok(Some(UserVectors::from_factors(&ck.factors)?))
        }
    }
}

/// Logs without browsing depth cannot be analysed by discontinuity.
fn require_positions(ds: &Dataset) -> Result<()> {
    if ds.has_positions() {
        return Ok(());
    }
    Err(Error::Validation(
        "browsing positions required: RDD needs position and leave_position on every record; \
         logs that only record exposures (as in the Xing data) cannot be analysed this way"
            .into(),
    ))
}

pub fn cmd_rdd(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::new(cfg, Command::Rdd);
    let ds = load_input(&mut run, cfg, Command::Rdd)?;
    require_positions(&ds)?;
    let rc = cfg.rdd.to_core();
    rc.validate()?;
    let reps = match representations(&mut run, cfg, &ds)? {
        Some(r) => r,
        None => UserVectors::from_features(&ds),
    };
    let result = run.timed("rdd", || Ok(population_ate_rdd(&ds, None, &reps, &rc)?))?;

    reports::write_homogeneity(&run.path("homogeneity.csv"), &ds, &result)?;
    run.output("homogeneity.csv")?;
    reports::write_cutoff_effects(&run.path("cutoff_effects.csv"), &ds, &result)?;
    run.output("cutoff_effects.csv")?;
    reports::write_item_ate(&run.path("item_ate.csv"), &ds, &result)?;
    run.output("item_ate.csv")?;

    let estimated = result.items.iter().filter(|o| o.estimate().is_ok()).count();
    run.note("pooled_ate", json!(result.pooled.map(|p| p.value)));
    run.note("items_estimated", json!(estimated));
    run.note("items_skipped", json!(result.items.len() - estimated));
    for w in result.warnings.clone() {
        run.warn(w);
    }
    run.finish()
}

fn truth_effect(run: &mut Run, path: &Path) -> Result<KnownEffect> {
    run.input(path)?;
    let truth = reports::read_truth(path)?;
    if truth.is_empty() {
        return Err(Error::format(path, "no rows"));
    }
    Ok(KnownEffect {
        ate: truth.iter().map(|t| t.1).sum::<f64>() / truth.len() as f64,
    })
}

fn ranking_rows(
    method: &str,
    ns: &[usize],
    log: &LogIndex,
    test: &Dataset,
    pm: Option<&causcf_core::baselines::PropensityModel>,
    score: impl FnMut(u32, u32) -> f64,
) -> Vec<RankingRow> {
    let depth = ns.iter().copied().max().unwrap_or(0);
    let lists = rank_logged_items(log, depth, score);
    let msg = |e: causcf_core::Error| e.to_string();
    ns.iter()
        .map(|&n| RankingRow {
            method: method.into(),
            n,
            uplift: uplift_at_n(&lists, log, n).map_err(msg),
            uplift_snips: match pm {
                Some(pm) => uplift_snips_at_n(&lists, log, test, pm, n).map_err(msg),
                None => Err("no propensity model".into()),
            },
            precision: precision_at_n(&lists, log, n).map_err(msg),
        })
        .collect()
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = Run::new(cfg, Command::Evaluate);
    let ds = load_input(&mut run, cfg, Command::Evaluate)?;
    require_positions(&ds)?;
    let (train_ds, test_ds) = split(&ds, cfg.eval.split)?;
    let truth = match &cfg.truth {
        Some(p) => Some(truth_effect(&mut run, p)?),
        None => None,
    };
    let mc = cfg.model.to_core();
    let factors = match &cfg.checkpoint {
        Some(p) => load_checkpoint(&mut run, p, &ds)?.factors,
        None => fit_model(&mut run, "train_causcf", &train_ds, &mc)?.0,
    };
    let mf_config = ModelConfig {
        freeze_treatment_factors: true,
        ..mc
    };
    let (mf, _) = fit_model(&mut run, "train_mf", &train_ds, &mf_config)?;

    let mut reference = RddEstimator::new(cfg.rdd.to_core());
    reference.reps = representations(&mut run, cfg, &ds)?;
    let mut estimators: Vec<Box<dyn Estimator>> = vec![
        Box::new(StatisticEstimator),
        Box::new(SnipsEstimator::new(cfg.propensity.to_core())),
        Box::new(CausCfEstimator::pretrained(mc, factors.clone())),
    ];
    let t0 = Instant::now();
    let clock = || t0.elapsed().as_secs_f64();
    let report = compare_estimators(
        &train_ds,
        &test_ds,
        &mut estimators,
        &mut reference,
        truth,
        cfg.eval.pooling.to_core(),
        &clock,
    )
    .map_err(|e| match e {
        causcf_core::Error::AllSkipped => Error::Runtime(
            "the RDD reference has no admissible cutoff on one of the splits; \
             more sessions or a smaller --min-samples are needed"
                .into(),
        ),
        other => other.into(),
    })?;
    for row in &report.rows {
        run.manifest.timings.insert(format!("estimator:{}", row.name), row.seconds);
        for e in &row.errors {
            run.warn(format!("{}: {e}", row.name));
        }
    }
    reports::write_comparison(&run.path("comparison.csv"), &report)?;
    run.output("comparison.csv")?;

    let log = LogIndex::new(&test_ds);
    let pm = match fit_propensity(&train_ds, &cfg.propensity.to_core()) {
        Ok(pm) => Some(pm),
        Err(e) => {
            run.warn(format!("propensity model for SNIPS uplift: {e}"));
            None
        }
    };
    let ns = &cfg.eval.ranking_n;
    let prob = mc.use_probability_scale_ite;
    let mut rows = run.timed("ranking", || {
        Ok(ranking_rows("CausCF", ns, &log, &test_ds, pm.as_ref(), |u, i| {
            factors.estimate_ite(u, i, prob).unwrap_or(f64::NEG_INFINITY)
        }))
    })?;
    rows.extend(ranking_rows("MF", ns, &log, &test_ds, pm.as_ref(), |u, i| {
        mf.predict_score(u, i, 1).unwrap_or(f64::NEG_INFINITY)
    }));
    reports::write_ranking(&run.path("ranking.csv"), &rows)?;
    run.output("ranking.csv")?;

    run.note("train_records", json!(train_ds.len()));
    run.note("test_records", json!(test_ds.len()));
    run.note("truth_ate", json!(truth.map(|t| t.ate)));
    run.finish()
}
