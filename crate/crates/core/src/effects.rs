//! Treatment-effect values at different population scopes, their
//! aggregation, and a harness that runs several estimators on a
//! train/test split and scores them against a reference.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{epsilon_ate_with, EpsilonPooling};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Pair,
    Cutoff,
    Item,
    Subgroup,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Not enough data; `value` is meaningless and excluded from aggregation.
    Skipped,
}

/// An ITE, CATE or ATE with the sample counts behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectEstimate {
    pub value: f64,
    pub scope: Scope,
    pub n_treated: usize,
    pub n_control: usize,
    pub status: Status,
}

impl EffectEstimate {
    pub fn ok(value: f64, scope: Scope, n_treated: usize, n_control: usize) -> Self {
        Self {
            value,
            scope,
            n_treated,
            n_control,
            status: Status::Ok,
        }
    }

    pub fn skipped(scope: Scope, n_treated: usize, n_control: usize) -> Self {
        Self {
            value: 0.0,
            scope,
            n_treated,
            n_control,
            status: Status::Skipped,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn count(&self) -> usize {
        self.n_treated + self.n_control
    }

    pub fn with_scope(mut self, scope: Scope) -> Self {
        self.scope = scope;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weight by `n_treated + n_control`.
    Counts,
    Uniform,
}

/// Weighted mean of the `Ok` estimates; counts are summed. The result has
/// population scope.
pub fn aggregate(estimates: &[EffectEstimate], weighting: Weighting) -> Result<EffectEstimate> {
    let ok = || estimates.iter().filter(|e| e.is_ok());
    let weight = |e: &EffectEstimate| match weighting {
        Weighting::Counts => e.count() as f64,
        Weighting::Uniform => 1.0,
    };
    if ok().next().is_none() {
        return Err(Error::AllSkipped);
    }
    let value = crate::math::weighted_mean(ok().map(|e| (weight(e), e.value))).ok_or(Error::AllSkipped)?;
    Ok(EffectEstimate::ok(
        value,
        Scope::Population,
        ok().map(|e| e.n_treated).sum(),
        ok().map(|e| e.n_control).sum(),
    ))
}

/// Per-item estimates keyed by item index, plus their count-weighted pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEffects {
    pub per_item: Vec<(u32, EffectEstimate)>,
    pub pooled: EffectEstimate,
}

impl ItemEffects {
    /// Pools `per_item` with count weights.
    pub fn from_items(per_item: Vec<(u32, EffectEstimate)>) -> Result<Self> {
        let estimates: Vec<_> = per_item.iter().map(|(_, e)| *e).collect();
        let pooled = aggregate(&estimates, Weighting::Counts)?;
        Ok(Self { per_item, pooled })
    }

    pub fn get(&self, item: u32) -> Option<&EffectEstimate> {
        self.per_item.iter().find(|(i, _)| *i == item).map(|(_, e)| e)
    }
}

/// An effect estimator that is fitted on a training log and then asked for
/// per-item effects on any log sharing its indices.
pub trait Estimator {
    fn name(&self) -> &str;

    fn fit(&mut self, train: &Dataset) -> Result<()>;

    fn estimate(&self, ds: &Dataset) -> Result<ItemEffects>;

    /// Hash of the estimator's configuration, for run manifests.
    fn fingerprint(&self) -> u64 {
        0
    }
}

/// One estimator's evaluation on a split.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub name: String,
    pub effects: ItemEffects,
    pub seconds: f64,
    pub fingerprint: u64,
}

/// Ground-truth population effect, available on simulated data only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownEffect {
    pub ate: f64,
}

/// A comparison table row: pooled ATE within-sample (train) and
/// out-of-sample (test), and the absolute errors against the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub ate_within: Option<f64>,
    pub ate_out: Option<f64>,
    pub eps_within: Option<f64>,
    pub eps_out: Option<f64>,
    /// `|pooled ATE - true ATE|`, simulated data only.
    pub truth_eps_within: Option<f64>,
    pub truth_eps_out: Option<f64>,
    pub seconds: f64,
    pub fingerprint: u64,
    /// Failures recorded per cell; the sweep continues past them.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// The reference row comes first.
    pub rows: Vec<ComparisonRow>,
    pub within: Vec<Option<EstimatorResult>>,
    pub out: Vec<Option<EstimatorResult>>,
}

impl ComparisonReport {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn run_one(
    est: &dyn Estimator,
    ds: &Dataset,
    clock: &dyn Fn() -> f64,
) -> Result<EstimatorResult> {
    let start = clock();
    let effects = est.estimate(ds)?;
    Ok(EstimatorResult {
        name: est.name().to_string(),
        effects,
        seconds: clock() - start,
        fingerprint: est.fingerprint(),
    })
}

/// Fits every estimator (and the reference) on `train`, estimates on both
/// splits, and scores each against the reference's estimate on the same
/// split. `clock` returns seconds and is only used for timing.
pub fn compare_estimators(
    train: &Dataset,
    test: &Dataset,
    estimators: &mut [Box<dyn Estimator + '_>],
    reference: &mut dyn Estimator,
    truth: Option<KnownEffect>,
    pooling: EpsilonPooling,
    clock: &dyn Fn() -> f64,
) -> Result<ComparisonReport> {
    let start = clock();
    reference.fit(train)?;
    let fit_seconds = clock() - start;
    let ref_within = run_one(reference, train, clock)?;
    let ref_out = run_one(reference, test, clock)?;
    let truth_eps = |r: &EstimatorResult| truth.map(|t| (r.effects.pooled.value - t.ate).abs());

    let mut rows = Vec::with_capacity(estimators.len() + 1);
    let mut within_all = Vec::new();
    let mut out_all = Vec::new();
    rows.push(ComparisonRow {
        name: reference.name().to_string(),
        ate_within: Some(ref_within.effects.pooled.value),
        ate_out: Some(ref_out.effects.pooled.value),
        eps_within: None,
        eps_out: None,
        truth_eps_within: truth_eps(&ref_within),
        truth_eps_out: truth_eps(&ref_out),
        seconds: fit_seconds + ref_within.seconds + ref_out.seconds,
        fingerprint: reference.fingerprint(),
        errors: Vec::new(),
    });

    for est in estimators.iter_mut() {
        let mut row = ComparisonRow {
            name: est.name().to_string(),
            ate_within: None,
            ate_out: None,
            eps_within: None,
            eps_out: None,
            truth_eps_within: None,
            truth_eps_out: None,
            seconds: 0.0,
            fingerprint: est.fingerprint(),
            errors: Vec::new(),
        };
        let start = clock();
        let fitted = est.fit(train);
        row.seconds += clock() - start;
        if let Err(e) = fitted {
            row.errors.push(alloc::format!("fit: {e}"));
            rows.push(row);
            within_all.push(None);
            out_all.push(None);
            continue;
        }
        let mut side = |ds: &Dataset, reference: &EstimatorResult, label: &str| -> Option<EstimatorResult> {
            match run_one(est.as_ref(), ds, clock) {
                Ok(result) => {
                    row.seconds += result.seconds;
                    let eps = match epsilon_ate_with(&result.effects.per_item, &reference.effects.per_item, pooling) {
                        Ok(e) => Some(e.epsilon),
                        Err(e) => {
                            row.errors.push(alloc::format!("{label}: {e}"));
                            None
                        }
                    };
                    let (ate, t) = (Some(result.effects.pooled.value), truth_eps(&result));
                    if label == "within" {
                        (row.ate_within, row.eps_within, row.truth_eps_within) = (ate, eps, t);
                    } else {
                        (row.ate_out, row.eps_out, row.truth_eps_out) = (ate, eps, t);
                    }
                    Some(result)
                }
                Err(e) => {
                    row.errors.push(alloc::format!("{label}: {e}"));
                    None
                }
            }
        };
        let w = side(train, &ref_within, "within");
        let o = side(test, &ref_out, "out");
        rows.push(row);
        within_all.push(w);
        out_all.push(o);
    }
    let mut within = alloc::vec![Some(ref_within)];
    within.extend(within_all);
    let mut out = alloc::vec![Some(ref_out)];
    out.extend(out_all);
    Ok(ComparisonReport { rows, within, out })
}
