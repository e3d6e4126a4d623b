//! Reference estimators: the naive treated-minus-control difference, the
//! self-normalized inverse propensity estimator with a logistic exposure
//! model, and [`Estimator`] adapters for these, for the factor model and for
//! the regression discontinuity analysis.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::effects::{EffectEstimate, Estimator, ItemEffects, Scope};
use crate::error::{Error, Result};
use crate::math::{bce_with_logit, sigmoid};
use crate::model::{init_factors, train, FactorSet, ModelConfig};
use crate::optim::Adagrad;
use crate::rdd::{population_ate_rdd, RddConfig, UserVectors};

/// FNV-1a over a configuration's debug text.
pub fn fingerprint_of<T: core::fmt::Debug>(value: &T) -> u64 {
    let text = format!("{value:?}");
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn check_binary(ds: &Dataset) -> Result<()> {
    if ds.n_treatments() != 2 {
        return Err(Error::TreatmentArms(ds.n_treatments()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
struct Arms {
    t: usize,
    t_pos: usize,
    c: usize,
    c_pos: usize,
}

impl Arms {
    fn add(&mut self, treatment: u8, outcome: u8) {
        if treatment == 1 {
            self.t += 1;
            self.t_pos += usize::from(outcome);
        } else {
            self.c += 1;
            self.c_pos += usize::from(outcome);
        }
    }

    fn estimate(&self, scope: Scope) -> EffectEstimate {
        if self.t == 0 || self.c == 0 {
            return EffectEstimate::skipped(scope, self.t, self.c);
        }
        let v = self.t_pos as f64 / self.t as f64 - self.c_pos as f64 / self.c as f64;
        EffectEstimate::ok(v, scope, self.t, self.c)
    }
}

/// `mean(y | t=1) - mean(y | t=0)` over the whole log.
pub fn statistic_ate(ds: &Dataset) -> Result<EffectEstimate> {
    check_binary(ds)?;
    let mut arms = Arms::default();
    ds.records().iter().for_each(|r| arms.add(r.treatment, r.outcome));
    if arms.t == 0 {
        return Err(Error::EmptyGroup("treated"));
    }
    if arms.c == 0 {
        return Err(Error::EmptyGroup("control"));
    }
    Ok(arms.estimate(Scope::Population))
}

/// The naive difference per item; items missing an arm are skipped.
pub fn statistic_item_ates(ds: &Dataset) -> Result<Vec<(u32, EffectEstimate)>> {
    check_binary(ds)?;
    let mut arms = alloc::vec![Arms::default(); ds.n_items()];
    ds.records().iter().for_each(|r| arms[r.item as usize].add(r.treatment, r.outcome));
    Ok(arms.iter().enumerate().map(|(i, a)| (i as u32, a.estimate(Scope::Item))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityConfig {
    pub learning_rate: f64,
    /// Full-batch Adagrad iterations.
    pub iterations: usize,
    pub l2_coeff: f64,
    /// Propensities are clipped to `[p_min, 1 - p_min]`.
    pub p_min: f64,
    /// Add user × item feature products to the inputs.
    pub interactions: bool,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 300,
            l2_coeff: 1e-4,
            p_min: 0.01,
            interactions: true,
        }
    }
}

impl PropensityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min > 0.0 && self.p_min < 0.5) {
            return Err(Error::InvalidConfig("p_min must lie in (0, 0.5)".into()));
        }
        if !(self.learning_rate > 0.0) || self.iterations == 0 || !(self.l2_coeff >= 0.0) {
            return Err(Error::InvalidConfig("invalid propensity optimizer settings".into()));
        }
        Ok(())
    }
}

/// Logistic model of exposure given pre-treatment features,
/// `P(T=1 | x_u, x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// Inputs: user features, item features, optional products, intercept last.
    pub weights: Vec<f64>,
    pub user_features: usize,
    pub item_features: usize,
    pub interactions: bool,
    pub p_min: f64,
    /// Mean log-loss on the training log after fitting.
    pub log_loss: f64,
    /// Ten equal-width bins of predicted propensity:
    /// `(records, mean predicted, observed treated fraction)`.
    pub calibration: Vec<(usize, f64, f64)>,
}

impl PropensityModel {
    /// A model predicting `p` everywhere.
    pub fn constant(p: f64) -> Self {
        let logit = libm::log(p / (1.0 - p));
        Self {
            weights: alloc::vec![logit],
            user_features: 0,
            item_features: 0,
            interactions: false,
            p_min: 0.0,
            log_loss: f64::NAN,
            calibration: Vec::new(),
        }
    }

    fn width(fu: usize, fi: usize, interactions: bool) -> usize {
        fu + fi + if interactions { fu * fi } else { 0 } + 1
    }

    fn inputs(&self, xu: &[f64], xi: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&xu[..self.user_features]);
        out.extend_from_slice(&xi[..self.item_features]);
        if self.interactions {
            for a in &xu[..self.user_features] {
                out.extend(xi[..self.item_features].iter().map(|b| a * b));
            }
        }
        out.push(1.0);
    }

    /// Unclipped probability.
    pub fn raw(&self, ds: &Dataset, user: u32, item: u32) -> f64 {
        let mut x = Vec::with_capacity(self.weights.len());
        self.inputs(ds.user_features(user), ds.item_features(item), &mut x);
        sigmoid(crate::math::dot(&self.weights, &x))
    }

    /// Clipped propensity `ê(u, i)`.
    pub fn predict(&self, ds: &Dataset, user: u32, item: u32) -> f64 {
        self.raw(ds, user, item).clamp(self.p_min, 1.0 - self.p_min)
    }
}

/// Fits the exposure model by full-batch Adagrad on records aggregated per
/// `(user, item)` pair.
pub fn fit_propensity(ds: &Dataset, config: &PropensityConfig) -> Result<PropensityModel> {
    config.validate()?;
    check_binary(ds)?;
    let schema = ds.schema();
    let mut pairs: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
    for r in ds.records() {
        let e = pairs.entry((r.user, r.item)).or_default();
        e.0 += 1.0;
        e.1 += f64::from(r.treatment);
    }
    let treated: f64 = pairs.values().map(|p| p.1).sum();
    if treated == 0.0 {
        return Err(Error::EmptyGroup("treated"));
    }
    if treated == ds.len() as f64 {
        return Err(Error::EmptyGroup("control"));
    }
    let mut pm = PropensityModel {
        weights: alloc::vec![0.0; PropensityModel::width(schema.user_features, schema.item_features, config.interactions)],
        user_features: schema.user_features,
        item_features: schema.item_features,
        interactions: config.interactions,
        p_min: config.p_min,
        log_loss: f64::NAN,
        calibration: Vec::new(),
    };
    let dim = pm.weights.len();
    let mut design = Vec::with_capacity(pairs.len() * dim);
    let mut x = Vec::with_capacity(dim);
    for &(u, i) in pairs.keys() {
        pm.inputs(ds.user_features(u), ds.item_features(i), &mut x);
        design.extend_from_slice(&x);
    }
    let counts: Vec<(f64, f64)> = pairs.values().copied().collect();
    let n = ds.len() as f64;
    let opt = Adagrad::new(config.learning_rate);
    let mut accum = alloc::vec![0.0; dim];
    let mut grad = alloc::vec![0.0; dim];
    for _ in 0..config.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, (c, a)) in design.chunks_exact(dim).zip(&counts) {
            let p = sigmoid(crate::math::dot(&pm.weights, row));
            let r = (c * p - a) / n;
            grad.iter_mut().zip(row).for_each(|(g, x)| *g += r * x);
        }
        // intercept unpenalised
        for j in 0..dim - 1 {
            grad[j] += config.l2_coeff * pm.weights[j];
        }
        opt.step(&mut pm.weights, &mut accum, &grad);
    }
    if pm.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::DegeneratePropensity("non-finite weights".into()));
    }

    let mut loss = 0.0;
    let mut bins = alloc::vec![(0.0, 0.0, 0.0); 10];
    let (mut all_high, mut all_low) = (true, true);
    for (row, (c, a)) in design.chunks_exact(dim).zip(&counts) {
        let z = crate::math::dot(&pm.weights, row);
        let p = sigmoid(z);
        all_high &= p > 1.0 - config.p_min;
        all_low &= p < config.p_min;
        loss += a * bce_with_logit(z, 1.0) + (c - a) * bce_with_logit(z, 0.0);
        let b = &mut bins[((p * 10.0) as usize).min(9)];
        b.0 += c;
        b.1 += c * p;
        b.2 += a;
    }
    if all_high || all_low {
        return Err(Error::DegeneratePropensity(format!(
            "every prediction lies outside [{0}, 1 - {0}]",
            config.p_min
        )));
    }
    pm.log_loss = loss / n;
    pm.calibration = bins
        .into_iter()
        .map(|(c, p, a)| if c > 0.0 { (c as usize, p / c, a / c) } else { (0, 0.0, 0.0) })
        .collect();
    Ok(pm)
}

#[derive(Debug, Clone, Copy, Default)]
struct Weighted {
    t_w: f64,
    t_wy: f64,
    c_w: f64,
    c_wy: f64,
    t: usize,
    c: usize,
}

impl Weighted {
    fn add(&mut self, treatment: u8, outcome: u8, e: f64) {
        if treatment == 1 {
            self.t_w += 1.0 / e;
            self.t_wy += f64::from(outcome) / e;
            self.t += 1;
        } else {
            let w = 1.0 / (1.0 - e);
            self.c_w += w;
            self.c_wy += f64::from(outcome) * w;
            self.c += 1;
        }
    }

    fn estimate(&self, scope: Scope) -> EffectEstimate {
        if self.t == 0 || self.c == 0 {
            return EffectEstimate::skipped(scope, self.t, self.c);
        }
        EffectEstimate::ok(self.t_wy / self.t_w - self.c_wy / self.c_w, scope, self.t, self.c)
    }
}

/// Self-normalized inverse propensity ATE over the whole log.
pub fn snips_ate(ds: &Dataset, pm: &PropensityModel) -> Result<EffectEstimate> {
    check_binary(ds)?;
    let mut acc = Weighted::default();
    for r in ds.records() {
        acc.add(r.treatment, r.outcome, pm.predict(ds, r.user, r.item));
    }
    if acc.t == 0 {
        return Err(Error::EmptyGroup("treated"));
    }
    if acc.c == 0 {
        return Err(Error::EmptyGroup("control"));
    }
    Ok(acc.estimate(Scope::Population))
}

/// SNIPS per item; items missing an arm are skipped.
pub fn snips_item_ates(ds: &Dataset, pm: &PropensityModel) -> Result<Vec<(u32, EffectEstimate)>> {
    check_binary(ds)?;
    let mut acc = alloc::vec![Weighted::default(); ds.n_items()];
    for r in ds.records() {
        acc[r.item as usize].add(r.treatment, r.outcome, pm.predict(ds, r.user, r.item));
    }
    Ok(acc.iter().enumerate().map(|(i, a)| (i as u32, a.estimate(Scope::Item))).collect())
}

/// Naive treated-minus-control difference.
#[derive(Debug, Clone, Default)]
pub struct StatisticEstimator;

impl Estimator for StatisticEstimator {
    fn name(&self) -> &str {
        "Statistic"
    }

    fn fit(&mut self, _train: &Dataset) -> Result<()> {
        Ok(())
    }

    fn estimate(&self, ds: &Dataset) -> Result<ItemEffects> {
        ItemEffects::from_items(statistic_item_ates(ds)?)
    }

    fn fingerprint(&self) -> u64 {
        fingerprint_of(&"Statistic")
    }
}

/// SNIPS with a propensity model fitted on the training log.
#[derive(Debug, Clone)]
pub struct SnipsEstimator {
    pub config: PropensityConfig,
    pub model: Option<PropensityModel>,
}

impl SnipsEstimator {
    pub fn new(config: PropensityConfig) -> Self {
        Self { config, model: None }
    }
}

impl Estimator for SnipsEstimator {
    fn name(&self) -> &str {
        "SNIPS"
    }

    fn fit(&mut self, train: &Dataset) -> Result<()> {
        self.model = Some(fit_propensity(train, &self.config)?);
        Ok(())
    }

    fn estimate(&self, ds: &Dataset) -> Result<ItemEffects> {
        let pm = self
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("SNIPS estimator used before fit".into()))?;
        ItemEffects::from_items(snips_item_ates(ds, pm)?)
    }

    fn fingerprint(&self) -> u64 {
        fingerprint_of(&self.config)
    }
}

/// Mean model ITE over each item's records, per item.
pub fn model_item_ates(fs: &FactorSet, ds: &Dataset, probability_scale: bool) -> Result<Vec<(u32, EffectEstimate)>> {
    let mut acc = alloc::vec![(0.0, 0usize, 0usize); ds.n_items()];
    let mut cache: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for r in ds.records() {
        let ite = match cache.get(&(r.user, r.item)) {
            Some(v) => *v,
            None => {
                let v = fs.estimate_ite(r.user, r.item, probability_scale)?;
                cache.insert((r.user, r.item), v);
                v
            }
        };
        let a = &mut acc[r.item as usize];
        a.0 += ite;
        if r.treatment == 1 {
            a.1 += 1;
        } else {
            a.2 += 1;
        }
    }
    Ok(acc
        .iter()
        .enumerate()
        .map(|(i, &(s, t, c))| {
            let e = if t + c == 0 {
                EffectEstimate::skipped(Scope::Item, 0, 0)
            } else {
                EffectEstimate::ok(s / (t + c) as f64, Scope::Item, t, c)
            };
            (i as u32, e)
        })
        .collect())
}

/// The factor model trained on the training log.
#[derive(Debug, Clone)]
pub struct CausCfEstimator {
    pub config: ModelConfig,
    pub factors: Option<FactorSet>,
}

impl CausCfEstimator {
    pub fn new(config: ModelConfig) -> Self {
        Self { config, factors: None }
    }

    /// Wraps already-trained factors; `fit` becomes a no-op.
    pub fn pretrained(config: ModelConfig, factors: FactorSet) -> Self {
        Self {
            config,
            factors: Some(factors),
        }
    }
}

impl Estimator for CausCfEstimator {
    fn name(&self) -> &str {
        "CausCF"
    }

    fn fit(&mut self, train_ds: &Dataset) -> Result<()> {
        if self.factors.is_some() {
            return Ok(());
        }
        let mut fs = init_factors(&self.config, train_ds)?;
        train(&mut fs, train_ds, &self.config)?;
        self.factors = Some(fs);
        Ok(())
    }

    fn estimate(&self, ds: &Dataset) -> Result<ItemEffects> {
        let fs = self
            .factors
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("CausCF estimator used before fit".into()))?;
        ItemEffects::from_items(model_item_ates(fs, ds, self.config.use_probability_scale_ite)?)
    }

    fn fingerprint(&self) -> u64 {
        fingerprint_of(&self.config)
    }
}

/// The discontinuity analysis as an estimator. It has nothing to fit; each
/// split is analysed on its own.
#[derive(Debug, Clone)]
pub struct RddEstimator {
    pub config: RddConfig,
    /// Balance-test vectors; the dataset's user features when `None`.
    pub reps: Option<UserVectors>,
    pub label: String,
}

impl RddEstimator {
    pub fn new(config: RddConfig) -> Self {
        Self {
            config,
            reps: None,
            label: String::from("RDD"),
        }
    }
}

impl Estimator for RddEstimator {
    fn name(&self) -> &str {
        &self.label
    }

    fn fit(&mut self, _train: &Dataset) -> Result<()> {
        self.config.validate()
    }

    fn estimate(&self, ds: &Dataset) -> Result<ItemEffects> {
        let features;
        let reps = match &self.reps {
            Some(r) => r,
            None => {
                features = UserVectors::from_features(ds);
                &features
            }
        };
        let pop = population_ate_rdd(ds, None, reps, &self.config)?;
        let pooled = pop.pooled.ok_or(Error::AllSkipped)?;
        Ok(ItemEffects {
            per_item: pop.estimates(),
            pooled,
        })
    }

    fn fingerprint(&self) -> u64 {
        fingerprint_of(&(self.config, self.reps.is_some()))
    }
}
