//! Regression discontinuity analysis of recommendation exposure.
//!
//! In a browsing session the user scrolls down a ranked list and leaves at
//! some position `c`. An item displayed at position `r` counts as treated when
//! `r <= c` and as control when `r > c`. Sessions that end at the same `c`
//! and show the item just above or just below it compare users who are alike
//! except for exposure, so for each cutoff `c`
//!
//! ```text
//! CATE_c = mean(y | c-W < r <= c) - mean(y | c < r <= c+W)
//! ```
//!
//! restricted to sessions leaving at `c`. A cutoff is admitted only when both
//! sides hold at least `min_samples` observations and the users on the two
//! sides pass a standardized-mean-difference balance test (`smd < 0.1`).
//! The item's ATE is the sample-size weighted mean of its admitted CATEs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::effects::{EffectEstimate, Scope};
use crate::error::{Error, Result};
use crate::model::{EncodeInput, FactorSet};

/// Balance threshold below which a cutoff's populations count as homogeneous.
pub const SMD_BALANCED: f64 = 0.1;
/// Threshold above which imbalance is serious.
pub const SMD_IMBALANCED: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RddConfig {
    /// Positions on each side of the cutoff that enter the comparison.
    pub window: u32,
    /// First cutoff considered.
    pub start: u32,
    /// Last cutoff considered (inclusive).
    pub end: u32,
    /// Observations required on each side of an admitted cutoff.
    pub min_samples: usize,
}

impl Default for RddConfig {
    fn default() -> Self {
        Self {
            window: 1,
            start: 1,
            end: 200,
            min_samples: 30,
        }
    }
}

impl RddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("RDD window must be at least 1".into()));
        }
        if self.start > self.end {
            return Err(Error::InvalidConfig(format!(
                "RDD position range [{}, {}] is empty",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Running count and sum of binary outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub count: usize,
    pub sum: usize,
}

impl Tally {
    fn add(&mut self, y: u8) {
        self.count += 1;
        self.sum += usize::from(y);
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }
}

/// Observations of one item around one cutoff.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CutoffRow {
    pub position: u32,
    pub treated: Tally,
    pub control: Tally,
    /// User of every treated observation, in log order.
    pub treated_users: Vec<u32>,
    pub control_users: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutoffTable {
    pub item: u32,
    pub window: u32,
    /// Dense rows for cutoffs `first_position..=last_position` of the log.
    pub rows: Vec<CutoffRow>,
}

impl CutoffTable {
    pub fn row(&self, position: u32) -> Option<&CutoffRow> {
        let first = self.rows.first()?.position;
        position
            .checked_sub(first)
            .and_then(|ix| self.rows.get(ix as usize))
    }
}

/// Range of leave positions present in the log, or `MissingPositions`.
fn leave_range(ds: &Dataset) -> Result<(u32, u32)> {
    let mut range: Option<(u32, u32)> = None;
    for r in ds.records() {
        if let (Some(_), Some(c)) = (r.position, r.leave_position) {
            range = Some(match range {
                None => (c, c),
                Some((lo, hi)) => (lo.min(c), hi.max(c)),
            });
        }
    }
    range.ok_or(Error::MissingPositions)
}

/// Cutoff tables for every item in one pass over the log. Records without a
/// position or leave position are ignored.
pub fn build_cutoff_tables(ds: &Dataset, window: u32) -> Result<Vec<CutoffTable>> {
    if window == 0 {
        return Err(Error::InvalidConfig("RDD window must be at least 1".into()));
    }
    let (lo, hi) = leave_range(ds)?;
    let empty_rows = |_| (lo..=hi).map(|position| CutoffRow { position, ..CutoffRow::default() }).collect();
    let mut tables: Vec<CutoffTable> = (0..ds.n_items() as u32)
        .map(|item| CutoffTable {
            item,
            window,
            rows: empty_rows(item),
        })
        .collect();
    for r in ds.records() {
        let (Some(pos), Some(c)) = (r.position, r.leave_position) else {
            continue;
        };
        let row = &mut tables[r.item as usize].rows[(c - lo) as usize];
        // treated window (c-W, c], control window (c, c+W]
        if pos <= c && c - pos < window {
            row.treated.add(r.outcome);
            row.treated_users.push(r.user);
        } else if pos > c && pos - c <= window {
            row.control.add(r.outcome);
            row.control_users.push(r.user);
        }
    }
    Ok(tables)
}

/// Cutoff table of a single item.
pub fn build_cutoff_table(ds: &Dataset, item: u32, window: u32) -> Result<CutoffTable> {
    if item as usize >= ds.n_items() {
        return Err(Error::IndexOutOfRange {
            kind: "item",
            index: item as usize,
            len: ds.n_items(),
        });
    }
    let only = ds.filter(|r| r.item == item);
    if only.is_empty() {
        // item never logged: all-zero rows over the log's leave range
        let (lo, hi) = leave_range(ds)?;
        return Ok(CutoffTable {
            item,
            window,
            rows: (lo..=hi).map(|position| CutoffRow { position, ..CutoffRow::default() }).collect(),
        });
    }
    let (lo, hi) = leave_range(ds)?;
    let mut table = build_cutoff_tables(&only, window)?.swap_remove(item as usize);
    // widen to the full log's range so every item shares the same rows
    let (tlo, thi) = (table.rows[0].position, table.rows[table.rows.len() - 1].position);
    let mut rows: Vec<CutoffRow> = (lo..tlo).map(|position| CutoffRow { position, ..CutoffRow::default() }).collect();
    rows.append(&mut table.rows);
    rows.extend((thi + 1..=hi).map(|position| CutoffRow { position, ..CutoffRow::default() }));
    table.rows = rows;
    Ok(table)
}

/// Standardized mean differences between two groups of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SmdResult {
    /// Mean of `per_dim`.
    pub smd: f64,
    /// `|μ₁ - μ₀| / sqrt((σ₁² + σ₀²) / 2)` per dimension, population variances.
    /// `0` where both variances vanish and the means agree, `+∞` where they
    /// vanish and the means differ.
    pub per_dim: Vec<f64>,
}

/// Balance test between `treated` and `control`, each a row-major matrix of
/// `dim`-length vectors.
pub fn smd_test(treated: &[f64], control: &[f64], dim: usize) -> Result<SmdResult> {
    if dim == 0 {
        return Err(Error::InvalidConfig("representation dimension is zero".into()));
    }
    if treated.len() % dim != 0 {
        return Err(Error::FeatureLength {
            expected: dim,
            found: treated.len() % dim,
        });
    }
    if control.len() % dim != 0 {
        return Err(Error::FeatureLength {
            expected: dim,
            found: control.len() % dim,
        });
    }
    let (nt, nc) = (treated.len() / dim, control.len() / dim);
    if nt < 2 || nc < 2 {
        return Err(Error::InsufficientSamples {
            treated: nt,
            control: nc,
            required: 2,
        });
    }
    let moments = |rows: &[f64], n: usize| -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for j in 0..dim {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        (mean, var)
    };
    let (mt, vt) = moments(treated, nt);
    let (mc, vc) = moments(control, nc);
    let per_dim: Vec<f64> = (0..dim)
        .map(|j| {
            let diff = libm::fabs(mt[j] - mc[j]);
            let pooled = libm::sqrt(0.5 * (vt[j] + vc[j]));
            if pooled > 0.0 {
                diff / pooled
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let smd = per_dim.iter().sum::<f64>() / dim as f64;
    Ok(SmdResult { smd, per_dim })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `smd < 0.1`.
    Balanced,
    /// `0.1 <= smd <= 0.2`.
    Caution,
    /// `smd > 0.2` (including `+∞`).
    Imbalanced,
}

impl Verdict {
    pub fn of(smd: f64) -> Self {
        if smd < SMD_BALANCED {
            Verdict::Balanced
        } else if smd <= SMD_IMBALANCED {
            Verdict::Caution
        } else {
            Verdict::Imbalanced
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Balanced => "balanced",
            Verdict::Caution => "caution",
            Verdict::Imbalanced => "imbalanced",
        }
    }
}

/// Vectors that describe users for the balance test.
#[derive(Debug, Clone, PartialEq)]
pub struct UserVectors {
    dim: usize,
    table: Vec<f64>,
}

impl UserVectors {
    /// The users' pre-treatment features. The balance statistic is invariant
    /// to per-dimension affine rescaling, so standardizing first changes
    /// nothing.
    pub fn from_features(ds: &Dataset) -> Self {
        Self {
            dim: ds.schema().user_features,
            table: ds.user_feature_table().to_vec(),
        }
    }

    /// The model's user factors `p_u`.
    pub fn from_factors(fs: &FactorSet) -> Result<Self> {
        let mut table = Vec::with_capacity(fs.n_users() * fs.k);
        for u in 0..fs.n_users() as u32 {
            table.extend(fs.encode_user(EncodeInput::Index(u))?);
        }
        Ok(Self { dim: fs.k, table })
    }

    pub fn from_table(dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 || table.len() % dim != 0 {
            return Err(Error::FeatureLength {
                expected: dim,
                found: table.len(),
            });
        }
        Ok(Self { dim, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, user: u32) -> &[f64] {
        &self.table[user as usize * self.dim..(user as usize + 1) * self.dim]
    }

    fn gather(&self, users: &[u32]) -> Vec<f64> {
        let mut out = Vec::with_capacity(users.len() * self.dim);
        for &u in users {
            out.extend_from_slice(self.get(u));
        }
        out
    }
}

/// Balance of one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityRow {
    pub position: u32,
    pub smd: f64,
    pub per_dim: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub verdict: Verdict,
}

/// Balance of every cutoff of one item with at least two observations per
/// side.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityReport {
    pub item: u32,
    pub rows: Vec<HomogeneityRow>,
}

/// Difference in mean outcome between the treated and control windows.
/// Skipped when either side has fewer than `min_samples` observations.
pub fn cate_at_cutoff(table: &CutoffTable, position: u32, min_samples: usize) -> EffectEstimate {
    let Some(row) = table.row(position) else {
        return EffectEstimate::skipped(Scope::Cutoff, 0, 0);
    };
    cate_of_row(row, min_samples)
}

fn cate_of_row(row: &CutoffRow, min_samples: usize) -> EffectEstimate {
    let (t, c) = (row.treated, row.control);
    match (t.mean(), c.mean()) {
        (Some(mt), Some(mc)) if t.count >= min_samples && c.count >= min_samples => {
            EffectEstimate::ok(mt - mc, Scope::Cutoff, t.count, c.count)
        }
        _ => EffectEstimate::skipped(Scope::Cutoff, t.count, c.count),
    }
}

/// How one cutoff entered an item's ATE.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffOutcome {
    pub position: u32,
    pub cate: EffectEstimate,
    /// `None` when a side has fewer than two observations.
    pub smd: Option<SmdResult>,
    /// Local sample size when admitted, else 0.
    pub weight: f64,
    pub admitted: bool,
}

/// An item's RDD analysis: its weighted ATE and the per-cutoff trail.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRdd {
    pub item: u32,
    /// Item scope; counts are the admitted cutoffs' sample totals.
    pub estimate: EffectEstimate,
    pub cutoffs: Vec<CutoffOutcome>,
    pub homogeneity: HomogeneityReport,
}

/// Balance test at every cutoff of the table with at least two
/// observations on each side, whatever the configured position range.
pub fn homogeneity_report(table: &CutoffTable, reps: &UserVectors) -> Result<HomogeneityReport> {
    let mut rows = Vec::new();
    for row in &table.rows {
        if row.treated.count < 2 || row.control.count < 2 {
            continue;
        }
        let r = smd_test(
            &reps.gather(&row.treated_users),
            &reps.gather(&row.control_users),
            reps.dim(),
        )?;
        rows.push(HomogeneityRow {
            position: row.position,
            smd: r.smd,
            per_dim: r.per_dim,
            n_treated: row.treated.count,
            n_control: row.control.count,
            verdict: Verdict::of(r.smd),
        });
    }
    Ok(HomogeneityReport { item: table.item, rows })
}

/// Per-cutoff trail of an item; the estimate is skipped when no cutoff is
/// admitted.
fn trail(table: &CutoffTable, reps: &UserVectors, config: &RddConfig) -> Result<ItemRdd> {
    config.validate()?;
    let min_samples = config.min_samples.max(2);
    let homogeneity = homogeneity_report(table, reps)?;
    let mut balance = homogeneity.rows.iter().peekable();
    let mut cutoffs = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    let (mut n_treated, mut n_control) = (0usize, 0usize);
    for row in &table.rows {
        // report rows are a position-ordered subset of the table rows
        let smd = balance.next_if(|h| h.position == row.position).map(|h| SmdResult {
            smd: h.smd,
            per_dim: h.per_dim.clone(),
        });
        if !(config.start..=config.end).contains(&row.position) {
            continue;
        }
        let cate = cate_of_row(row, min_samples);
        let balanced = smd
            .as_ref()
            .is_some_and(|s| s.smd < SMD_BALANCED && s.per_dim.iter().all(|d| d.is_finite()));
        let admitted = cate.is_ok() && balanced;
        let weight = if admitted { cate.count() as f64 } else { 0.0 };
        if admitted {
            num += weight * cate.value;
            den += weight;
            n_treated += cate.n_treated;
            n_control += cate.n_control;
        }
        cutoffs.push(CutoffOutcome {
            position: row.position,
            cate,
            smd,
            weight,
            admitted,
        });
    }
    let estimate = if den == 0.0 {
        EffectEstimate::skipped(Scope::Item, 0, 0)
    } else {
        EffectEstimate::ok(num / den, Scope::Item, n_treated, n_control)
    };
    Ok(ItemRdd {
        item: table.item,
        estimate,
        cutoffs,
        homogeneity,
    })
}

/// Runs the gated, weighted cutoff aggregation on a prepared table.
pub fn analyse_table(table: &CutoffTable, reps: &UserVectors, config: &RddConfig) -> Result<ItemRdd> {
    let r = trail(table, reps, config)?;
    if !r.estimate.is_ok() {
        return Err(Error::NoAdmissibleCutoffs { item: table.item as usize });
    }
    Ok(r)
}

/// RDD ATE of one item.
pub fn item_ate_rdd(ds: &Dataset, item: u32, reps: &UserVectors, config: &RddConfig) -> Result<ItemRdd> {
    config.validate()?;
    let table = build_cutoff_table(ds, item, config.window)?;
    analyse_table(&table, reps, config)
}

/// Outcome of one item in a population sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemOutcome {
    Estimated(ItemRdd),
    /// `analysis` holds the cutoff trail when the item's table could be
    /// built, so balance diagnostics survive the skip.
    Skipped {
        item: u32,
        reason: String,
        analysis: Option<ItemRdd>,
    },
}

impl ItemOutcome {
    pub fn item(&self) -> u32 {
        match self {
            ItemOutcome::Estimated(r) => r.item,
            ItemOutcome::Skipped { item, .. } => *item,
        }
    }

    pub fn estimate(&self) -> EffectEstimate {
        match self {
            ItemOutcome::Estimated(r) => r.estimate,
            ItemOutcome::Skipped { .. } => EffectEstimate::skipped(Scope::Item, 0, 0),
        }
    }

    /// The cutoff trail, present unless the table could not be built.
    pub fn analysis(&self) -> Option<&ItemRdd> {
        match self {
            ItemOutcome::Estimated(r) => Some(r),
            ItemOutcome::Skipped { analysis, .. } => analysis.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRdd {
    pub items: Vec<ItemOutcome>,
    /// Sample-size weighted mean of the estimated items; `None` when every
    /// item was skipped.
    pub pooled: Option<EffectEstimate>,
    pub warnings: Vec<String>,
}

impl PopulationRdd {
    pub fn estimates(&self) -> Vec<(u32, EffectEstimate)> {
        self.items.iter().map(|o| (o.item(), o.estimate())).collect()
    }
}

/// Runs the item analysis over `items` (all items when `None`). Item-level
/// failures become skips; the sweep never aborts on them.
pub fn population_ate_rdd(
    ds: &Dataset,
    items: Option<&[u32]>,
    reps: &UserVectors,
    config: &RddConfig,
) -> Result<PopulationRdd> {
    config.validate()?;
    let tables = build_cutoff_tables(ds, config.window)?;
    let selected: Vec<u32> = match items {
        Some(list) => list.to_vec(),
        None => (0..ds.n_items() as u32).collect(),
    };
    let mut outcomes = Vec::with_capacity(selected.len());
    let mut warnings = Vec::new();
    for item in selected {
        let outcome = match tables.get(item as usize) {
            None => ItemOutcome::Skipped {
                item,
                reason: format!("item index {item} out of range"),
                analysis: None,
            },
            Some(table) => match trail(table, reps, config) {
                Ok(r) if r.estimate.is_ok() => ItemOutcome::Estimated(r),
                Ok(r) => ItemOutcome::Skipped {
                    item,
                    reason: String::from("no admissible cutoffs"),
                    analysis: Some(r),
                },
                Err(e) => ItemOutcome::Skipped {
                    item,
                    reason: format!("{e}"),
                    analysis: None,
                },
            },
        };
        outcomes.push(outcome);
    }
    let estimates: Vec<EffectEstimate> = outcomes.iter().map(ItemOutcome::estimate).collect();
    let pooled = match crate::effects::aggregate(&estimates, crate::effects::Weighting::Counts) {
        Ok(p) => Some(p),
        Err(_) => {
            warnings.push(String::from("every item was skipped; no pooled RDD estimate"));
            None
        }
    };
    Ok(PopulationRdd {
        items: outcomes,
        pooled,
        warnings,
    })
}
