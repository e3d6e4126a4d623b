//! Evaluation metrics: ATE error against a reference, uplift of a ranking
//! (plain and propensity-weighted), precision of a ranking, and subgroup
//! effect tables.
//!
//! Ranking metrics compare, per user, the logged outcomes of ranked items
//! that were recommended to the user (`M ∩ D`) against those of ranked items
//! that were not (`M \ D`). Users for whom either set has no logged outcome
//! are excluded and counted.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::baselines::PropensityModel;
use crate::data::Dataset;
use crate::effects::{EffectEstimate, Scope};
use crate::error::{Error, Result};

/// How item estimates are pooled before their difference is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EpsilonPooling {
    /// Both sides use the reference's per-item sample counts, so both
    /// average over the same item mixture.
    #[default]
    ReferenceCounts,
    /// Each side uses its own per-item sample counts.
    OwnCounts,
}

/// Absolute error between pooled model and reference ATEs over the items
/// both sides estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonReport {
    pub epsilon: f64,
    /// Pooled model estimate on the common items.
    pub model_pooled: f64,
    pub reference_pooled: f64,
    /// `(item, |model - reference|)` on the common items, ascending by item.
    pub per_item: Vec<(u32, f64)>,
    pub items_used: usize,
}

fn pooled(values: &BTreeMap<u32, EffectEstimate>, weights: &BTreeMap<u32, EffectEstimate>, keep: &[u32]) -> f64 {
    let pairs = keep.iter().map(|i| (weights[i].count() as f64, values[i].value));
    crate::math::weighted_mean(pairs)
        .unwrap_or_else(|| keep.iter().map(|i| values[i].value).sum::<f64>() / keep.len() as f64)
}

/// [`epsilon_ate_with`] under the default pooling.
pub fn epsilon_ate(model: &[(u32, EffectEstimate)], reference: &[(u32, EffectEstimate)]) -> Result<EpsilonReport> {
    epsilon_ate_with(model, reference, EpsilonPooling::default())
}

/// Pools both sides over the items where both estimates are `Ok` and
/// returns the absolute difference.
pub fn epsilon_ate_with(
    model: &[(u32, EffectEstimate)],
    reference: &[(u32, EffectEstimate)],
    pooling: EpsilonPooling,
) -> Result<EpsilonReport> {
    let ok = |list: &[(u32, EffectEstimate)]| -> BTreeMap<u32, EffectEstimate> {
        list.iter().filter(|(_, e)| e.is_ok()).map(|(i, e)| (*i, *e)).collect()
    };
    let (m, r) = (ok(model), ok(reference));
    let common: Vec<u32> = m.keys().copied().filter(|i| r.contains_key(i)).collect();
    if common.is_empty() {
        return Err(Error::DisjointItems);
    }
    let model_weights = match pooling {
        EpsilonPooling::ReferenceCounts => &r,
        EpsilonPooling::OwnCounts => &m,
    };
    let model_pooled = pooled(&m, model_weights, &common);
    let reference_pooled = pooled(&r, &r, &common);
    Ok(EpsilonReport {
        epsilon: libm::fabs(reference_pooled - model_pooled),
        model_pooled,
        reference_pooled,
        per_item: common.iter().map(|i| (*i, libm::fabs(m[i].value - r[i].value))).collect(),
        items_used: common.len(),
    })
}

/// One user's ranking, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: u32,
    pub items: Vec<(u32, f64)>,
}

impl RankedList {
    /// Sorts by descending score (ties by ascending item) and keeps `n`.
    pub fn new(user: u32, mut scored: Vec<(u32, f64)>, n: usize) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.dedup_by_key(|(i, _)| *i);
        scored.truncate(n);
        Self { user, items: scored }
    }

    pub fn top(&self, n: usize) -> impl Iterator<Item = u32> + '_ {
        self.items.iter().take(n).map(|(i, _)| *i)
    }
}

/// Logged outcome counts of one (user, item) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairLog {
    pub treated: u32,
    pub treated_pos: u32,
    pub control: u32,
    pub control_pos: u32,
}

impl PairLog {
    /// The item was recommended to the user at least once.
    pub fn recommended(&self) -> bool {
        self.treated > 0
    }
}

/// Per-user logged outcomes, the `D` side of the ranking metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LogIndex {
    users: Vec<BTreeMap<u32, PairLog>>,
}

impl LogIndex {
    pub fn new(ds: &Dataset) -> Self {
        let mut users = alloc::vec![BTreeMap::new(); ds.n_users()];
        for r in ds.records() {
            let e: &mut PairLog = users[r.user as usize].entry(r.item).or_default();
            if r.treatment == 1 {
                e.treated += 1;
                e.treated_pos += u32::from(r.outcome);
            } else {
                e.control += 1;
                e.control_pos += u32::from(r.outcome);
            }
        }
        Self { users }
    }

    pub fn user(&self, user: u32) -> Option<&BTreeMap<u32, PairLog>> {
        self.users.get(user as usize)
    }

    /// Items with any logged record for `user`, ascending.
    pub fn candidates(&self, user: u32) -> Vec<u32> {
        self.user(user).map(|m| m.keys().copied().collect()).unwrap_or_default()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }
}

/// Ranks each user's logged items by `score(user, item)` and keeps the top
/// `n`. Users with no logged items get no list.
pub fn rank_logged_items(log: &LogIndex, n: usize, mut score: impl FnMut(u32, u32) -> f64) -> Vec<RankedList> {
    (0..log.n_users() as u32)
        .filter_map(|u| {
            let cands = log.candidates(u);
            (!cands.is_empty()).then(|| RankedList::new(u, cands.into_iter().map(|i| (i, score(u, i))).collect(), n))
        })
        .collect()
}

/// A ranking metric averaged over users, with exclusion counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingMetric {
    pub value: f64,
    pub users_used: usize,
    /// Users whose top `N` held no recommended item with a logged outcome.
    pub excluded_no_overlap: usize,
    /// Users whose top `N` held no unrecommended item with a logged outcome.
    pub excluded_no_difference: usize,
}

fn uplift_core(
    lists: &[RankedList],
    log: &LogIndex,
    n: usize,
    // weight of a treated / control record of (u, i)
    weights: impl Fn(u32, u32) -> (f64, f64),
) -> Result<RankingMetric> {
    let (mut sum, mut used, mut no_overlap, mut no_diff) = (0.0, 0usize, 0usize, 0usize);
    for list in lists {
        let Some(pairs) = log.user(list.user) else {
            no_overlap += 1;
            continue;
        };
        let (mut tw, mut ty, mut cw, mut cy) = (0.0, 0.0, 0.0, 0.0);
        for item in list.top(n) {
            let Some(p) = pairs.get(&item) else { continue };
            let (wt, wc) = weights(list.user, item);
            if p.recommended() {
                tw += wt * f64::from(p.treated);
                ty += wt * f64::from(p.treated_pos);
            } else if p.control > 0 {
                cw += wc * f64::from(p.control);
                cy += wc * f64::from(p.control_pos);
            }
        }
        if tw == 0.0 {
            no_overlap += 1;
        } else if cw == 0.0 {
            no_diff += 1;
        } else {
            sum += ty / tw - cy / cw;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::MetricUndefined(format!(
            "no user has both recommended and unrecommended items in the top {n} \
             ({no_overlap} without overlap, {no_diff} without difference)"
        )));
    }
    Ok(RankingMetric {
        value: sum / used as f64,
        users_used: used,
        excluded_no_overlap: no_overlap,
        excluded_no_difference: no_diff,
    })
}

/// Mean over users of the purchase rate of recommended top-`n` items minus
/// that of unrecommended top-`n` items. Rates pool the user's logged
/// records: treated records for recommended items, control records for the
/// rest.
pub fn uplift_at_n(lists: &[RankedList], log: &LogIndex, n: usize) -> Result<RankingMetric> {
    uplift_core(lists, log, n, |_, _| (1.0, 1.0))
}

/// As [`uplift_at_n`] with treated records weighted by `1/ê(u,i)` and control
/// records by `1/(1-ê(u,i))`, each arm self-normalized.
pub fn uplift_snips_at_n(
    lists: &[RankedList],
    log: &LogIndex,
    ds: &Dataset,
    pm: &PropensityModel,
    n: usize,
) -> Result<RankingMetric> {
    uplift_core(lists, log, n, |u, i| {
        let e = pm.predict(ds, u, i);
        (1.0 / e, 1.0 / (1.0 - e))
    })
}

/// Mean over users of the fraction of recommended top-`n` items the user
/// purchased at least once while recommended.
pub fn precision_at_n(lists: &[RankedList], log: &LogIndex, n: usize) -> Result<RankingMetric> {
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for list in lists {
        let pairs = log.user(list.user);
        let (mut hits, mut shown) = (0usize, 0usize);
        for item in list.top(n) {
            if let Some(p) = pairs.and_then(|m| m.get(&item)).filter(|p| p.recommended()) {
                shown += 1;
                hits += usize::from(p.treated_pos > 0);
            }
        }
        if shown == 0 {
            excluded += 1;
        } else {
            sum += hits as f64 / shown as f64;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::MetricUndefined(format!("no ranked item was recommended (top {n})")));
    }
    Ok(RankingMetric {
        value: sum / used as f64,
        users_used: used,
        excluded_no_overlap: excluded,
        excluded_no_difference: 0,
    })
}

/// Assignment of users to named groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub labels: Vec<String>,
    /// Group index per user.
    pub of_user: Vec<usize>,
}

impl Grouping {
    /// Resolves an attribute key against the dataset:
    /// `all` puts everyone in one group, `user_feature:<j>` splits on the
    /// sign of user feature `j` (`neg` for `< 0`, `pos` otherwise).
    pub fn from_key(ds: &Dataset, key: &str) -> Result<Self> {
        if key == "all" {
            return Ok(Self {
                labels: alloc::vec![String::from("all")],
                of_user: alloc::vec![0; ds.n_users()],
            });
        }
        let j = key
            .strip_prefix("user_feature:")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|j| *j < ds.schema().user_features)
            .ok_or_else(|| Error::UnknownAttribute(String::from(key)))?;
        Ok(Self {
            labels: alloc::vec![String::from("neg"), String::from("pos")],
            of_user: (0..ds.n_users() as u32)
                .map(|u| usize::from(ds.user_features(u)[j] >= 0.0))
                .collect(),
        })
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }
}

/// Subgroup effects. Estimates here are means of pair ITEs; `n_treated`
/// holds the number of pairs averaged and `n_control` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupTable {
    pub labels: Vec<String>,
    pub groups: Vec<EffectEstimate>,
    /// `(item, group, estimate)`, ascending by item then group.
    pub per_item: Vec<(u32, usize, EffectEstimate)>,
    /// With exactly two groups: `(item, mean ITE in group 1 - group 0)` for
    /// items seen in both, largest difference first.
    pub advantage: Vec<(u32, f64)>,
}

/// Averages pair ITEs `(user, item, ite)` within each group, overall and per
/// item.
pub fn subgroup_cate(ites: &[(u32, u32, f64)], grouping: &Grouping) -> Result<SubgroupTable> {
    let g = grouping.n_groups();
    let mut groups = alloc::vec![(0.0, 0usize); g];
    let mut items: BTreeMap<u32, Vec<(f64, usize)>> = BTreeMap::new();
    for &(u, i, v) in ites {
        let k = *grouping.of_user.get(u as usize).ok_or(Error::IndexOutOfRange {
            kind: "user",
            index: u as usize,
            len: grouping.of_user.len(),
        })?;
        groups[k].0 += v;
        groups[k].1 += 1;
        let cell = &mut items.entry(i).or_insert_with(|| alloc::vec![(0.0, 0); g])[k];
        cell.0 += v;
        cell.1 += 1;
    }
    let est = |(s, n): (f64, usize)| {
        if n == 0 {
            EffectEstimate::skipped(Scope::Subgroup, 0, 0)
        } else {
            EffectEstimate::ok(s / n as f64, Scope::Subgroup, n, 0)
        }
    };
    let per_item: Vec<(u32, usize, EffectEstimate)> = items
        .iter()
        .flat_map(|(i, cells)| cells.iter().enumerate().map(move |(k, c)| (*i, k, est(*c))))
        .collect();
    let mut advantage = Vec::new();
    if g == 2 {
        for (i, cells) in &items {
            if cells[0].1 > 0 && cells[1].1 > 0 {
                advantage.push((*i, cells[1].0 / cells[1].1 as f64 - cells[0].0 / cells[0].1 as f64));
            }
        }
        advantage.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    Ok(SubgroupTable {
        labels: grouping.labels.clone(),
        groups: groups.into_iter().map(est).collect(),
        per_item,
        advantage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IdIndex, InteractionRecord, Schema};
    use alloc::vec;

    fn item(i: u32, v: f64, n: usize) -> (u32, EffectEstimate) {
        (i, EffectEstimate::ok(v, Scope::Item, n, n))
    }

    #[test]
    fn epsilon_table_values() {
        let rdd = [item(0, 0.000741, 10)];
        let e = epsilon_ate(&[item(0, 0.001515, 5)], &rdd).unwrap();
        assert!((e.epsilon - 0.000774).abs() < 1e-12);
        let e = epsilon_ate(&[item(0, 0.002906, 5)], &rdd).unwrap();
        assert!((e.epsilon - 0.002165).abs() < 1e-12);
        let e = epsilon_ate(&rdd, &rdd).unwrap();
        assert_eq!(e.epsilon, 0.0);
    }

    #[test]
    fn epsilon_uses_common_ok_items() {
        let model = [item(0, 0.1, 1), item(1, 0.5, 1), (2, EffectEstimate::skipped(Scope::Item, 0, 0))];
        let reference = [item(1, 0.2, 1), item(2, 0.9, 1)];
        let e = epsilon_ate(&model, &reference).unwrap();
        assert_eq!(e.items_used, 1);
        assert!((e.epsilon - 0.3).abs() < 1e-15);
        assert_eq!(epsilon_ate(&[item(0, 0.1, 1)], &[item(1, 0.1, 1)]), Err(Error::DisjointItems));
    }

    #[test]
    fn epsilon_pooling_weights() {
        let model = [item(0, 0.1, 30), item(1, 0.3, 10)];
        let reference = [item(0, 0.2, 10), item(1, 0.2, 10)];
        let r = epsilon_ate_with(&model, &reference, EpsilonPooling::ReferenceCounts).unwrap();
        assert!((r.model_pooled - 0.2).abs() < 1e-15 && r.epsilon < 1e-15);
        let o = epsilon_ate_with(&model, &reference, EpsilonPooling::OwnCounts).unwrap();
        assert!((o.model_pooled - 0.15).abs() < 1e-15);
        assert!((o.epsilon - 0.05).abs() < 1e-15);
    }

    fn rec(user: u32, item: u32, t: u8, y: u8) -> InteractionRecord {
        InteractionRecord {
            user,
            item,
            treatment: t,
            outcome: y,
            position: None,
            leave_position: None,
            session: None,
            timestamp: None,
        }
    }

    fn dataset(records: Vec<InteractionRecord>, users: usize, items: usize) -> Dataset {
        Dataset::from_parts(
            Schema::binary(1, 0),
            IdIndex::from_ids((0..users).map(|u| format!("u{u}"))),
            IdIndex::from_ids((0..items).map(|i| format!("i{i}"))),
            (0..users).map(|u| u as f64 - 0.5).collect(),
            vec![],
            records,
        )
        .unwrap()
    }

    #[test]
    fn uplift_hand_value() {
        // recommended items 0 and 1 (outcomes 1, 0), unrecommended 2 and 3
        let ds = dataset(vec![rec(0, 0, 1, 1), rec(0, 1, 1, 0), rec(0, 2, 0, 0), rec(0, 3, 0, 0)], 1, 4);
        let log = LogIndex::new(&ds);
        let lists = rank_logged_items(&log, 10, |_, i| -f64::from(i));
        let m = uplift_at_n(&lists, &log, 10).unwrap();
        assert!((m.value - 0.5).abs() < 1e-15);
        assert_eq!(m.users_used, 1);

        let pm = PropensityModel::constant(0.5);
        let s = uplift_snips_at_n(&lists, &log, &ds, &pm, 10).unwrap();
        assert_eq!(s.value, m.value);
    }

    #[test]
    fn uplift_undefined_without_difference_set() {
        let ds = dataset(vec![rec(0, 0, 1, 1), rec(0, 1, 1, 0)], 1, 2);
        let log = LogIndex::new(&ds);
        let lists = rank_logged_items(&log, 10, |_, _| 0.0);
        assert!(matches!(uplift_at_n(&lists, &log, 10), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn precision_hand_values() {
        let mut records: Vec<_> = (0..10).map(|i| rec(0, i, 1, u8::from(i < 2))).collect();
        let ds = dataset(records.clone(), 1, 10);
        let log = LogIndex::new(&ds);
        let lists = rank_logged_items(&log, 10, |_, _| 1.0);
        assert!((precision_at_n(&lists, &log, 10).unwrap().value - 0.2).abs() < 1e-15);
        records.iter_mut().for_each(|r| r.outcome = 0);
        let ds = dataset(records, 1, 10);
        let log = LogIndex::new(&ds);
        assert_eq!(precision_at_n(&lists, &log, 10).unwrap().value, 0.0);
    }

    #[test]
    fn ranking_breaks_ties_by_item_and_truncates() {
        let l = RankedList::new(3, vec![(5, 1.0), (2, 1.0), (9, 2.0), (1, 0.0)], 3);
        assert_eq!(l.items, vec![(9, 2.0), (2, 1.0), (5, 1.0)]);
    }

    #[test]
    fn subgroups() {
        let ds = dataset(vec![rec(0, 0, 1, 0), rec(1, 0, 1, 0)], 2, 2);
        let ites = [(0, 0, 0.1), (0, 1, 0.3), (1, 0, 0.2), (1, 1, 0.2)];
        let all = subgroup_cate(&ites, &Grouping::from_key(&ds, "all").unwrap()).unwrap();
        assert!((all.groups[0].value - 0.2).abs() < 1e-15);

        let sign = Grouping::from_key(&ds, "user_feature:0").unwrap();
        assert_eq!(sign.of_user, vec![0, 1]);
        let t = subgroup_cate(&ites, &sign).unwrap();
        assert!((t.groups[0].value - 0.2).abs() < 1e-15);
        assert_eq!(t.advantage[0].0, 0);
        assert!((t.advantage[0].1 - 0.1).abs() < 1e-15);

        let same = [(0, 0, 0.1), (1, 0, 0.1), (0, 1, 0.4), (1, 1, 0.4)];
        let t = subgroup_cate(&same, &sign).unwrap();
        assert!(t.advantage.iter().all(|(_, d)| *d == 0.0));

        assert_eq!(
            Grouping::from_key(&ds, "gender"),
            Err(Error::UnknownAttribute("gender".into()))
        );
    }
}
