//! CSV reports. Column orders are fixed; reals use shortest round-trip form
//! and absent values are empty cells. Timings never appear here, so reruns
//! produce identical bytes.

use std::path::Path;

use causcf_core::data::Dataset;
use causcf_core::effects::{ComparisonReport, Status};
use causcf_core::metrics::{RankingMetric, SubgroupTable};
use causcf_core::model::TrainReport;
use causcf_core::rdd::{ItemOutcome, PopulationRdd};
use causcf_core::synth::SyntheticWorld;

use crate::error::{Error, Result};
use crate::io::create_file;

pub const HOMOGENEITY: [&str; 7] = ["item_id", "position", "smd", "n_treated", "n_control", "verdict", "smd_dims"];
pub const CUTOFF_EFFECTS: [&str; 8] = [
    "item_id", "position", "cate", "n_treated", "n_control", "smd", "weight", "admitted",
];
pub const ITEM_ATE: [&str; 7] = ["item_id", "ate", "total_weight", "n_treated", "n_control", "cutoffs_admitted", "skip_reason"];
pub const COMPARISON: [&str; 8] = [
    "method", "ate_within", "ate_out", "eps_within", "eps_out", "truth_eps_within", "truth_eps_out", "errors",
];
pub const RANKING: [&str; 8] = [
    "method", "n", "uplift", "uplift_snips", "precision", "users_used", "excluded_no_overlap", "excluded_no_difference",
];
pub const SUBGROUPS: [&str; 4] = ["group", "item_id", "cate", "n_pairs"];
pub const SUBGROUP_ADVANTAGE: [&str; 2] = ["item_id", "difference"];
pub const ITE: [&str; 5] = ["user_id", "item_id", "ite", "p_control", "p_treated"];
pub const TRUTH: [&str; 2] = ["item_id", "true_ate"];
pub const PAIR_TRUTH: [&str; 3] = ["user_id", "item_id", "true_ite"];
pub const TRAIN_LOSS: [&str; 3] = ["epoch", "objective", "data_loss"];

fn real(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

/// Writes a header and rows, creating parent directories.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = create_file(path)?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn item_id(ds: &Dataset, i: u32) -> String {
    ds.items().id(i).unwrap_or_default().to_string()
}

fn user_id(ds: &Dataset, u: u32) -> String {
    ds.users().id(u).unwrap_or_default().to_string()
}

pub fn write_homogeneity(path: &Path, ds: &Dataset, rdd: &PopulationRdd) -> Result<()> {
    let mut rows = Vec::new();
    for r in rdd.items.iter().filter_map(ItemOutcome::analysis) {
        for h in &r.homogeneity.rows {
            let dims: Vec<String> = h.per_dim.iter().map(|d| real(*d)).collect();
            rows.push(vec![
                item_id(ds, r.item),
                h.position.to_string(),
                real(h.smd),
                h.n_treated.to_string(),
                h.n_control.to_string(),
                h.verdict.as_str().to_string(),
                dims.join(";"),
            ]);
        }
    }
    write_csv(path, &HOMOGENEITY, rows)
}

pub fn write_cutoff_effects(path: &Path, ds: &Dataset, rdd: &PopulationRdd) -> Result<()> {
    let mut rows = Vec::new();
    for r in rdd.items.iter().filter_map(ItemOutcome::analysis) {
        for c in &r.cutoffs {
            rows.push(vec![
                item_id(ds, r.item),
                c.position.to_string(),
                if c.cate.status == Status::Ok { real(c.cate.value) } else { String::new() },
                c.cate.n_treated.to_string(),
                c.cate.n_control.to_string(),
                opt(c.smd.as_ref().map(|s| s.smd)),
                real(c.weight),
                c.admitted.to_string(),
            ]);
        }
    }
    write_csv(path, &CUTOFF_EFFECTS, rows)
}

pub fn write_item_ate(path: &Path, ds: &Dataset, rdd: &PopulationRdd) -> Result<()> {
    let rows = rdd.items.iter().map(|o| match o {
        ItemOutcome::Estimated(r) => {
            let weight: f64 = r.cutoffs.iter().map(|c| c.weight).sum();
            let admitted = r.cutoffs.iter().filter(|c| c.admitted).count();
            vec![
                item_id(ds, r.item),
                real(r.estimate.value),
                real(weight),
                r.estimate.n_treated.to_string(),
                r.estimate.n_control.to_string(),
                admitted.to_string(),
                String::new(),
            ]
        }
        ItemOutcome::Skipped { item, reason, .. } => vec![
            item_id(ds, *item),
            String::new(),
            "0".into(),
            "0".into(),
            "0".into(),
            "0".into(),
            reason.clone(),
        ],
    });
    write_csv(path, &ITEM_ATE, rows)
}

pub fn write_comparison(path: &Path, report: &ComparisonReport) -> Result<()> {
    let rows = report.rows.iter().map(|r| {
        vec![
            r.name.clone(),
            opt(r.ate_within),
            opt(r.ate_out),
            opt(r.eps_within),
            opt(r.eps_out),
            opt(r.truth_eps_within),
            opt(r.truth_eps_out),
            r.errors.join("; "),
        ]
    });
    write_csv(path, &COMPARISON, rows)
}

/// One ranking row: each metric or the reason it is undefined.
#[derive(Debug, Clone)]
pub struct RankingRow {
    pub method: String,
    pub n: usize,
    pub uplift: std::result::Result<RankingMetric, String>,
    pub uplift_snips: std::result::Result<RankingMetric, String>,
    pub precision: std::result::Result<RankingMetric, String>,
}

pub fn write_ranking(path: &Path, rows: &[RankingRow]) -> Result<()> {
    let value = |m: &std::result::Result<RankingMetric, String>| opt(m.as_ref().ok().map(|m| m.value));
    let rows = rows.iter().map(|r| {
        let counts = r.uplift.as_ref().ok();
        vec![
            r.method.clone(),
            r.n.to_string(),
            value(&r.uplift),
            value(&r.uplift_snips),
            value(&r.precision),
            counts.map(|c| c.users_used.to_string()).unwrap_or_default(),
            counts.map(|c| c.excluded_no_overlap.to_string()).unwrap_or_default(),
            counts.map(|c| c.excluded_no_difference.to_string()).unwrap_or_default(),
        ]
    });
    write_csv(path, &RANKING, rows)
}

/// Writes the group table and, with two groups, the per-item advantage.
pub fn write_subgroups(path: &Path, advantage_path: &Path, ds: &Dataset, table: &SubgroupTable) -> Result<()> {
    let mut rows = Vec::new();
    for (g, e) in table.groups.iter().enumerate() {
        rows.push(vec![
            table.labels[g].clone(),
            String::new(),
            opt(e.is_ok().then_some(e.value)),
            e.n_treated.to_string(),
        ]);
    }
    for (item, g, e) in &table.per_item {
        rows.push(vec![
            table.labels[*g].clone(),
            item_id(ds, *item),
            opt(e.is_ok().then_some(e.value)),
            e.n_treated.to_string(),
        ]);
    }
    write_csv(path, &SUBGROUPS, rows)?;
    if table.labels.len() == 2 {
        let rows = table.advantage.iter().map(|(i, d)| vec![item_id(ds, *i), real(*d)]);
        write_csv(advantage_path, &SUBGROUP_ADVANTAGE, rows)?;
    }
    Ok(())
}

/// `(user, item, ite, p_control, p_treated)` rows.
pub fn write_ite(path: &Path, ds: &Dataset, rows: &[(u32, u32, f64, f64, f64)]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|&(u, i, ite, p0, p1)| vec![user_id(ds, u), item_id(ds, i), real(ite), real(p0), real(p1)]);
    write_csv(path, &ITE, rows)
}

pub fn write_truth(path: &Path, world: &SyntheticWorld) -> Result<()> {
    let ids = world.item_ids();
    let rows = (0..world.n_items() as u32).map(|i| vec![ids.ids()[i as usize].clone(), real(world.true_ate(i))]);
    write_csv(path, &TRUTH, rows)
}

pub fn write_pair_truth(path: &Path, world: &SyntheticWorld) -> Result<()> {
    let (users, items) = (world.user_ids(), world.item_ids());
    let (m, n) = (world.n_users() as u32, world.n_items() as u32);
    let rows = (0..m).flat_map(|u| (0..n).map(move |i| (u, i))).map(|(u, i)| {
        vec![
            users.ids()[u as usize].clone(),
            items.ids()[i as usize].clone(),
            real(world.true_ite(u, i)),
        ]
    });
    write_csv(path, &PAIR_TRUTH, rows)
}

pub fn write_train_loss(path: &Path, report: &TrainReport) -> Result<()> {
    let rows = report
        .objective
        .iter()
        .zip(&report.data_loss)
        .enumerate()
        .map(|(e, (o, d))| vec![e.to_string(), real(*o), real(*d)]);
    write_csv(path, &TRAIN_LOSS, rows)
}

/// Reads `truth.csv` as `(item_id, true_ate)` pairs.
pub fn read_truth(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    let headers = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRUTH {
        return Err(Error::format(path, format!("expected header {}", TRUTH.join(","))));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let v: f64 = row[1]
            .parse()
            .map_err(|_| Error::format(path, format!("bad true_ate {:?}", &row[1])))?;
        out.push((row[0].to_string(), v));
    }
    Ok(out)
}
