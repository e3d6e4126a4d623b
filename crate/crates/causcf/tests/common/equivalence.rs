//! Runs every estimator and metric against its brute-force twin on the
//! fixture logs and reports the worst relative disagreement.

use causcf_core::baselines::{fit_propensity, snips_ate, statistic_ate, PropensityConfig};
use causcf_core::data::Dataset;
use causcf_core::metrics::{precision_at_n, rank_logged_items, uplift_at_n, uplift_snips_at_n, LogIndex};
use causcf_core::rdd::{build_cutoff_table, cate_at_cutoff, item_ate_rdd, smd_test, RddConfig, UserVectors};

use super::fixtures::{browsing_log, ITEMS};
use super::oracle;

pub const TOLERANCE: f64 = 1e-9;

/// Worst agreement of one operation across all cases.
#[derive(Debug, Clone)]
pub struct Agreement {
    pub name: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Cases where one side produced a value and the other did not.
    pub definedness_mismatches: usize,
}

impl Agreement {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            max_rel_err: 0.0,
            definedness_mismatches: 0,
        }
    }

    fn add(&mut self, got: Option<f64>, want: Option<f64>) {
        self.cases += 1;
        match (got, want) {
            (Some(a), Some(b)) => self.max_rel_err = self.max_rel_err.max(oracle::rel_err(a, b)),
            (None, None) => {}
            _ => self.definedness_mismatches += 1,
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.definedness_mismatches == 0 && self.max_rel_err <= TOLERANCE
    }
}

fn score(u: u32, i: u32) -> f64 {
    // coarse on purpose so ties exercise the tie-break
    f64::from((u * 7 + i * 3) % 5)
}

fn features(ds: &Dataset) -> impl Fn(u32) -> Vec<f64> + '_ {
    move |u| ds.user_features(u).to_vec()
}

pub fn run_all(seeds: std::ops::Range<u64>) -> Vec<Agreement> {
    let mut smd = Agreement::new("smd_test");
    let mut cate = Agreement::new("cate_at_cutoff");
    let mut item = Agreement::new("item_ate_rdd");
    let mut stat = Agreement::new("statistic_ate");
    let mut snips = Agreement::new("snips_ate");
    let mut uplift = Agreement::new("uplift_at_n");
    let mut uplift_snips = Agreement::new("uplift_snips_at_n");
    let mut precision = Agreement::new("precision_at_n");
    for seed in seeds {
        for shared in [false, true] {
            let ds = browsing_log(seed, shared);
            assert!(ds.len() <= 1000);
            let recs = ds.records();
            let reps = UserVectors::from_features(&ds);
            let uv = features(&ds);
            for w in [1u32, 2] {
                let config = RddConfig {
                    window: w,
                    min_samples: 2,
                    ..RddConfig::default()
                };
                for i in 0..ITEMS as u32 {
                    let table = build_cutoff_table(&ds, i, w).unwrap();
                    for c in 1..=4u32 {
                        for min in [1usize, 3] {
                            let e = cate_at_cutoff(&table, c, min);
                            cate.add(e.is_ok().then_some(e.value), oracle::cate(recs, i, c, w, min).map(|v| v.0));
                        }
                        let (t, k) = oracle::windows(recs, i, c, w);
                        let tv: Vec<Vec<f64>> = t.iter().map(|r| uv(r.user)).collect();
                        let kv: Vec<Vec<f64>> = k.iter().map(|r| uv(r.user)).collect();
                        let flat = |rows: &[Vec<f64>]| rows.concat();
                        let got = smd_test(&flat(&tv), &flat(&kv), 2).ok().map(|r| r.smd);
                        // infinite SMDs compare by equality
                        match (got, oracle::smd(&tv, &kv).map(|r| r.0)) {
                            (Some(a), Some(b)) if a.is_infinite() || b.is_infinite() => {
                                smd.add(Some(f64::from(u8::from(a == b))), Some(1.0))
                            }
                            (a, b) => smd.add(a, b),
                        }
                    }
                    let got = item_ate_rdd(&ds, i, &reps, &config).ok().map(|r| r.estimate.value);
                    item.add(got, oracle::item_ate(recs, &uv, i, w, (config.start, config.end), config.min_samples));
                }
            }
            stat.add(statistic_ate(&ds).ok().map(|e| e.value), oracle::statistic(recs));
            let pm = fit_propensity(&ds, &PropensityConfig::default()).unwrap();
            let e = |u: u32, i: u32| pm.predict(&ds, u, i);
            snips.add(snips_ate(&ds, &pm).ok().map(|e| e.value), oracle::snips(recs, &e));

            let log = LogIndex::new(&ds);
            let lists = oracle::rankings(recs, ds.n_users() as u32, &score);
            for n in [1usize, 2, 3, 5] {
                let ranked = rank_logged_items(&log, n, score);
                let ones = |_: u32, _: u32, _: u8| 1.0;
                let ipw = |u: u32, i: u32, t: u8| if t == 1 { 1.0 / e(u, i) } else { 1.0 / (1.0 - e(u, i)) };
                uplift.add(uplift_at_n(&ranked, &log, n).ok().map(|m| m.value), oracle::uplift(recs, &lists, n, &ones));
                uplift_snips.add(
                    uplift_snips_at_n(&ranked, &log, &ds, &pm, n).ok().map(|m| m.value),
                    oracle::uplift(recs, &lists, n, &ipw),
                );
                precision.add(precision_at_n(&ranked, &log, n).ok().map(|m| m.value), oracle::precision(recs, &lists, n));
            }
        }
    }
    vec![smd, cate, item, stat, snips, uplift, uplift_snips, precision]
}
