//! Cutoff tables against a direct recount on a 50k-session simulated log.

use std::collections::HashMap;

use causcf_core::rdd::build_cutoff_tables;
use causcf_core::synth::{generate_world, simulate_log, SynthConfig};

#[test]
fn tables_match_a_direct_recount() {
    let cfg = SynthConfig {
        n_users: 200,
        n_items: 60,
        max_position: 60,
        rho: 0.1,
        n_sessions: 50_000,
        seed: 3,
        ..SynthConfig::default()
    };
    let world = generate_world(&cfg).unwrap();
    let ds = simulate_log(&world, cfg.n_sessions).unwrap();
    for window in [1u32, 3] {
        let tables = build_cutoff_tables(&ds, window).unwrap();
        // (item, c, treated?) -> (count, positives)
        let mut recount: HashMap<(u32, u32, bool), (usize, usize)> = HashMap::new();
        for r in ds.records() {
            let (p, c) = (r.position.unwrap() as i64, r.leave_position.unwrap() as i64);
            let side = if p <= c && p > c - window as i64 {
                Some(true)
            } else if p > c && p <= c + window as i64 {
                Some(false)
            } else {
                None
            };
            if let Some(t) = side {
                let e = recount.entry((r.item, c as u32, t)).or_default();
                e.0 += 1;
                e.1 += usize::from(r.outcome);
            }
        }
        let mut seen = 0;
        for table in &tables {
            for row in &table.rows {
                for (t, tally) in [(true, row.treated), (false, row.control)] {
                    let want = recount.get(&(table.item, row.position, t)).copied().unwrap_or_default();
                    assert_eq!((tally.count, tally.sum), want, "item {} cutoff {} treated {t}", table.item, row.position);
                    seen += usize::from(want.0 > 0);
                }
                assert_eq!(row.treated_users.len(), row.treated.count);
                assert_eq!(row.control_users.len(), row.control.count);
            }
        }
        assert_eq!(seen, recount.len());
    }
}
