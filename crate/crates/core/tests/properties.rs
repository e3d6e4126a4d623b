use causcf_core::baselines::{snips_ate, statistic_ate, PropensityModel};
use causcf_core::data::{Dataset, IdIndex, InteractionRecord, Schema};
use causcf_core::effects::{aggregate, EffectEstimate, Scope, Weighting};
use causcf_core::metrics::{epsilon_ate, rank_logged_items, uplift_at_n, LogIndex};
use causcf_core::rdd::smd_test;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Two groups of `dim`-vectors with at least two rows each.
fn groups() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1usize..4, 2usize..12, 2usize..12).prop_flat_map(|(dim, nt, nc)| {
        (
            Just(dim),
            prop::collection::vec(-5.0f64..5.0, dim * nt),
            prop::collection::vec(-5.0f64..5.0, dim * nc),
        )
    })
}

fn log(cells: &[(u32, u32, u8, u8)]) -> Dataset {
    let records = cells
        .iter()
        .zip(0u32..)
        .map(|(&(user, item, treatment, outcome), s)| InteractionRecord {
            user,
            item,
            treatment,
            outcome,
            position: None,
            leave_position: None,
            session: Some(s),
            timestamp: None,
        })
        .collect();
    Dataset::from_parts(
        Schema::binary(1, 1),
        IdIndex::from_ids((0..6).map(|u| format!("u{u}"))),
        IdIndex::from_ids((0..8).map(|i| format!("i{i}"))),
        (0..6).map(f64::from).collect(),
        (0..8).map(f64::from).collect(),
        records,
    )
    .unwrap()
}

fn records() -> impl Strategy<Value = Vec<(u32, u32, u8, u8)>> {
    prop::collection::vec((0u32..6, 0u32..8, 0u8..2, 0u8..2), 1..200)
}

proptest! {
    #[test]
    fn smd_is_symmetric((dim, t, c) in groups()) {
        let a = smd_test(&t, &c, dim).unwrap();
        let b = smd_test(&c, &t, dim).unwrap();
        prop_assert_eq!(a.per_dim.len(), b.per_dim.len());
        for (x, y) in a.per_dim.iter().zip(&b.per_dim) {
            prop_assert!(x == y || close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn smd_is_affine_invariant((dim, t, c) in groups(), scale in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 10.0]), shift in -4.0f64..4.0) {
        let map = |xs: &[f64]| xs.iter().map(|x| scale * x + shift).collect::<Vec<_>>();
        let a = smd_test(&t, &c, dim).unwrap();
        let b = smd_test(&map(&t), &map(&c), dim).unwrap();
        for (x, y) in a.per_dim.iter().zip(&b.per_dim) {
            // zero-variance dimensions stay 0 or inf, the rest are invariant
            if x.is_finite() && *x < 1e6 {
                prop_assert!(close(*x, *y, 1e-9), "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn aggregation_ignores_order(values in prop::collection::vec((-1.0f64..1.0, 1usize..50, 0usize..50, any::<bool>()), 1..20), seed in any::<u64>()) {
        let ests: Vec<EffectEstimate> = values
            .iter()
            .map(|&(v, t, c, ok)| if ok { EffectEstimate::ok(v, Scope::Item, t, c) } else { EffectEstimate::skipped(Scope::Item, t, c) })
            .collect();
        let mut shuffled = ests.clone();
        // deterministic Fisher-Yates from the proptest seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        for w in [Weighting::Counts, Weighting::Uniform] {
            match (aggregate(&ests, w), aggregate(&shuffled, w)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!(close(a.value, b.value, 1e-12));
                    prop_assert_eq!((a.n_treated, a.n_control), (b.n_treated, b.n_control));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "definedness changed under permutation"),
            }
        }
    }

    #[test]
    fn uplift_ignores_monotone_score_transforms(cells in records(), n in 1usize..6, salt in 0u32..97) {
        let ds = log(&cells);
        let li = LogIndex::new(&ds);
        let raw = |u: u32, i: u32| f64::from((u * 31 + i * 17 + salt) % 11) - 5.0;
        let a = rank_logged_items(&li, n, raw);
        let b = rank_logged_items(&li, n, |u, i| (0.3 * raw(u, i)).exp() * 4.0 + 1.0);
        match (uplift_at_n(&a, &li, n), uplift_at_n(&b, &li, n)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness changed under transform"),
        }
    }

    #[test]
    fn snips_equals_statistic_under_constant_propensity(cells in records(), p in 0.05f64..0.95) {
        let ds = log(&cells);
        match (statistic_ate(&ds), snips_ate(&ds, &PropensityModel::constant(p))) {
            (Ok(a), Ok(b)) => prop_assert!(close(a.value, b.value, 1e-12), "{} vs {}", a.value, b.value),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "definedness differs"),
        }
    }

    #[test]
    fn epsilon_is_nonnegative_and_zero_on_self(values in prop::collection::vec((-1.0f64..1.0, 1usize..40, 1usize..40), 1..15), shift in -0.5f64..0.5) {
        let a: Vec<(u32, EffectEstimate)> = values
            .iter()
            .enumerate()
            .map(|(i, &(v, t, c))| (i as u32, EffectEstimate::ok(v, Scope::Item, t, c)))
            .collect();
        let b: Vec<(u32, EffectEstimate)> = a
            .iter()
            .map(|&(i, e)| (i, EffectEstimate::ok(e.value + shift, Scope::Item, e.n_treated, e.n_control)))
            .collect();
        prop_assert_eq!(epsilon_ate(&a, &a).unwrap().epsilon, 0.0);
        let eps = epsilon_ate(&b, &a).unwrap().epsilon;
        prop_assert!(eps >= 0.0);
        prop_assert!(close(eps, shift.abs(), 1e-9));
    }
}
