//! Small seeded logs for oracle comparisons.

use causcf_core::data::{Dataset, IdIndex, InteractionRecord, Schema};
use causcf_core::rng::SeededRng;

pub const USERS: usize = 8;
pub const ITEMS: usize = 6;
pub const SESSIONS: u32 = 90;

/// A browsing log of at most `SESSIONS * ITEMS` records. With `shared`
/// features every user looks the same, so every cutoff is balanced;
/// otherwise features are drawn from `{0, 1}` and balance varies.
pub fn browsing_log(seed: u64, shared: bool) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let user_features: Vec<f64> = (0..USERS * 2)
        .map(|_| if shared { 1.0 } else { rng.below(2) as f64 })
        .collect();
    let item_features: Vec<f64> = (0..ITEMS * 2).map(|j| (j % 3) as f64 - 1.0).collect();
    let mut records = Vec::new();
    for s in 0..SESSIONS {
        let user = rng.below(USERS) as u32;
        let leave = 1 + rng.below(4) as u32;
        let mut order: Vec<u32> = (0..ITEMS as u32).collect();
        rng.shuffle(&mut order);
        let depth = (leave as usize + 2).min(ITEMS);
        for (ix, &item) in order[..depth].iter().enumerate() {
            let position = ix as u32 + 1;
            let treatment = u8::from(position <= leave);
            let p = 0.2 + 0.3 * f64::from(treatment) + 0.05 * f64::from(item % 3);
            records.push(InteractionRecord {
                user,
                item,
                treatment,
                outcome: u8::from(rng.bernoulli(p)),
                position: Some(position),
                leave_position: Some(leave),
                session: Some(s),
                timestamp: Some(1 + s / 30),
            });
        }
    }
    Dataset::from_parts(
        Schema::binary(2, 2),
        IdIndex::from_ids((0..USERS).map(|u| format!("u{u}"))),
        IdIndex::from_ids((0..ITEMS).map(|i| format!("i{i}"))),
        user_features,
        item_features,
        records,
    )
    .expect("fixture log is valid")
}

/// A log without browsing positions.
pub fn positionless_log() -> Dataset {
    let records = (0..40u32)
        .map(|k| InteractionRecord {
            user: k % 4,
            item: k % 5,
            treatment: (k % 2) as u8,
            outcome: u8::from(k % 3 == 0),
            position: None,
            leave_position: None,
            session: Some(k),
            timestamp: Some(1 + k / 10),
        })
        .collect();
    Dataset::from_parts(
        Schema::binary(1, 1),
        IdIndex::from_ids((0..4).map(|u| format!("u{u}"))),
        IdIndex::from_ids((0..5).map(|i| format!("i{i}"))),
        vec![0.5, -0.5, 1.0, 0.0],
        vec![0.1, 0.2, 0.3, 0.4, 0.5],
        records,
    )
    .expect("fixture log is valid")
}
