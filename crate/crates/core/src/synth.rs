//! Simulated browsing logs with known potential outcomes.
//!
//! A world plants user, item and treatment factors `P*`, `Q*`, `D*` and
//! defines purchase probabilities
//!
//! ```text
//! π(u, i, t) = σ(p*_u·q*_i + p*_u·d*_t + q*_i·d*_t [+ λ Σ_j a_uj b_ij c_tj])
//! ```
//!
//! where the bracketed three-way term is the optional misspecification.
//! Each session samples a user and a leave position `c`, ranks every item
//! with the exposure policy, and logs the items at positions `1..=c` as
//! treated and the next `ratio·c` positions as control, drawing each outcome
//! from `π` of its own `(u, i, t)` only.
//!
//! Draw order. The world stream (seeded with `seed`) draws, in order: `P*`
//! row-major, `Q*`, `D*` (`t = 0` row first), the misspecification factors
//! `a`, `b`, `c` when enabled, the user feature noise and the item feature
//! noise, all as standard normals scaled in place. Sessions are simulated in
//! blocks of [`BLOCK_SESSIONS`]; block `b` has its own stream seeded from
//! `(seed, b)`, and within a session draws the user, the leave position, the
//! ranking noise, and one uniform per logged outcome in position order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, IdIndex, InteractionRecord, Schema};
use crate::error::{Error, Result};
use crate::math::{bce_with_logit, sigmoid};
use crate::rng::SeededRng;

/// Sessions per independently seeded block.
pub const BLOCK_SESSIONS: usize = 1024;

/// How a session's items are ordered for display.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Rank by `gamma · logit π(u,i,1) + N(0,1)`; `gamma = 0` is a uniformly
    /// random order, larger values show preferred items earlier.
    Preference { gamma: f64 },
    /// Covariate shift by construction: items alternate between two pools
    /// (`i mod 2`) on odd and even positions, users with a negative first
    /// feature see pool 0 on odd positions and the rest pool 1, each pool
    /// shuffled uniformly.
    SegmentInterleaved,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Planted rank `k*`.
    pub k_star: usize,
    /// Entries of `P*` and `Q*` are `N(factor_mean, factor_sd²)`.
    pub factor_mean: f64,
    pub factor_sd: f64,
    /// Entries of `d*_0` are `N(control_shift, treatment_sd²)`.
    pub control_shift: f64,
    /// Entries of `d*_1` are `N(treated_shift, treatment_sd²)`.
    pub treated_shift: f64,
    pub treatment_sd: f64,
    /// Added to the first entry of `d*_1`, so the effect grows with the
    /// first user and item factor.
    pub segment_shift: f64,
    /// Scale `λ` of the three-way term outside the factor model's form; 0
    /// disables it.
    pub misspecification: f64,
    /// Observed features are the planted factors plus `N(0, feature_noise²)`.
    pub feature_noise: f64,
    pub policy: Policy,
    /// Leave positions are geometric with this success probability,
    /// truncated at `max_position`.
    pub rho: f64,
    pub max_position: u32,
    /// Control positions logged per treated position.
    pub control_ratio: u32,
    pub n_sessions: usize,
    /// Sessions are spread evenly over days `1..=days`.
    pub days: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 200,
            k_star: 4,
            factor_mean: 0.5,
            factor_sd: 0.5,
            control_shift: -0.75,
            treated_shift: -0.5,
            treatment_sd: 0.1,
            segment_shift: 0.0,
            misspecification: 0.0,
            feature_noise: 0.3,
            policy: Policy::Preference { gamma: 0.0 },
            rho: 0.04,
            max_position: 200,
            control_ratio: 5,
            n_sessions: 10_000,
            days: 7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_users == 0 || self.n_items == 0 {
            return bad("world needs at least one user and one item".into());
        }
        if self.k_star == 0 {
            return bad("k_star must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if self.max_position == 0 || self.max_position as usize > self.n_items {
            return bad(format!(
                "max_position must lie in [1, n_items = {}], got {}",
                self.n_items, self.max_position
            ));
        }
        if self.n_sessions == 0 {
            return bad("n_sessions must be at least 1".into());
        }
        if self.n_sessions > u32::MAX as usize {
            return bad("n_sessions exceeds the session id range".into());
        }
        if self.days == 0 {
            return bad("days must be at least 1".into());
        }
        let finite = [
            self.factor_mean,
            self.factor_sd,
            self.control_shift,
            self.treated_shift,
            self.treatment_sd,
            self.segment_shift,
            self.misspecification,
            self.feature_noise,
        ];
        if finite.iter().any(|x| !x.is_finite()) || self.factor_sd < 0.0 || self.treatment_sd < 0.0 || self.feature_noise < 0.0
        {
            return bad("generator scales must be finite and sds nonnegative".into());
        }
        if let Policy::Preference { gamma } = self.policy {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return bad(format!("policy strength gamma must be >= 0, got {gamma}"));
            }
        }
        Ok(())
    }
}

/// The planted parameters and their outcome probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: SynthConfig,
    /// `P*`, `m × k*` row-major.
    pub user_factors: Vec<f64>,
    /// `Q*`, `n × k*`.
    pub item_factors: Vec<f64>,
    /// `D*`, `2 × k*`.
    pub treatment_factors: Vec<f64>,
    pub user_features: Vec<f64>,
    pub item_features: Vec<f64>,
    /// `logit π(u,i,t)` at `(u·n + i)·2 + t`.
    logits: Vec<f64>,
}

fn normals(rng: &mut SeededRng, len: usize, mean: f64, sd: f64) -> Vec<f64> {
    rng.normal_vec(len, mean, sd)
}

/// Builds the world deterministically from `config.seed`.
pub fn generate_world(config: &SynthConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let (m, n, k) = (config.n_users, config.n_items, config.k_star);
    let mut rng = SeededRng::new(config.seed);
    let p = normals(&mut rng, m * k, config.factor_mean, config.factor_sd);
    let q = normals(&mut rng, n * k, config.factor_mean, config.factor_sd);
    let mut d = normals(&mut rng, k, config.control_shift, config.treatment_sd);
    d.extend(normals(&mut rng, k, config.treated_shift, config.treatment_sd));
    d[k] += config.segment_shift;
    let cp = (config.misspecification != 0.0).then(|| {
        (
            normals(&mut rng, m * k, 0.0, 1.0),
            normals(&mut rng, n * k, 0.0, 1.0),
            normals(&mut rng, 2 * k, 0.0, 1.0),
        )
    });
    let noisy = |base: &[f64], rng: &mut SeededRng| -> Vec<f64> {
        base.iter().map(|x| x + config.feature_noise * rng.normal()).collect()
    };
    let user_features = noisy(&p, &mut rng);
    let item_features = noisy(&q, &mut rng);

    let mut logits = Vec::with_capacity(m * n * 2);
    for u in 0..m {
        let pu = &p[u * k..(u + 1) * k];
        for i in 0..n {
            let qi = &q[i * k..(i + 1) * k];
            let pq = crate::math::dot(pu, qi);
            for t in 0..2 {
                let dt = &d[t * k..(t + 1) * k];
                let mut z = pq + crate::math::dot(pu, dt) + crate::math::dot(qi, dt);
                if let Some((a, b, c)) = &cp {
                    let three: f64 = (0..k).map(|j| a[u * k + j] * b[i * k + j] * c[t * k + j]).sum();
                    z += config.misspecification * three;
                }
                logits.push(z);
            }
        }
    }
    Ok(SyntheticWorld {
        config: *config,
        user_factors: p,
        item_factors: q,
        treatment_factors: d,
        user_features,
        item_features,
        logits,
    })
}

impl SyntheticWorld {
    pub fn n_users(&self) -> usize {
        self.config.n_users
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }

    #[inline]
    pub fn logit(&self, u: u32, i: u32, t: u8) -> f64 {
        self.logits[(u as usize * self.config.n_items + i as usize) * 2 + usize::from(t)]
    }

    /// `π(u, i, t)`.
    #[inline]
    pub fn pi(&self, u: u32, i: u32, t: u8) -> f64 {
        sigmoid(self.logit(u, i, t))
    }

    /// `π(u,i,1) - π(u,i,0)`.
    pub fn true_ite(&self, u: u32, i: u32) -> f64 {
        self.pi(u, i, 1) - self.pi(u, i, 0)
    }

    /// Mean ITE of `item` over all users.
    pub fn true_ate(&self, item: u32) -> f64 {
        let m = self.n_users();
        (0..m as u32).map(|u| self.true_ite(u, item)).sum::<f64>() / m as f64
    }

    /// Mean ITE over every `(user, item)` pair.
    pub fn population_ate(&self) -> f64 {
        let n = self.n_items();
        (0..n as u32).map(|i| self.true_ate(i)).sum::<f64>() / n as f64
    }

    /// True ITEs, row-major by user.
    pub fn ite_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_users() * self.n_items());
        for u in 0..self.n_users() as u32 {
            out.extend((0..self.n_items() as u32).map(|i| self.true_ite(u, i)));
        }
        out
    }

    /// Mean cross-entropy of the records under the true probabilities.
    pub fn bayes_log_loss(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::EmptyGroup("evaluation"));
        }
        let total: f64 = ds
            .records()
            .iter()
            .map(|r| bce_with_logit(self.logit(r.user, r.item, r.treatment), f64::from(r.outcome)))
            .sum();
        Ok(total / ds.len() as f64)
    }

    /// `1` when the user's first observed feature is nonnegative, else `0`.
    pub fn segment(&self, u: u32) -> usize {
        usize::from(self.user_features[u as usize * self.config.k_star] >= 0.0)
    }

    pub fn schema(&self) -> Schema {
        Schema::binary(self.config.k_star, self.config.k_star)
    }

    pub fn user_ids(&self) -> IdIndex {
        IdIndex::from_ids((0..self.n_users()).map(|u| format!("u{u}")))
    }

    pub fn item_ids(&self) -> IdIndex {
        IdIndex::from_ids((0..self.n_items()).map(|i| format!("i{i}")))
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of session block `block`.
pub fn block_seed(seed: u64, block: usize) -> u64 {
    splitmix(splitmix(seed ^ 0x5eed_0f_b10c) ^ block as u64)
}

/// Number of session blocks for `n_sessions`.
pub fn n_blocks(n_sessions: usize) -> usize {
    n_sessions.div_ceil(BLOCK_SESSIONS)
}

/// Per-session scratch buffers.
struct Scratch {
    keyed: Vec<(f64, u32)>,
    order: Vec<u32>,
    pools: [Vec<u32>; 2],
}

impl SyntheticWorld {
    fn rank(&self, u: u32, depth: usize, rng: &mut SeededRng, s: &mut Scratch) {
        let n = self.n_items();
        s.order.clear();
        match self.config.policy {
            Policy::Preference { gamma } => {
                s.keyed.clear();
                for i in 0..n as u32 {
                    let key = gamma * self.logit(u, i, 1) + rng.normal();
                    s.keyed.push((key, i));
                }
                let by_key = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
                if depth < n {
                    s.keyed.select_nth_unstable_by(depth, by_key);
                    s.keyed.truncate(depth);
                }
                s.keyed.sort_unstable_by(by_key);
                s.order.extend(s.keyed.iter().map(|(_, i)| *i));
            }
            Policy::SegmentInterleaved => {
                for (p, pool) in s.pools.iter_mut().enumerate() {
                    pool.clear();
                    pool.extend((p as u32..n as u32).step_by(2));
                    rng.shuffle(pool);
                }
                let odd = self.segment(u) ^ 1; // pool shown on odd positions
                let (a, b) = (&s.pools[odd], &s.pools[odd ^ 1]);
                for j in 0..a.len().max(b.len()) {
                    s.order.extend(a.get(j));
                    s.order.extend(b.get(j));
                }
                s.order.truncate(depth);
            }
        }
    }

    /// Records of sessions in block `block` of a log with `n_sessions`
    /// sessions, in session then position order.
    pub fn simulate_block(&self, n_sessions: usize, block: usize) -> Vec<InteractionRecord> {
        let cfg = &self.config;
        let n = self.n_items();
        let mut rng = SeededRng::new(block_seed(cfg.seed, block));
        let mut scratch = Scratch {
            keyed: Vec::with_capacity(n),
            order: Vec::with_capacity(n),
            pools: [Vec::new(), Vec::new()],
        };
        let lo = block * BLOCK_SESSIONS;
        let hi = (lo + BLOCK_SESSIONS).min(n_sessions);
        let mut out = Vec::new();
        for session in lo..hi {
            let u = rng.below(self.n_users()) as u32;
            let c = rng.truncated_geometric(cfg.rho, cfg.max_position);
            let depth = (c as usize).saturating_mul(1 + cfg.control_ratio as usize).min(n);
            self.rank(u, depth, &mut rng, &mut scratch);
            let day = 1 + (session as u64 * u64::from(cfg.days) / n_sessions as u64) as u32;
            for (ix, &item) in scratch.order.iter().enumerate() {
                let pos = ix as u32 + 1;
                let t = u8::from(pos <= c);
                let y = u8::from(rng.bernoulli(self.pi(u, item, t)));
                out.push(InteractionRecord {
                    user: u,
                    item,
                    treatment: t,
                    outcome: y,
                    position: Some(pos),
                    leave_position: Some(c),
                    session: Some(session as u32),
                    timestamp: Some(day),
                });
            }
        }
        out
    }

    /// Wraps simulated records in a validated dataset.
    pub fn assemble(&self, records: Vec<InteractionRecord>) -> Result<Dataset> {
        Dataset::from_parts(
            self.schema(),
            self.user_ids(),
            self.item_ids(),
            self.user_features.clone(),
            self.item_features.clone(),
            records,
        )
    }
}

/// Simulates `n_sessions` sessions.
pub fn simulate_log(world: &SyntheticWorld, n_sessions: usize) -> Result<Dataset> {
    if n_sessions == 0 || n_sessions > u32::MAX as usize {
        return Err(Error::InvalidConfig(format!("n_sessions must lie in [1, 2^32), got {n_sessions}")));
    }
    let mut records = Vec::new();
    for b in 0..n_blocks(n_sessions) {
        records.extend(world.simulate_block(n_sessions, b));
    }
    world.assemble(records)
}

/// Whether each `(user segment, item)` cell of a log holds both arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityAudit {
    /// Cells with at least one record.
    pub cells: usize,
    pub cells_with_both_arms: usize,
}

impl PositivityAudit {
    pub fn fraction(&self) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            self.cells_with_both_arms as f64 / self.cells as f64
        }
    }
}

pub fn positivity_audit(world: &SyntheticWorld, ds: &Dataset) -> PositivityAudit {
    let n = world.n_items();
    let mut seen = vec![[false; 2]; 2 * n];
    for r in ds.records() {
        seen[world.segment(r.user) * n + r.item as usize][usize::from(r.treatment)] = true;
    }
    PositivityAudit {
        cells: seen.iter().filter(|s| s[0] || s[1]).count(),
        cells_with_both_arms: seen.iter().filter(|s| s[0] && s[1]).count(),
    }
}
