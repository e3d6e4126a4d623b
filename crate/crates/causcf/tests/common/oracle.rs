//! Brute-force reimplementations of the estimators and metrics. They work on
//! plain record slices with nested loops and share no code with the crates
//! under test beyond the record type.

use causcf_core::data::InteractionRecord;

/// Population variance as the mean squared pairwise difference over two,
/// which avoids computing a mean first.
fn pairwise_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut s = 0.0;
    for a in xs {
        for b in xs {
            s += (a - b) * (a - b);
        }
    }
    s / (2.0 * n * n)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(smd, per_dim)` over rows of vectors; `None` below two rows per side.
pub fn smd(treated: &[Vec<f64>], control: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
    if treated.len() < 2 || control.len() < 2 {
        return None;
    }
    let dim = treated[0].len();
    let mut per_dim = Vec::new();
    for j in 0..dim {
        let t: Vec<f64> = treated.iter().map(|r| r[j]).collect();
        let c: Vec<f64> = control.iter().map(|r| r[j]).collect();
        let diff = (mean(&t) - mean(&c)).abs();
        let sd = ((pairwise_var(&t) + pairwise_var(&c)) / 2.0).sqrt();
        per_dim.push(if sd > 0.0 {
            diff / sd
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    Some((per_dim.iter().sum::<f64>() / dim as f64, per_dim))
}

/// Records of `item` in sessions leaving at `c`, split into the treated
/// window `(c-w, c]` and the control window `(c, c+w]`.
pub fn windows(records: &[InteractionRecord], item: u32, c: u32, w: u32) -> (Vec<&InteractionRecord>, Vec<&InteractionRecord>) {
    let mut t = Vec::new();
    let mut k = Vec::new();
    for r in records {
        if r.item != item || r.leave_position != Some(c) {
            continue;
        }
        let Some(p) = r.position else { continue };
        let (p, c, w) = (i64::from(p), i64::from(c), i64::from(w));
        if c - w < p && p <= c {
            t.push(r);
        } else if c < p && p <= c + w {
            k.push(r);
        }
    }
    (t, k)
}

fn rate(rs: &[&InteractionRecord]) -> f64 {
    rs.iter().filter(|r| r.outcome == 1).count() as f64 / rs.len() as f64
}

/// `(cate, n_treated, n_control)`, or `None` when a side is short.
pub fn cate(records: &[InteractionRecord], item: u32, c: u32, w: u32, min_samples: usize) -> Option<(f64, usize, usize)> {
    let (t, k) = windows(records, item, c, w);
    if t.is_empty() || k.is_empty() || t.len() < min_samples || k.len() < min_samples {
        return None;
    }
    Some((rate(&t) - rate(&k), t.len(), k.len()))
}

/// Weighted mean of the admitted cutoff CATEs of `item`, or `None`.
pub fn item_ate(
    records: &[InteractionRecord],
    user_vec: &dyn Fn(u32) -> Vec<f64>,
    item: u32,
    w: u32,
    range: (u32, u32),
    min_samples: usize,
) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for c in range.0..=range.1 {
        let Some((v, nt, nc)) = cate(records, item, c, w, min_samples.max(2)) else { continue };
        let (t, k) = windows(records, item, c, w);
        let tv: Vec<Vec<f64>> = t.iter().map(|r| user_vec(r.user)).collect();
        let kv: Vec<Vec<f64>> = k.iter().map(|r| user_vec(r.user)).collect();
        let Some((s, dims)) = smd(&tv, &kv) else { continue };
        if s < 0.1 && dims.iter().all(|d| d.is_finite()) {
            let weight = (nt + nc) as f64;
            num += weight * v;
            den += weight;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn statistic(records: &[InteractionRecord]) -> Option<f64> {
    let t: Vec<&InteractionRecord> = records.iter().filter(|r| r.treatment == 1).collect();
    let c: Vec<&InteractionRecord> = records.iter().filter(|r| r.treatment == 0).collect();
    if t.is_empty() || c.is_empty() {
        return None;
    }
    Some(rate(&t) - rate(&c))
}

/// Self-normalized IPS with propensity `e(user, item)`.
pub fn snips(records: &[InteractionRecord], e: &dyn Fn(u32, u32) -> f64) -> Option<f64> {
    let (mut tw, mut ty, mut cw, mut cy) = (0.0, 0.0, 0.0, 0.0);
    for r in records {
        let p = e(r.user, r.item);
        let y = f64::from(r.outcome);
        if r.treatment == 1 {
            tw += 1.0 / p;
            ty += y / p;
        } else {
            cw += 1.0 / (1.0 - p);
            cy += y / (1.0 - p);
        }
    }
    (tw > 0.0 && cw > 0.0).then(|| ty / tw - cy / cw)
}

/// Each user's logged items sorted by descending score, ties by item.
pub fn rankings(records: &[InteractionRecord], n_users: u32, score: &dyn Fn(u32, u32) -> f64) -> Vec<(u32, Vec<u32>)> {
    let mut out = Vec::new();
    for u in 0..n_users {
        let mut items: Vec<u32> = records.iter().filter(|r| r.user == u).map(|r| r.item).collect();
        items.sort();
        items.dedup();
        if items.is_empty() {
            continue;
        }
        // insertion sort on (score desc, item asc)
        let mut ranked: Vec<u32> = Vec::new();
        for i in items {
            let s = score(u, i);
            let at = ranked
                .iter()
                .position(|&j| {
                    let sj = score(u, j);
                    s > sj || (s == sj && i < j)
                })
                .unwrap_or(ranked.len());
            ranked.insert(at, i);
        }
        out.push((u, ranked));
    }
    out
}

fn recommended(records: &[InteractionRecord], u: u32, i: u32) -> bool {
    records.iter().any(|r| r.user == u && r.item == i && r.treatment == 1)
}

/// Mean over qualifying users of pooled treated rate on recommended top-`n`
/// items minus pooled control rate on the unrecommended ones, with record
/// weights `w(u, i, t)`.
pub fn uplift(
    records: &[InteractionRecord],
    lists: &[(u32, Vec<u32>)],
    n: usize,
    w: &dyn Fn(u32, u32, u8) -> f64,
) -> Option<f64> {
    let mut values = Vec::new();
    for (u, list) in lists {
        let top = &list[..n.min(list.len())];
        let (mut tw, mut ty, mut cw, mut cy) = (0.0, 0.0, 0.0, 0.0);
        for r in records.iter().filter(|r| r.user == *u && top.contains(&r.item)) {
            let wt = w(r.user, r.item, r.treatment);
            if recommended(records, r.user, r.item) {
                if r.treatment == 1 {
                    tw += wt;
                    ty += wt * f64::from(r.outcome);
                }
            } else {
                cw += wt;
                cy += wt * f64::from(r.outcome);
            }
        }
        if tw > 0.0 && cw > 0.0 {
            values.push(ty / tw - cy / cw);
        }
    }
    (!values.is_empty()).then(|| mean(&values))
}

/// Mean over users of the share of recommended top-`n` items bought while
/// recommended.
pub fn precision(records: &[InteractionRecord], lists: &[(u32, Vec<u32>)], n: usize) -> Option<f64> {
    let mut values = Vec::new();
    for (u, list) in lists {
        let top = &list[..n.min(list.len())];
        let shown: Vec<u32> = top.iter().copied().filter(|&i| recommended(records, *u, i)).collect();
        if shown.is_empty() {
            continue;
        }
        let hits = shown
            .iter()
            .filter(|&&i| records.iter().any(|r| r.user == *u && r.item == i && r.treatment == 1 && r.outcome == 1))
            .count();
        values.push(hits as f64 / shown.len() as f64);
    }
    (!values.is_empty()).then(|| mean(&values))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
