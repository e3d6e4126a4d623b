//! Interaction logs: validated records, contiguous id indices, per-user and
//! per-item feature tables, and train/test splits.
//!
//! Records are stored by index. Pre-treatment features are attributes of the
//! user or item, so the dataset keeps one row per user and per item rather
//! than copying them into every record; the file formats still carry them on
//! every line and ingestion checks that repeated copies agree.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result, RowIssue};

/// Feature lengths and treatment count declared by a dataset header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub n_treatments: u8,
    pub user_features: usize,
    pub item_features: usize,
}

impl Schema {
    pub fn binary(user_features: usize, item_features: usize) -> Self {
        Self {
            n_treatments: 2,
            user_features,
            item_features,
        }
    }
}

/// One logged observation, with users and items already remapped to
/// contiguous indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: u32,
    pub item: u32,
    pub treatment: u8,
    pub outcome: u8,
    /// Display rank of the item in its session; `None` when not displayed or
    /// when the source carries no positions.
    pub position: Option<u32>,
    /// Last position the session's user browsed before leaving.
    pub leave_position: Option<u32>,
    pub session: Option<u32>,
    /// Integer time stamp (e.g. day number) used for time-ordered splits.
    pub timestamp: Option<u32>,
}

/// A record as it appears in a file: opaque ids and inline features.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub item_id: String,
    pub treatment: u8,
    pub outcome: u8,
    pub position: Option<u32>,
    pub leave_position: Option<u32>,
    pub session: Option<u32>,
    pub timestamp: Option<u32>,
    pub user_features: Vec<f64>,
    pub item_features: Vec<f64>,
}

/// Bijection between opaque identifiers and `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: BTreeMap<String, u32>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index built from ids in order; duplicate ids keep their first index.
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = Self::new();
        for id in ids {
            index.intern(id.into());
        }
        index
    }

    /// Returns the index of `id`, assigning the next free one if unseen, and
    /// whether it was newly inserted.
    pub fn intern(&mut self, id: String) -> (u32, bool) {
        if let Some(&ix) = self.lookup.get(&id) {
            return (ix, false);
        }
        let ix = self.ids.len() as u32;
        self.lookup.insert(id.clone(), ix);
        self.ids.push(id);
        (ix, true)
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: u32) -> Option<&str> {
        self.ids.get(index as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// An immutable, validated interaction log.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    records: Vec<InteractionRecord>,
    users: IdIndex,
    items: IdIndex,
    user_features: Vec<f64>,
    item_features: Vec<f64>,
}

/// One cell of the observed outcome tensor: all records sharing
/// `(user, item, treatment)`, summarised as a binomial count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservedCell {
    pub user: u32,
    pub item: u32,
    pub treatment: u8,
    pub count: u32,
    pub positives: u32,
}

/// Where to cut a log into train and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitBoundary {
    /// Train holds records stamped `<= t`, test the rest.
    Timestamp(u32),
    /// Train holds the first `floor(f * len)` records in time order (record
    /// order when stamps are missing).
    Fraction(f64),
}

impl Dataset {
    /// Assembles a dataset from already-indexed parts, checking every record
    /// invariant. Offending records are reported with 1-based record numbers.
    pub fn from_parts(
        schema: Schema,
        users: IdIndex,
        items: IdIndex,
        user_features: Vec<f64>,
        item_features: Vec<f64>,
        records: Vec<InteractionRecord>,
    ) -> Result<Self> {
        if schema.n_treatments < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least two treatments, header declares {}",
                schema.n_treatments
            )));
        }
        if user_features.len() != users.len() * schema.user_features {
            return Err(Error::FeatureLength {
                expected: users.len() * schema.user_features,
                found: user_features.len(),
            });
        }
        if item_features.len() != items.len() * schema.item_features {
            return Err(Error::FeatureLength {
                expected: items.len() * schema.item_features,
                found: item_features.len(),
            });
        }
        if user_features.iter().chain(&item_features).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("features must be finite".to_string()));
        }
        let ds = Self {
            schema,
            records,
            users,
            items,
            user_features,
            item_features,
        };
        let line_of = |ix: usize| ix + 1;
        let mut issues: Vec<RowIssue> = ds
            .records
            .iter()
            .enumerate()
            .filter_map(|(ix, r)| ds.check_record(r).map(|reason| RowIssue { line: line_of(ix), reason }))
            .collect();
        issues.extend(duplicate_issues(&ds.records, line_of));
        if !issues.is_empty() {
            issues.sort_by_key(|i| i.line);
            return Err(Error::Validation(issues));
        }
        Ok(ds)
    }

    fn check_record(&self, r: &InteractionRecord) -> Option<String> {
        if r.user as usize >= self.users.len() {
            return Some(format!("user index {} out of range", r.user));
        }
        if r.item as usize >= self.items.len() {
            return Some(format!("item index {} out of range", r.item));
        }
        check_labels(self.schema, r.treatment, r.outcome, r.position, r.leave_position)
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_treatments(&self) -> usize {
        usize::from(self.schema.n_treatments)
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn user_features(&self, user: u32) -> &[f64] {
        let f = self.schema.user_features;
        &self.user_features[user as usize * f..(user as usize + 1) * f]
    }

    pub fn item_features(&self, item: u32) -> &[f64] {
        let f = self.schema.item_features;
        &self.item_features[item as usize * f..(item as usize + 1) * f]
    }

    pub fn user_feature_table(&self) -> &[f64] {
        &self.user_features
    }

    pub fn item_feature_table(&self) -> &[f64] {
        &self.item_features
    }

    /// True when every record carries both a display position and the
    /// session's leave position.
    pub fn has_positions(&self) -> bool {
        !self.records.is_empty()
            && self
                .records
                .iter()
                .all(|r| r.position.is_some() && r.leave_position.is_some())
    }

    /// Converts record `ix` back to its file form.
    pub fn raw_record(&self, ix: usize) -> RawRecord {
        let r = &self.records[ix];
        RawRecord {
            user_id: self.users.ids[r.user as usize].clone(),
            item_id: self.items.ids[r.item as usize].clone(),
            treatment: r.treatment,
            outcome: r.outcome,
            position: r.position,
            leave_position: r.leave_position,
            session: r.session,
            timestamp: r.timestamp,
            user_features: self.user_features(r.user).to_vec(),
            item_features: self.item_features(r.item).to_vec(),
        }
    }

    /// Records per item index.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.n_items()];
        for r in &self.records {
            counts[r.item as usize] += 1;
        }
        counts
    }

    /// Aggregates records into the observed tensor cells, sorted by
    /// `(user, item, treatment)`.
    pub fn observed_cells(&self) -> Vec<ObservedCell> {
        let l = self.n_treatments() as u64;
        let n = self.n_items() as u64;
        // key = ((user * n + item) * l + treatment) * 2 + outcome
        let mut keys: Vec<u64> = self
            .records
            .iter()
            .map(|r| {
                ((u64::from(r.user) * n + u64::from(r.item)) * l + u64::from(r.treatment)) * 2
                    + u64::from(r.outcome)
            })
            .collect();
        keys.sort_unstable();
        let mut cells: Vec<ObservedCell> = Vec::new();
        for key in keys {
            let positive = (key & 1) as u32;
            let cell = key >> 1;
            let treatment = (cell % l) as u8;
            let item = ((cell / l) % n) as u32;
            let user = (cell / l / n) as u32;
            match cells.last_mut() {
                Some(c) if c.user == user && c.item == item && c.treatment == treatment => {
                    c.count += 1;
                    c.positives += positive;
                }
                _ => cells.push(ObservedCell {
                    user,
                    item,
                    treatment,
                    count: 1,
                    positives: positive,
                }),
            }
        }
        cells
    }

    /// A dataset sharing this one's indices and feature tables but holding
    /// only the given records.
    pub fn with_records(&self, records: Vec<InteractionRecord>) -> Self {
        Self {
            schema: self.schema,
            records,
            users: self.users.clone(),
            items: self.items.clone(),
            user_features: self.user_features.clone(),
            item_features: self.item_features.clone(),
        }
    }

    /// Records for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&InteractionRecord) -> bool) -> Self {
        self.with_records(self.records.iter().copied().filter(|r| keep(r)).collect())
    }
}

fn check_labels(
    schema: Schema,
    treatment: u8,
    outcome: u8,
    position: Option<u32>,
    leave_position: Option<u32>,
) -> Option<String> {
    if treatment >= schema.n_treatments {
        return Some(format!(
            "treatment {treatment} outside 0..{}",
            schema.n_treatments
        ));
    }
    if outcome > 1 {
        return Some(format!("outcome {outcome} is not binary"));
    }
    if let (Some(pos), Some(leave)) = (position, leave_position) {
        let shown = pos <= leave;
        if shown != (treatment == 1) {
            return Some(format!(
                "treatment {treatment} inconsistent with position {pos} and leave_position {leave}"
            ));
        }
    }
    None
}

/// Duplicate observations: two records with the same `(user, item,
/// treatment)` inside one session, or anywhere when sessions are absent.
fn duplicate_issues(records: &[InteractionRecord], line_of: impl Fn(usize) -> usize) -> Vec<RowIssue> {
    let key = |r: &InteractionRecord| -> u128 {
        let session = match r.session {
            Some(s) => u128::from(s) + 1,
            None => 0,
        };
        (session << 72) | (u128::from(r.user) << 40) | (u128::from(r.item) << 8) | u128::from(r.treatment)
    };
    let mut keys: Vec<u128> = records.iter().map(key).collect();
    keys.sort_unstable();
    let mut dup: Vec<u128> = keys.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
    if dup.is_empty() {
        return Vec::new();
    }
    dup.dedup();
    drop(keys);
    let mut first_seen: BTreeMap<u128, usize> = BTreeMap::new();
    let mut issues = Vec::new();
    for (ix, r) in records.iter().enumerate() {
        let k = key(r);
        if dup.binary_search(&k).is_err() {
            continue;
        }
        match first_seen.get(&k) {
            Some(&first) => issues.push(RowIssue {
                line: line_of(ix),
                reason: format!(
                    "duplicate (user, item, treatment) observation; first seen at row {}",
                    line_of(first)
                ),
            }),
            None => {
                first_seen.insert(k, ix);
            }
        }
    }
    issues
}

/// Incremental ingestion of [`RawRecord`]s with file line numbers.
///
/// Rows failing an invariant are collected rather than aborting, so a single
/// error lists every offending line.
#[derive(Debug)]
pub struct DatasetBuilder {
    schema: Schema,
    users: IdIndex,
    items: IdIndex,
    user_features: Vec<f64>,
    item_features: Vec<f64>,
    records: Vec<InteractionRecord>,
    lines: Vec<usize>,
    issues: Vec<RowIssue>,
}

impl DatasetBuilder {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            users: IdIndex::new(),
            items: IdIndex::new(),
            user_features: Vec::new(),
            item_features: Vec::new(),
            records: Vec::new(),
            lines: Vec::new(),
            issues: Vec::new(),
        }
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn push(&mut self, line: usize, raw: RawRecord) {
        if let Err(reason) = self.try_push(raw) {
            self.issues.push(RowIssue { line, reason });
        } else {
            self.lines.push(line);
        }
    }

    fn try_push(&mut self, raw: RawRecord) -> core::result::Result<(), String> {
        let s = self.schema;
        if let Some(reason) = check_labels(s, raw.treatment, raw.outcome, raw.position, raw.leave_position) {
            return Err(reason);
        }
        if raw.user_features.len() != s.user_features {
            return Err(format!(
                "user feature length {} (header declares {})",
                raw.user_features.len(),
                s.user_features
            ));
        }
        if raw.item_features.len() != s.item_features {
            return Err(format!(
                "item feature length {} (header declares {})",
                raw.item_features.len(),
                s.item_features
            ));
        }
        if raw.user_features.iter().chain(&raw.item_features).any(|x| !x.is_finite()) {
            return Err("non-finite feature value".to_string());
        }
        let user = intern_with_features(
            &mut self.users,
            &mut self.user_features,
            s.user_features,
            raw.user_id,
            &raw.user_features,
            "user",
        )?;
        let item = intern_with_features(
            &mut self.items,
            &mut self.item_features,
            s.item_features,
            raw.item_id,
            &raw.item_features,
            "item",
        )?;
        self.records.push(InteractionRecord {
            user,
            item,
            treatment: raw.treatment,
            outcome: raw.outcome,
            position: raw.position,
            leave_position: raw.leave_position,
            session: raw.session,
            timestamp: raw.timestamp,
        });
        Ok(())
    }

    /// Records a parse failure that happened before a [`RawRecord`] existed.
    pub fn reject(&mut self, line: usize, reason: String) {
        self.issues.push(RowIssue { line, reason });
    }

    pub fn finish(self) -> Result<Dataset> {
        let mut issues = self.issues;
        let lines = self.lines;
        issues.extend(duplicate_issues(&self.records, |ix| lines[ix]));
        if !issues.is_empty() {
            issues.sort_by_key(|i| i.line);
            return Err(Error::Validation(issues));
        }
        Dataset::from_parts(
            self.schema,
            self.users,
            self.items,
            self.user_features,
            self.item_features,
            self.records,
        )
    }
}

fn intern_with_features(
    index: &mut IdIndex,
    table: &mut Vec<f64>,
    width: usize,
    id: String,
    features: &[f64],
    kind: &str,
) -> core::result::Result<u32, String> {
    if let Some(ix) = index.get(&id) {
        let stored = &table[ix as usize * width..(ix as usize + 1) * width];
        if stored != features {
            return Err(format!("{kind} {id:?} has features that differ from its first occurrence"));
        }
        return Ok(ix);
    }
    let (ix, _) = index.intern(id);
    table.extend_from_slice(features);
    Ok(ix)
}

/// Splits a log into disjoint `(train, test)` sides sharing the parent's
/// indices.
pub fn split_by_time(ds: &Dataset, boundary: SplitBoundary) -> Result<(Dataset, Dataset)> {
    let (train, test): (Vec<_>, Vec<_>) = match boundary {
        SplitBoundary::Timestamp(t) => {
            if ds.records.iter().any(|r| r.timestamp.is_none()) {
                return Err(Error::InvalidConfig(
                    "timestamp boundary requires every record to carry a timestamp".to_string(),
                ));
            }
            ds.records.iter().partition(|r| r.timestamp.is_some_and(|s| s <= t))
        }
        SplitBoundary::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("split fraction {f} outside [0, 1]")));
            }
            let mut ordered = ds.records.clone();
            let stamped = ordered.iter().all(|r| r.timestamp.is_some());
            if stamped {
                ordered.sort_by_key(|r| r.timestamp);
            }
            let mut cut = libm::floor(f * ordered.len() as f64) as usize;
            if stamped && cut > 0 {
                // keep a tie block on the train side so train precedes test
                let last = ordered[cut - 1].timestamp;
                while cut < ordered.len() && ordered[cut].timestamp == last {
                    cut += 1;
                }
            }
            let test = ordered.split_off(cut);
            (ordered, test)
        }
    };
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok((ds.with_records(train), ds.with_records(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn raw(user: &str, item: &str, t: u8, y: u8, pos: Option<u32>, leave: Option<u32>) -> RawRecord {
        RawRecord {
            user_id: user.into(),
            item_id: item.into(),
            treatment: t,
            outcome: y,
            position: pos,
            leave_position: leave,
            session: None,
            timestamp: None,
            user_features: vec![0.5],
            item_features: vec![1.0, 2.0],
        }
    }

    #[test]
    fn three_valid_rows_infer_dimensions() {
        let mut b = DatasetBuilder::new(Schema::binary(1, 2));
        b.push(2, raw("alice", "shoe", 1, 1, Some(1), Some(3)));
        b.push(3, raw("bob", "shoe", 0, 0, Some(5), Some(3)));
        b.push(4, raw("alice", "hat", 0, 1, None, None));
        let ds = b.finish().unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.users().id(1), Some("bob"));
        assert_eq!(ds.items().get("hat"), Some(1));
    }

    #[test]
    fn inconsistent_treatment_names_the_row() {
        let mut b = DatasetBuilder::new(Schema::binary(1, 2));
        b.push(2, raw("a", "x", 1, 1, Some(2), Some(3)));
        b.push(3, raw("a", "y", 1, 0, Some(7), Some(3)));
        match b.finish() {
            Err(Error::Validation(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 3);
                assert!(issues[0].reason.contains("inconsistent"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let mut b = DatasetBuilder::new(Schema::binary(1, 2));
        b.push(2, raw("a", "x", 0, 1, None, None));
        b.push(3, raw("a", "x", 1, 0, None, None));
        b.push(4, raw("a", "x", 0, 0, None, None));
        match b.finish() {
            Err(Error::Validation(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 4);
                assert!(issues[0].reason.contains("row 2"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_triple_in_distinct_sessions_is_allowed() {
        let mut b = DatasetBuilder::new(Schema::binary(1, 2));
        let mut r1 = raw("a", "x", 1, 1, Some(1), Some(2));
        r1.session = Some(0);
        let mut r2 = r1.clone();
        r2.session = Some(1);
        b.push(2, r1.clone());
        b.push(3, r2);
        assert!(b.finish().is_ok());

        let mut b = DatasetBuilder::new(Schema::binary(1, 2));
        b.push(2, r1.clone());
        b.push(3, r1);
        assert!(matches!(b.finish(), Err(Error::Validation(_))));
    }

    #[test]
    fn conflicting_features_and_bad_labels() {
        let mut b = DatasetBuilder::new(Schema::binary(1, 2));
        b.push(2, raw("a", "x", 0, 1, None, None));
        let mut r = raw("a", "y", 0, 1, None, None);
        r.user_features = vec![9.0];
        b.push(3, r);
        b.push(4, raw("b", "y", 2, 1, None, None));
        b.push(5, raw("c", "y", 0, 3, None, None));
        let mut short = raw("d", "z", 0, 0, None, None);
        short.item_features = vec![1.0];
        b.push(6, short);
        match b.finish() {
            Err(Error::Validation(issues)) => {
                let lines: Vec<_> = issues.iter().map(|i| i.line).collect();
                assert_eq!(lines, vec![3, 4, 5, 6]);
            }
            other => panic!("{other:?}"),
        }
    }

    fn stamped(n: usize) -> Dataset {
        let users = IdIndex::from_ids(["u"]);
        let items = IdIndex::from_ids((0..n).map(|i| format!("i{i}")));
        let records = (0..n)
            .map(|i| InteractionRecord {
                user: 0,
                item: i as u32,
                treatment: (i % 2) as u8,
                outcome: 0,
                position: None,
                leave_position: None,
                session: None,
                timestamp: Some(1 + (i as u32 * 7) / n as u32),
            })
            .collect();
        Dataset::from_parts(Schema::binary(0, 0), users, items, vec![], vec![], records).unwrap()
    }

    #[test]
    fn fraction_split_preserves_order() {
        let mut ds = stamped(10);
        ds.records.iter_mut().for_each(|r| r.timestamp = None);
        let (train, test) = split_by_time(&ds, SplitBoundary::Fraction(0.7)).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert_eq!(train.records(), &ds.records()[..7]);
        assert_eq!(test.records(), &ds.records()[7..]);
    }

    #[test]
    fn degenerate_fractions_fail() {
        let ds = stamped(10);
        assert_eq!(split_by_time(&ds, SplitBoundary::Fraction(0.0)), Err(Error::EmptySplit("train")));
        assert_eq!(split_by_time(&ds, SplitBoundary::Fraction(1.0)), Err(Error::EmptySplit("test")));
    }

    #[test]
    fn timestamp_split_and_stamped_fraction_keep_time_order() {
        let ds = stamped(70);
        let (train, test) = split_by_time(&ds, SplitBoundary::Timestamp(6)).unwrap();
        assert!(train.records().iter().all(|r| r.timestamp.unwrap() <= 6));
        assert!(test.records().iter().all(|r| r.timestamp == Some(7)));
        assert_eq!(train.len() + test.len(), 70);

        let (train, test) = split_by_time(&ds, SplitBoundary::Fraction(0.33)).unwrap();
        let last_train = train.records().iter().filter_map(|r| r.timestamp).max().unwrap();
        let first_test = test.records().iter().filter_map(|r| r.timestamp).min().unwrap();
        assert!(last_train < first_test);
    }

    #[test]
    fn cells_aggregate_counts() {
        let users = IdIndex::from_ids(["a", "b"]);
        let items = IdIndex::from_ids(["x"]);
        let rec = |u, t, y, s| InteractionRecord {
            user: u,
            item: 0,
            treatment: t,
            outcome: y,
            position: None,
            leave_position: None,
            session: Some(s),
            timestamp: None,
        };
        let ds = Dataset::from_parts(
            Schema::binary(0, 0),
            users,
            items,
            vec![],
            vec![],
            vec![rec(1, 0, 1, 0), rec(0, 1, 1, 0), rec(1, 0, 0, 1), rec(1, 0, 1, 2)],
        )
        .unwrap();
        let cells = ds.observed_cells();
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[0].user, cells[0].treatment, cells[0].count, cells[0].positives), (0, 1, 1, 1));
        assert_eq!((cells[1].user, cells[1].treatment, cells[1].count, cells[1].positives), (1, 0, 3, 2));
    }
}
