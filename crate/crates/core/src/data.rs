//! Interaction datasets: loading, k-core filtering and leave-one-out splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One implicit-feedback event, optionally carrying review and image references.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    #[serde(rename = "user")]
    pub user_id: String,
    #[serde(rename = "item")]
    pub item_id: String,
    #[serde(rename = "ts")]
    pub timestamp: u64,
    #[serde(default)]
    pub review_id: Option<String>,
    #[serde(default)]
    pub image_id: Option<String>,
}

/// Contiguous integer ids for item strings, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemVocab {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl ItemVocab {
    pub fn new(mut ids: Vec<String>) -> Self {
        ids.sort();
        ids.dedup();
        let lookup = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        ItemVocab { ids, lookup }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, item: &str) -> Option<usize> {
        self.lookup.get(item).copied()
    }

    pub fn try_index(&self, item: &str) -> Result<usize> {
        self.index(item).ok_or_else(|| Error::UnknownItem(item.to_string()))
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    interactions: Vec<Interaction>,
    user_index: BTreeMap<String, Vec<usize>>,
    item_index: BTreeMap<String, Vec<usize>>,
    item_vocab: ItemVocab,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.interactions == other.interactions && self.item_vocab == other.item_vocab
    }
}

impl Dataset {
    /// Build indexes over `interactions`. Duplicate `(user, item, timestamp)`
    /// triples keep their first occurrence.
    pub fn new(interactions: Vec<Interaction>) -> Result<Self> {
        let vocab = ItemVocab::new(interactions.iter().map(|i| i.item_id.clone()).collect());
        let ds = Self::with_vocab(interactions, vocab)?;
        if ds.interactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if ds.item_vocab.len() < 2 {
            return Err(Error::TooFewItems(ds.item_vocab.len()));
        }
        Ok(ds)
    }

    /// Build over an externally owned vocabulary (used for split views).
    pub fn with_vocab(interactions: Vec<Interaction>, item_vocab: ItemVocab) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(interactions.len());
        for it in interactions {
            if it.user_id.is_empty() || it.item_id.is_empty() {
                return Err(Error::Parse {
                    line: kept.len() + 1,
                    message: "user and item ids must be non-empty".into(),
                });
            }
            item_vocab.try_index(&it.item_id)?;
            if seen.insert((it.user_id.clone(), it.item_id.clone(), it.timestamp)) {
                kept.push(it);
            }
        }

        let mut user_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut item_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, it) in kept.iter().enumerate() {
            user_index.entry(it.user_id.clone()).or_default().push(pos);
            item_index.entry(it.item_id.clone()).or_default().push(pos);
        }
        // stable: ties keep input order
        for positions in user_index.values_mut() {
            positions.sort_by_key(|&p| kept[p].timestamp);
        }
        for positions in item_index.values_mut() {
            positions.sort_by_key(|&p| kept[p].timestamp);
        }
        Ok(Dataset {
            interactions: kept,
            user_index,
            item_index,
            item_vocab,
        })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn vocab(&self) -> &ItemVocab {
        &self.item_vocab
    }

    pub fn num_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_vocab.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    /// Interactions of `user` in chronological order.
    pub fn user_history(&self, user: &str) -> Vec<&Interaction> {
        self.user_index
            .get(user)
            .map(|ps| ps.iter().map(|&p| &self.interactions[p]).collect())
            .unwrap_or_default()
    }

    /// Interactions with `item` in chronological order.
    pub fn item_history(&self, item: &str) -> Vec<&Interaction> {
        self.item_index
            .get(item)
            .map(|ps| ps.iter().map(|&p| &self.interactions[p]).collect())
            .unwrap_or_default()
    }

    /// Iteratively drop users and items with fewer than `k` interactions
    /// until every survivor meets the threshold.
    pub fn k_core_filter(&self, k: usize) -> Result<Dataset> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut alive = vec![true; self.interactions.len()];
        loop {
            let mut user_count: HashMap<&str, usize> = HashMap::new();
            let mut item_count: HashMap<&str, usize> = HashMap::new();
            for (it, _) in self.interactions.iter().zip(&alive).filter(|(_, a)| **a) {
                *user_count.entry(&it.user_id).or_default() += 1;
                *item_count.entry(&it.item_id).or_default() += 1;
            }
            let mut changed = false;
            for (it, a) in self.interactions.iter().zip(alive.iter_mut()) {
                if *a && (user_count[it.user_id.as_str()] < k || item_count[it.item_id.as_str()] < k)
                {
                    *a = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let kept: Vec<Interaction> = self
            .interactions
            .iter()
            .zip(&alive)
            .filter(|(_, a)| **a)
            .map(|(it, _)| it.clone())
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyAfterFilter { k });
        }
        Dataset::new(kept)
    }

    /// Leave-one-out split: last interaction is the test target, second to
    /// last the validation target, the rest is training history. Users with
    /// fewer than three interactions are dropped and counted.
    pub fn chronological_split(&self) -> Result<SplitDataset> {
        let vocab = self.item_vocab.clone();
        let mut histories = Vec::new();
        let mut dropped = 0;
        for (user, positions) in &self.user_index {
            if positions.len() < 3 {
                dropped += 1;
                continue;
            }
            let events = positions
                .iter()
                .map(|&p| {
                    let it = &self.interactions[p];
                    Event {
                        item: vocab.try_index(&it.item_id).expect("indexed item"),
                        timestamp: it.timestamp,
                        review_id: it.review_id.clone(),
                        image_id: it.image_id.clone(),
                    }
                })
                .collect();
            histories.push(UserHistory {
                user: user.clone(),
                events,
            });
        }
        if histories.is_empty() {
            return Err(Error::Split(format!(
                "no user has at least 3 interactions ({dropped} dropped)"
            )));
        }

        let mut train = Vec::new();
        let mut validation = Vec::new();
        let mut test = Vec::new();
        for positions in self.user_index.values() {
            if positions.len() < 3 {
                continue;
            }
            let n = positions.len();
            for (k, &p) in positions.iter().enumerate() {
                let it = self.interactions[p].clone();
                match n - k {
                    1 => test.push(it),
                    2 => validation.push(it),
                    _ => train.push(it),
                }
            }
        }

        Ok(SplitDataset {
            train: Dataset::with_vocab(train, vocab.clone())?,
            validation: Dataset::with_vocab(validation, vocab.clone())?,
            test: Dataset::with_vocab(test, vocab.clone())?,
            vocab,
            histories,
            dropped_users: dropped,
        })
    }
}

/// Parse the JSON-lines interaction format.
pub fn load_interactions(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut interactions = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let it: Interaction = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if it.user_id.is_empty() || it.item_id.is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                message: "user and item ids must be non-empty".into(),
            });
        }
        interactions.push(it);
    }
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(interactions)
}

pub fn write_interactions(interactions: &[Interaction], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in interactions {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One interaction of a user history with its item resolved to a vocab index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub item: usize,
    pub timestamp: u64,
    pub review_id: Option<String>,
    pub image_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserHistory {
    pub user: String,
    pub events: Vec<Event>,
}

impl UserHistory {
    /// Training segment: everything but the last two events.
    pub fn train(&self) -> &[Event] {
        &self.events[..self.events.len() - 2]
    }
}

/// A held-out prediction: the chronological context and the item that follows.
#[derive(Clone, Copy, Debug)]
pub struct Holdout<'a> {
    pub user: &'a str,
    pub context: &'a [Event],
    pub target: &'a Event,
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    vocab: ItemVocab,
    histories: Vec<UserHistory>,
    dropped_users: usize,
}

impl SplitDataset {
    pub fn vocab(&self) -> &ItemVocab {
        &self.vocab
    }

    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    pub fn histories(&self) -> &[UserHistory] {
        &self.histories
    }

    pub fn history(&self, user: &str) -> Option<&UserHistory> {
        self.histories.iter().find(|h| h.user == user)
    }

    pub fn dropped_users(&self) -> usize {
        self.dropped_users
    }

    /// Validation targets, context = training segment.
    pub fn validation_holdouts(&self) -> Vec<Holdout<'_>> {
        self.histories
            .iter()
            .map(|h| {
                let n = h.events.len();
                Holdout {
                    user: &h.user,
                    context: &h.events[..n - 2],
                    target: &h.events[n - 2],
                }
            })
            .collect()
    }

    /// Test targets, context = training segment plus the validation item.
    pub fn test_holdouts(&self) -> Vec<Holdout<'_>> {
        self.histories
            .iter()
            .map(|h| {
                let n = h.events.len();
                Holdout {
                    user: &h.user,
                    context: &h.events[..n - 1],
                    target: &h.events[n - 1],
                }
            })
            .collect()
    }

    /// Every next-item prediction inside the training segments.
    pub fn train_holdouts(&self) -> Vec<Holdout<'_>> {
        let mut out = Vec::new();
        for h in &self.histories {
            let train = h.train();
            for t in 1..train.len() {
                out.push(Holdout {
                    user: &h.user,
                    context: &train[..t],
                    target: &train[t],
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn it(user: &str, item: &str, ts: u64) -> Interaction {
        Interaction {
            user_id: user.into(),
            item_id: item.into(),
            timestamp: ts,
            review_id: None,
            image_id: None,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_three_lines_two_users() {
        let f = write_lines(&[
            r#"{"user":"u1","item":"a","ts":1,"review_id":"r1","image_id":null}"#,
            r#"{"user":"u1","item":"b","ts":2,"review_id":null,"image_id":"g2"}"#,
            r#"{"user":"u2","item":"a","ts":3,"review_id":null,"image_id":null}"#,
        ]);
        let ds = load_interactions(f.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 2);
        assert_eq!(ds.interactions()[0].review_id.as_deref(), Some("r1"));
    }

    #[test]
    fn missing_item_field_names_line() {
        let f = write_lines(&[r#"{"user":"u1","ts":1}"#]);
        match load_interactions(f.path()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("item"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_lines(&[]);
        assert!(matches!(load_interactions(f.path()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn negative_timestamp_rejected() {
        let f = write_lines(&[r#"{"user":"u1","item":"a","ts":-4}"#]);
        assert!(matches!(load_interactions(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_triples_are_deduplicated() {
        let f = write_lines(&[
            r#"{"user":"u1","item":"a","ts":1,"review_id":"first"}"#,
            r#"{"user":"u1","item":"a","ts":1,"review_id":"second"}"#,
            r#"{"user":"u1","item":"b","ts":2}"#,
        ]);
        let ds = load_interactions(f.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.interactions()[0].review_id.as_deref(), Some("first"));
    }

    #[test]
    fn k_core_drops_sparse_user() {
        let mut v = Vec::new();
        for u in 0..5 {
            for i in 0..5 {
                v.push(it(&format!("u{u}"), &format!("i{i}"), i));
            }
        }
        // four interactions only
        for i in 0..4 {
            v.push(it("sparse", &format!("i{i}"), 10 + i));
        }
        let ds = Dataset::new(v).unwrap();
        let f = ds.k_core_filter(5).unwrap();
        assert_eq!(f.num_users(), 5);
        assert!(f.user_history("sparse").is_empty());
    }

    #[test]
    fn k_core_cascades_to_fixpoint() {
        // k = 2. Hand trace: u3 has one interaction -> removed. That leaves
        // item c with only u2 -> removed. Then u2 has only b -> removed, and
        // b keeps only u1 -> removed. u1 ends with a single interaction on a,
        // so everything collapses.
        let ds = Dataset::new(vec![
            it("u1", "a", 1),
            it("u1", "b", 2),
            it("u2", "b", 1),
            it("u2", "c", 2),
            it("u3", "c", 1),
        ])
        .unwrap();
        assert!(matches!(ds.k_core_filter(2), Err(Error::EmptyAfterFilter { k: 2 })));

        // Same chain plus a 2-core block {u4, u5} x {a, d} that survives.
        let ds = Dataset::new(vec![
            it("u1", "a", 1),
            it("u1", "b", 2),
            it("u2", "b", 1),
            it("u2", "c", 2),
            it("u3", "c", 1),
            it("u4", "a", 1),
            it("u4", "d", 2),
            it("u5", "a", 1),
            it("u5", "d", 2),
        ])
        .unwrap();
        let f = ds.k_core_filter(2).unwrap();
        // u1 keeps a (count 3 with u4,u5) but drops b, leaving it at 1 -> removed,
        // then a falls back to 2 and survives.
        let users: Vec<&str> = f.users().collect();
        assert_eq!(users, vec!["u4", "u5"]);
        assert_eq!(f.vocab().ids(), &["a".to_string(), "d".to_string()]);
    }

    #[test]
    fn k_one_is_identity() {
        let ds = Dataset::new(vec![it("u1", "a", 1), it("u2", "b", 1), it("u2", "a", 3)]).unwrap();
        assert_eq!(ds.k_core_filter(1).unwrap(), ds);
    }

    #[test]
    fn split_leave_one_out() {
        let ds = Dataset::new(vec![
            it("u", "d", 4),
            it("u", "a", 1),
            it("u", "c", 3),
            it("u", "b", 2),
            it("short", "a", 1),
            it("short", "b", 2),
        ])
        .unwrap();
        let s = ds.chronological_split().unwrap();
        assert_eq!(s.dropped_users(), 1);
        let v = s.vocab().clone();
        let h = s.history("u").unwrap();
        let items = |evs: &[Event]| evs.iter().map(|e| v.id(e.item).to_string()).collect::<Vec<_>>();
        assert_eq!(items(h.train()), vec!["a", "b"]);
        let val = &s.validation_holdouts()[0];
        assert_eq!(items(val.context), vec!["a", "b"]);
        assert_eq!(v.id(val.target.item), "c");
        let test = &s.test_holdouts()[0];
        assert_eq!(items(test.context), vec!["a", "b", "c"]);
        assert_eq!(v.id(test.target.item), "d");
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.validation.len(), 1);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn split_ties_follow_input_order() {
        let ds = Dataset::new(vec![
            it("u", "x", 5),
            it("u", "y", 5),
            it("u", "z", 5),
        ])
        .unwrap();
        let s = ds.chronological_split().unwrap();
        let h = s.history("u").unwrap();
        let names: Vec<&str> = h.events.iter().map(|e| s.vocab().id(e.item)).collect();
        assert_eq!(names, vec!["x", "y", "z"]);
    }

    #[test]
    fn split_without_eligible_users_fails() {
        let ds = Dataset::new(vec![it("u", "a", 1), it("u", "b", 2)]).unwrap();
        assert!(matches!(ds.chronological_split(), Err(Error::Split(_))));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        prop::collection::vec((0u8..12, 0u8..10, 0u64..50), 2..150).prop_filter_map(
            "needs two items",
            |rows| {
                let v = rows
                    .into_iter()
                    .map(|(u, i, t)| it(&format!("u{u}"), &format!("i{i}"), t))
                    .collect();
                Dataset::new(v).ok()
            },
        )
    }

    fn user_item_sets(d: &Dataset) -> (HashSet<String>, HashSet<String>) {
        (
            d.users().map(String::from).collect(),
            d.vocab().ids().iter().cloned().collect(),
        )
    }

    proptest! {
        #[test]
        fn k_core_is_idempotent(ds in arb_dataset(), k in 1usize..5) {
            if let Ok(once) = ds.k_core_filter(k) {
                prop_assert_eq!(once.k_core_filter(k).unwrap(), once);
            }
        }

        #[test]
        fn k_core_is_monotone(ds in arb_dataset(), k1 in 1usize..4, dk in 0usize..3) {
            let k2 = k1 + dk;
            if let Ok(hi) = ds.k_core_filter(k2) {
                let lo = ds.k_core_filter(k1).unwrap();
                let (hu, hi_items) = user_item_sets(&hi);
                let (lu, lo_items) = user_item_sets(&lo);
                prop_assert!(hu.is_subset(&lu));
                prop_assert!(hi_items.is_subset(&lo_items));
            }
        }

        #[test]
        fn k_core_meets_threshold(ds in arb_dataset(), k in 1usize..5) {
            if let Ok(f) = ds.k_core_filter(k) {
                for u in f.users() {
                    prop_assert!(f.user_history(u).len() >= k);
                }
                for i in f.vocab().ids() {
                    prop_assert!(f.item_history(i).len() >= k);
                }
            }
        }

        #[test]
        fn split_partitions_each_user(ds in arb_dataset()) {
            if let Ok(s) = ds.chronological_split() {
                for h in s.histories() {
                    let orig = ds.user_history(&h.user);
                    prop_assert_eq!(orig.len(), h.events.len());
                    let n = h.events.len();
                    let train_n = s.train.user_history(&h.user).len();
                    let val_n = s.validation.user_history(&h.user).len();
                    let test_n = s.test.user_history(&h.user).len();
                    prop_assert_eq!((train_n, val_n, test_n), (n - 2, 1, 1));
                    for w in h.events.windows(2) {
                        prop_assert!(w[0].timestamp <= w[1].timestamp);
                    }
                }
                let total = s.train.len() + s.validation.len() + s.test.len();
                let retained: usize = s.histories().iter().map(|h| h.events.len()).sum();
                prop_assert_eq!(total, retained);
            }
        }
    }
}
