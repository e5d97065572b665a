//! Interaction-log ingestion, filtering, chronological splitting, and
//! negative sampling.
//!
//! The on-disk lifecycle: raw log (TSV / CSV / "::"-delimited) → deduped
//! dataset with dense vocabularies → min-interaction filter → leave-two-out
//! split → canonical file that later pipeline stages reload byte-for-byte.

pub mod synth;

use crate::error::{Error, Result};
use crate::seed::{derive_seed, Stream};
use crate::types::{Interaction, ItemId, LabeledExample, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Magic prefix of the canonical dataset file's header line.
pub const CANONICAL_MAGIC: &str = "#recaudit-dataset-v1";

/// Source log encodings accepted by [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Tsv,
    Csv,
    /// MovieLens `.dat` files: fields separated by `"::"`.
    MovielensDat,
}

impl SourceFormat {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            SourceFormat::Tsv => line.split('\t').collect(),
            SourceFormat::Csv => line.split(',').collect(),
            SourceFormat::MovielensDat => line.split("::").collect(),
        }
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(SourceFormat::Tsv),
            "csv" => Ok(SourceFormat::Csv),
            "movielens-dat" | "dat" => Ok(SourceFormat::MovielensDat),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format `{other}` (expected tsv, csv, or movielens-dat)"
            ))),
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SourceFormat::Tsv => "tsv",
            SourceFormat::Csv => "csv",
            SourceFormat::MovielensDat => "movielens-dat",
        };
        f.write_str(s)
    }
}

/// One deduplicated interaction row with dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub user: UserId,
    pub item: ItemId,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

/// Leave-two-out split: indices into the dataset's record list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Training records in input order; position in this list is the
    /// interaction's stable index for membership bookkeeping.
    pub train: Vec<u32>,
    /// Per user: the second-most-recent record (validation holdout).
    pub val_of_user: Vec<u32>,
    /// Per user: the most recent record (test holdout).
    pub test_of_user: Vec<u32>,
}

/// A deduplicated interaction log with dense user/item vocabularies and,
/// once [`InteractionDataset::split_leave_two_out`] has run, a per-user
/// chronological holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    records: Vec<Record>,
    split: Option<Split>,
}

/// Read and parse a raw interaction log.
///
/// Rows are `user,item,rating,timestamp` in the given format; three-field
/// rows are read as `user,item,timestamp` and two-field rows as bare
/// `user,item`. `-` or an empty field means "absent". Lines starting with
/// `#` are skipped, which lets canonical files re-ingest through this
/// entry point. Duplicate (user, item) pairs collapse to one record
/// carrying the latest timestamp.
pub fn ingest(path: &Path, format: SourceFormat) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path)?;
    ingest_str(&text, format).map_err(|e| match e {
        Error::EmptyDataset(_) => Error::EmptyDataset(path.display().to_string()),
        other => other,
    })
}

/// [`ingest`] over an in-memory string; line numbers in errors are 1-based.
pub fn ingest_str(text: &str, format: SourceFormat) -> Result<InteractionDataset> {
    let mut user_keys: Vec<String> = Vec::new();
    let mut item_keys: Vec<String> = Vec::new();
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut records: Vec<Record> = Vec::new();
    let mut by_pair: HashMap<(u32, u32), usize> = HashMap::new();

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = format.split(line);
        let parse_err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let (user_key, item_key, rating_s, timestamp_s) = match fields.as_slice() {
            [u, i] => (*u, *i, "", ""),
            [u, i, t] => (*u, *i, "", *t),
            [u, i, r, t] => (*u, *i, *r, *t),
            _ => {
                return Err(parse_err(format!(
                    "expected 2-4 fields, found {}",
                    fields.len()
                )))
            }
        };
        if user_key.is_empty() || item_key.is_empty() {
            return Err(parse_err("empty user or item key".into()));
        }
        let rating = match rating_s {
            "" | "-" => None,
            s => {
                let r: f64 = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad rating `{s}`")))?;
                if !(1.0..=5.0).contains(&r) {
                    return Err(parse_err(format!("rating {r} outside [1,5]")));
                }
                Some(r)
            }
        };
        let timestamp = match timestamp_s {
            "" | "-" => None,
            s => Some(
                s.parse::<i64>()
                    .map_err(|_| parse_err(format!("bad timestamp `{s}`")))?,
            ),
        };

        let uid = *user_ids.entry(user_key.to_string()).or_insert_with(|| {
            user_keys.push(user_key.to_string());
            (user_keys.len() - 1) as u32
        });
        let iid = *item_ids.entry(item_key.to_string()).or_insert_with(|| {
            item_keys.push(item_key.to_string());
            (item_keys.len() - 1) as u32
        });

        let record = Record {
            user: UserId(uid),
            item: ItemId(iid),
            rating,
            timestamp,
        };
        match by_pair.entry((uid, iid)) {
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(records.len());
                records.push(record);
            }
            std::collections::hash_map::Entry::Occupied(o) => {
                // Later timestamp wins; equal timestamps defer to the later row.
                let slot = &mut records[*o.get()];
                let old_t = slot.timestamp.unwrap_or(i64::MIN);
                let new_t = record.timestamp.unwrap_or(i64::MIN);
                if new_t >= old_t {
                    *slot = record;
                }
            }
        }
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset("<input>".into()));
    }
    Ok(InteractionDataset {
        user_keys,
        item_keys,
        records,
        split: None,
    })
}

impl InteractionDataset {
    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn user_key(&self, user: UserId) -> &str {
        &self.user_keys[user.index()]
    }

    pub fn item_key(&self, item: ItemId) -> &str {
        &self.item_keys[item.index()]
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    /// Per-user record indices, in input order.
    fn records_by_user(&self) -> Vec<Vec<u32>> {
        let mut rows = vec![Vec::new(); self.num_users()];
        for (idx, r) in self.records.iter().enumerate() {
            rows[r.user.index()].push(idx as u32);
        }
        rows
    }

    /// Drop every user with `min_count` or fewer interactions, then
    /// recompact both vocabularies in first-appearance order. Any existing
    /// split is discarded (filtering is a pre-split operation).
    pub fn filter_min_interactions(&self, min_count: usize) -> InteractionDataset {
        let mut counts = vec![0usize; self.num_users()];
        for r in &self.records {
            counts[r.user.index()] += 1;
        }
        let mut user_map: HashMap<u32, u32> = HashMap::new();
        let mut item_map: HashMap<u32, u32> = HashMap::new();
        let mut user_keys = Vec::new();
        let mut item_keys = Vec::new();
        let mut records = Vec::new();
        for r in &self.records {
            if counts[r.user.index()] <= min_count {
                continue;
            }
            let uid = *user_map.entry(r.user.0).or_insert_with(|| {
                user_keys.push(self.user_keys[r.user.index()].clone());
                (user_keys.len() - 1) as u32
            });
            let iid = *item_map.entry(r.item.0).or_insert_with(|| {
                item_keys.push(self.item_keys[r.item.index()].clone());
                (item_keys.len() - 1) as u32
            });
            records.push(Record {
                user: UserId(uid),
                item: ItemId(iid),
                ..r.clone()
            });
        }
        InteractionDataset {
            user_keys,
            item_keys,
            records,
            split: None,
        }
    }

    /// Chronological leave-two-out holdout: per user the most recent record
    /// becomes test, the second-most-recent validation, everything else
    /// train. Timestamp ties keep input order.
    pub fn split_leave_two_out(mut self) -> Result<InteractionDataset> {
        let rows = self.records_by_user();
        let mut val_of_user = vec![0u32; self.num_users()];
        let mut test_of_user = vec![0u32; self.num_users()];
        let mut holdout = vec![false; self.records.len()];
        for (u, row) in rows.iter().enumerate() {
            if row.len() < 3 {
                return Err(Error::TooFewInteractions {
                    user: self.user_keys[u].clone(),
                    count: row.len(),
                    required: 3,
                });
            }
            let mut ordered = row.clone();
            for &idx in &ordered {
                if self.records[idx as usize].timestamp.is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "user `{}` has interactions without timestamps; chronological split needs them",
                        self.user_keys[u]
                    )));
                }
            }
            ordered.sort_by_key(|&idx| (self.records[idx as usize].timestamp.unwrap(), idx));
            let test = ordered[ordered.len() - 1];
            let val = ordered[ordered.len() - 2];
            val_of_user[u] = val;
            test_of_user[u] = test;
            holdout[val as usize] = true;
            holdout[test as usize] = true;
        }
        let train = (0..self.records.len() as u32)
            .filter(|&i| !holdout[i as usize])
            .collect();
        self.split = Some(Split {
            train,
            val_of_user,
            test_of_user,
        });
        Ok(self)
    }

    /// Training interactions in stable order (the membership-index order).
    pub fn train_interactions(&self) -> Result<Vec<Interaction>> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no split yet".into()))?;
        Ok(split
            .train
            .iter()
            .map(|&i| {
                let r = &self.records[i as usize];
                Interaction {
                    user: r.user,
                    item: r.item,
                    timestamp: r.timestamp.unwrap_or(0),
                }
            })
            .collect())
    }

    /// The validation and test items held out for one user.
    pub fn holdout_items(&self, user: UserId) -> Option<(ItemId, ItemId)> {
        let split = self.split.as_ref()?;
        let val = self.records[split.val_of_user[user.index()] as usize].item;
        let test = self.records[split.test_of_user[user.index()] as usize].item;
        Some((val, test))
    }

    /// Per-user sorted item lists over the train split only.
    pub fn train_items_by_user(&self) -> Result<Vec<Vec<u32>>> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no split yet".into()))?;
        let mut sets = vec![Vec::new(); self.num_users()];
        for &i in &split.train {
            let r = &self.records[i as usize];
            sets[r.user.index()].push(r.item.0);
        }
        for s in &mut sets {
            s.sort_unstable();
        }
        Ok(sets)
    }

    /// Per-user sorted item lists over *all* observed interactions.
    pub fn observed_items_by_user(&self) -> Vec<Vec<u32>> {
        let mut sets = vec![Vec::new(); self.num_users()];
        for r in &self.records {
            sets[r.user.index()].push(r.item.0);
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        sets
    }

    /// Draw `ratio` negatives per training positive, per user, without
    /// replacement, avoiding every item the user has observed anywhere in
    /// the dataset. Runs after the split. Output order: users ascending,
    /// each user's negatives in draw order.
    pub fn sample_negatives(&self, ratio: usize, seed: u64) -> Result<Vec<LabeledExample>> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no split yet".into()))?;
        if ratio == 0 {
            return Err(Error::InvalidArgument("negative ratio must be >= 1".into()));
        }
        let mut train_count = vec![0usize; self.num_users()];
        for &i in &split.train {
            train_count[self.records[i as usize].user.index()] += 1;
        }
        let observed = self.observed_items_by_user();
        let mut out = Vec::new();
        for u in 0..self.num_users() {
            let need = ratio * train_count[u];
            let items = sample_user_negatives(
                &self.user_keys[u],
                need,
                &observed[u],
                self.num_items(),
                derive_seed(seed, Stream::Negatives, u as u64),
            )?;
            out.extend(items.into_iter().map(|item| LabeledExample {
                user: UserId(u as u32),
                item,
                label: false,
            }));
        }
        Ok(out)
    }

    /// A new dataset keeping only the records where `keep` is true, with
    /// both vocabularies recompacted and no split. Raw keys, ratings, and
    /// timestamps carry over unchanged.
    pub fn subset_by_records(&self, keep: &[bool]) -> Result<InteractionDataset> {
        if keep.len() != self.records.len() {
            return Err(Error::InvalidArgument(format!(
                "keep mask covers {} records, dataset has {}",
                keep.len(),
                self.records.len()
            )));
        }
        let mut text = String::new();
        for (r, record) in self.records.iter().enumerate() {
            if !keep[r] {
                continue;
            }
            let rating = record
                .rating
                .map(|x| format!("{x}"))
                .unwrap_or_else(|| "-".into());
            let ts = record
                .timestamp
                .map(|t| t.to_string())
                .unwrap_or_else(|| "-".into());
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.user_keys[record.user.index()],
                self.item_keys[record.item.index()],
                rating,
                ts
            ));
        }
        ingest_str(&text, SourceFormat::Tsv)
    }

    /// Canonical serialized form: versioned header, then one TSV row per
    /// record using the raw keys. Re-ingesting reproduces the dataset
    /// exactly (ids are first-appearance order, which the row order is).
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{CANONICAL_MAGIC}\tusers={}\titems={}\tinteractions={}\n",
            self.num_users(),
            self.num_items(),
            self.num_interactions()
        ));
        for r in &self.records {
            let rating = r
                .rating
                .map(|x| format!("{x}"))
                .unwrap_or_else(|| "-".into());
            let ts = r
                .timestamp
                .map(|t| t.to_string())
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.user_keys[r.user.index()],
                self.item_keys[r.item.index()],
                rating,
                ts
            ));
        }
        s
    }

    pub fn write_canonical(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_canonical_string().as_bytes())?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_string().as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Load a canonical dataset file, verifying its header against the rows.
pub fn read_canonical(path: &Path) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    if !header.starts_with(CANONICAL_MAGIC) {
        return Err(Error::CorruptFile {
            path: path.display().to_string(),
            message: "missing canonical dataset header".into(),
        });
    }
    let mut expect = HashMap::new();
    for field in header.split('\t').skip(1) {
        if let Some((k, v)) = field.split_once('=') {
            let n: usize = v.parse().map_err(|_| Error::CorruptFile {
                path: path.display().to_string(),
                message: format!("bad header field `{field}`"),
            })?;
            expect.insert(k.to_string(), n);
        }
    }
    let ds = ingest_str(&text, SourceFormat::Tsv).map_err(|e| match e {
        Error::EmptyDataset(_) => Error::EmptyDataset(path.display().to_string()),
        other => other,
    })?;
    for (key, actual) in [
        ("users", ds.num_users()),
        ("items", ds.num_items()),
        ("interactions", ds.num_interactions()),
    ] {
        if let Some(&n) = expect.get(key) {
            if n != actual {
                return Err(Error::CorruptFile {
                    path: path.display().to_string(),
                    message: format!("header says {key}={n}, file has {actual}"),
                });
            }
        }
    }
    Ok(ds)
}

/// Draw `need` distinct items for one user, uniformly from the items *not*
/// in `excluded` (a sorted, deduped list). Deterministic under `seed`.
pub fn sample_user_negatives(
    user_key: &str,
    need: usize,
    excluded: &[u32],
    num_items: usize,
    seed: u64,
) -> Result<Vec<ItemId>> {
    let pool = num_items - excluded.len();
    if pool < need {
        return Err(Error::NegativePoolTooSmall {
            user: user_key.to_string(),
            available: pool,
            required: need,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if need * 2 >= pool {
        // Dense case: materialize the complement and partially shuffle it.
        let mut comp: Vec<u32> = (0..num_items as u32)
            .filter(|i| excluded.binary_search(i).is_err())
            .collect();
        for k in 0..need {
            let j = rng.random_range(k..comp.len());
            comp.swap(k, j);
        }
        comp.truncate(need);
        Ok(comp.into_iter().map(ItemId).collect())
    } else {
        // Sparse case: rejection-sample fresh items.
        let mut chosen: HashSet<u32> = HashSet::with_capacity(need);
        let mut out = Vec::with_capacity(need);
        while out.len() < need {
            let cand = rng.random_range(0..num_items as u32);
            if excluded.binary_search(&cand).is_ok() || !chosen.insert(cand) {
                continue;
            }
            out.push(ItemId(cand));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_text() -> &'static str {
        "u1\ti1\t5\t3\nu1\ti2\t4\t1\nu1\ti3\t-\t2\nu2\ti1\t3\t10\nu2\ti3\t2\t11\nu2\ti2\t1\t12\nu2\ti4\t5\t9\n"
    }

    #[test]
    fn ingest_assigns_ids_by_first_appearance() {
        let ds = ingest_str(toy_text(), SourceFormat::Tsv).unwrap();
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 4);
        assert_eq!(ds.num_interactions(), 7);
        assert_eq!(ds.user_key(UserId(0)), "u1");
        assert_eq!(ds.item_key(ItemId(2)), "i3");
    }

    #[test]
    fn subset_recompacts_and_keeps_fields() {
        let ds = ingest_str(toy_text(), SourceFormat::Tsv).unwrap();
        // Drop all of u1's records; ids recompact, u2 becomes UserId(0).
        let keep: Vec<bool> = ds.records().iter().map(|r| r.user != UserId(0)).collect();
        let sub = ds.subset_by_records(&keep).unwrap();
        assert_eq!(sub.num_users(), 1);
        assert_eq!(sub.num_items(), 4);
        assert_eq!(sub.user_key(UserId(0)), "u2");
        assert_eq!(sub.item_key(ItemId(0)), "i1");
        assert!(sub.split().is_none());
        let r = &sub.records()[1];
        assert_eq!(sub.item_key(r.item), "i3");
        assert_eq!(r.rating, Some(2.0));
        assert_eq!(r.timestamp, Some(11));
        // Keep-everything round-trips; a wrong-length mask is rejected.
        let all = ds.subset_by_records(&[true; 7]).unwrap();
        assert_eq!(all.to_canonical_string(), ds.to_canonical_string());
        assert!(ds.subset_by_records(&[true, false]).is_err());
    }

    #[test]
    fn ingest_dedups_keeping_latest_timestamp() {
        let text = "u\ta\t-\t5\nu\tb\t-\t6\nu\ta\t-\t9\nu\ta\t-\t7\n";
        let ds = ingest_str(text, SourceFormat::Tsv).unwrap();
        assert_eq!(ds.num_interactions(), 2);
        let r = &ds.records()[0];
        assert_eq!(r.item, ItemId(0));
        assert_eq!(r.timestamp, Some(9));
    }

    #[test]
    fn ingest_rejects_bad_rows() {
        let e = ingest_str("u\ti\tnine\t3\n", SourceFormat::Tsv).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = ingest_str("a\tb\t4\t1\nu\ti\t7\t3\n", SourceFormat::Tsv).unwrap_err();
        match e {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("outside"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ingest_str("", SourceFormat::Tsv),
            Err(Error::EmptyDataset(_))
        ));
        assert!(matches!(
            ingest_str("# only comments\n", SourceFormat::Csv),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn ingest_movielens_delimiter() {
        let ds = ingest_str("1::20::5::100\n1::21::3::90\n", SourceFormat::MovielensDat).unwrap();
        assert_eq!(ds.num_interactions(), 2);
        assert_eq!(ds.records()[0].rating, Some(5.0));
    }

    #[test]
    fn filter_keeps_strictly_greater_counts() {
        // u1 has 3, u2 has 4 interactions.
        let ds = ingest_str(toy_text(), SourceFormat::Tsv).unwrap();
        let f = ds.filter_min_interactions(3);
        assert_eq!(f.num_users(), 1);
        assert_eq!(f.user_key(UserId(0)), "u2");
        // Item vocabulary recompacted to u2's items, first-appearance order.
        assert_eq!(f.num_items(), 4);
        assert_eq!(f.item_key(ItemId(0)), "i1");
        assert_eq!(f.item_key(ItemId(3)), "i4");
        // Vacuous filter leaves the dataset unchanged.
        let same = ds.filter_min_interactions(0);
        assert_eq!(same, ds);
        // Idempotence.
        assert_eq!(f.filter_min_interactions(3), f);
    }

    #[test]
    fn split_holds_out_two_most_recent() {
        let ds = ingest_str(toy_text(), SourceFormat::Tsv)
            .unwrap()
            .split_leave_two_out()
            .unwrap();
        let split = ds.split().unwrap();
        // u1 timestamps: i1@3 i2@1 i3@2 -> test i1, val i3, train {i2}.
        assert_eq!(ds.records()[split.test_of_user[0] as usize].item, ItemId(0));
        assert_eq!(ds.records()[split.val_of_user[0] as usize].item, ItemId(2));
        // u2 timestamps: i1@10 i3@11 i2@12 i4@9 -> test i2, val i3.
        assert_eq!(ds.records()[split.test_of_user[1] as usize].item, ItemId(1));
        assert_eq!(ds.records()[split.val_of_user[1] as usize].item, ItemId(2));
        // Train = everything else, in input order.
        let train: Vec<ItemId> = ds
            .train_interactions()
            .unwrap()
            .iter()
            .map(|x| x.item)
            .collect();
        assert_eq!(train, vec![ItemId(1), ItemId(0), ItemId(3)]);
    }

    #[test]
    fn split_ties_follow_input_order() {
        let text = "u\ta\t-\t7\nu\tb\t-\t7\nu\tc\t-\t7\n";
        let ds = ingest_str(text, SourceFormat::Tsv)
            .unwrap()
            .split_leave_two_out()
            .unwrap();
        let split = ds.split().unwrap();
        assert_eq!(ds.records()[split.test_of_user[0] as usize].item, ItemId(2));
        assert_eq!(ds.records()[split.val_of_user[0] as usize].item, ItemId(1));
    }

    #[test]
    fn split_rejects_short_users() {
        let text = "u\ta\t-\t1\nu\tb\t-\t2\nv\ta\t-\t1\nv\tb\t-\t2\nv\tc\t-\t3\n";
        let e = ingest_str(text, SourceFormat::Tsv)
            .unwrap()
            .split_leave_two_out()
            .unwrap_err();
        match e {
            Error::TooFewInteractions { user, count, .. } => {
                assert_eq!(user, "u");
                assert_eq!(count, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negatives_counts_purity_and_determinism() {
        let ds = synth::mia_toy(7).split_leave_two_out().unwrap();
        let negs = ds.sample_negatives(4, 99).unwrap();
        let split = ds.split().unwrap();
        let mut train_count = vec![0usize; ds.num_users()];
        for &i in &split.train {
            train_count[ds.records()[i as usize].user.index()] += 1;
        }
        let mut neg_count = vec![0usize; ds.num_users()];
        let observed = ds.observed_items_by_user();
        let mut seen: HashSet<(u32, u32)> = HashSet::new();
        for n in &negs {
            assert!(!n.label);
            neg_count[n.user.index()] += 1;
            assert!(
                observed[n.user.index()].binary_search(&n.item.0).is_err(),
                "negative collides with observed interaction"
            );
            assert!(seen.insert((n.user.0, n.item.0)), "negative drawn twice");
        }
        for u in 0..ds.num_users() {
            assert_eq!(neg_count[u], 4 * train_count[u]);
        }
        assert_eq!(negs, ds.sample_negatives(4, 99).unwrap());
        assert_ne!(negs, ds.sample_negatives(4, 100).unwrap());
    }

    #[test]
    fn negatives_forced_choice_and_overflow() {
        // Pool of exactly one item.
        let items = sample_user_negatives("u", 1, &[0, 1, 2], 4, 5).unwrap();
        assert_eq!(items, vec![ItemId(3)]);
        let e = sample_user_negatives("u", 2, &[0, 1, 2], 4, 5).unwrap_err();
        assert!(matches!(
            e,
            Error::NegativePoolTooSmall {
                available: 1,
                required: 2,
                ..
            }
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let ds = ingest_str(toy_text(), SourceFormat::Tsv)
            .unwrap()
            .split_leave_two_out()
            .unwrap();
        let text = ds.to_canonical_string();
        let back = ingest_str(&text, SourceFormat::Tsv)
            .unwrap()
            .split_leave_two_out()
            .unwrap();
        assert_eq!(ds, back);
        assert_eq!(ds.content_hash(), back.content_hash());
    }

    #[test]
    fn canonical_header_is_verified() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.tsv");
        let ds = ingest_str(toy_text(), SourceFormat::Tsv).unwrap();
        ds.write_canonical(&path).unwrap();
        let back = read_canonical(&path).unwrap();
        assert_eq!(ds, back);

        let tampered = ds.to_canonical_string().replace("users=2", "users=5");
        fs::write(&path, tampered).unwrap();
        assert!(matches!(
            read_canonical(&path),
            Err(Error::CorruptFile { .. })
        ));
    }
}
