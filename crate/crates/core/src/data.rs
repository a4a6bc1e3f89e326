//! Interaction records, dataset splits and the plain-text loaders.
//!
//! Two input layouts are supported: delimited `user item value` triples
//! (Yahoo style) and dense ASCII rating matrices where 0 marks an unobserved
//! cell (Coat style). Ratings are binarized on load.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const DEFAULT_THRESHOLD: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Logged,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub label: u8,
    pub raw_rating: Option<u8>,
    pub source: Source,
}

impl Interaction {
    pub fn new(user: usize, item: usize, label: u8, source: Source) -> Self {
        Interaction {
            user,
            item,
            label,
            raw_rating: None,
            source,
        }
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.user, self.item)
    }
}

/// User/item universe plus the four named splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    /// Logged (MNAR) feedback.
    pub biased_train: Vec<Interaction>,
    /// Labeled uniform feedback available for training; may be empty.
    pub uniform_train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let splits = [
            ("biased_train", &self.biased_train, Source::Logged),
            ("uniform_train", &self.uniform_train, Source::Uniform),
            ("validation", &self.validation, Source::Uniform),
            ("test", &self.test, Source::Uniform),
        ];
        for (name, split, source) in splits {
            for x in split.iter() {
                if x.user >= self.n_users || x.item >= self.n_items {
                    return Err(Error::Validation(format!(
                        "{name}: pair ({}, {}) outside universe {}x{}",
                        x.user, x.item, self.n_users, self.n_items
                    )));
                }
                if x.label > 1 {
                    return Err(Error::Validation(format!("{name}: label {} is not binary", x.label)));
                }
                if x.source != source {
                    return Err(Error::Validation(format!(
                        "{name}: interaction has source {:?}, expected {source:?}",
                        x.source
                    )));
                }
            }
        }
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for (name, split) in [
            ("uniform_train", &self.uniform_train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            let mut local = HashSet::new();
            for x in split {
                local.insert(x.pair());
            }
            if let Some(p) = local.iter().find(|p| seen.contains(p)) {
                return Err(Error::Validation(format!(
                    "{name}: pair {p:?} also appears in an earlier uniform split"
                )));
            }
            seen.extend(local);
        }
        Ok(())
    }
}

/// Map `rating` to a binary label: 1 iff `rating >= threshold`.
pub fn binarize(rating: u8, threshold: u8) -> Result<u8> {
    if !(1..=5).contains(&rating) {
        return Err(Error::Validation(format!("rating {rating} outside 1-5")));
    }
    Ok(u8::from(rating >= threshold))
}

/// How the third column of a triple file is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueColumn {
    /// Five-star rating, binarized with the threshold.
    Rating { threshold: u8 },
    /// Already-binary 0/1 label.
    Label,
}

#[derive(Debug, Clone, Copy)]
pub struct TripleOptions {
    /// Field separator. Any whitespace character means "split on runs of whitespace".
    pub separator: char,
    pub one_based: bool,
    pub values: ValueColumn,
    /// Remap raw ids to dense indices in ascending raw-id order.
    pub remap: bool,
    pub source: Source,
}

impl Default for TripleOptions {
    fn default() -> Self {
        TripleOptions {
            separator: '\t',
            one_based: false,
            values: ValueColumn::Rating {
                threshold: DEFAULT_THRESHOLD,
            },
            remap: true,
            source: Source::Logged,
        }
    }
}

/// Raw id to dense id mapping, ordered by raw id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdMap {
    raw_to_dense: BTreeMap<u64, usize>,
    dense_to_raw: Vec<u64>,
}

impl IdMap {
    pub fn from_raw_ids(ids: impl IntoIterator<Item = u64>) -> Self {
        let raw_to_dense: BTreeMap<u64, usize> = ids.into_iter().map(|id| (id, 0)).collect();
        let mut map = IdMap {
            raw_to_dense,
            dense_to_raw: Vec::new(),
        };
        for (dense, (raw, slot)) in map.raw_to_dense.iter_mut().enumerate() {
            *slot = dense;
            map.dense_to_raw.push(*raw);
        }
        map
    }

    pub fn identity(n: usize) -> Self {
        Self::from_raw_ids(0..n as u64)
    }

    pub fn len(&self) -> usize {
        self.dense_to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense_to_raw.is_empty()
    }

    pub fn dense(&self, raw: u64) -> Option<usize> {
        self.raw_to_dense.get(&raw).copied()
    }

    pub fn raw(&self, dense: usize) -> Option<u64> {
        self.dense_to_raw.get(dense).copied()
    }

    /// Two-column `raw_id<TAB>dense_id` text.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (dense, raw) in self.dense_to_raw.iter().enumerate() {
            let _ = writeln!(out, "{raw}\t{dense}");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let mut fields = line.split('\t');
            let raw = fields.next().and_then(|f| f.trim().parse::<u64>().ok());
            let dense = fields.next().and_then(|f| f.trim().parse::<usize>().ok());
            match (raw, dense) {
                (Some(r), Some(d)) => pairs.push((r, d)),
                _ => return Err(parse_err(format!("expected `raw_id<TAB>dense_id`, got {line:?}"))),
            }
        }
        let map = Self::from_raw_ids(pairs.iter().map(|p| p.0));
        for (raw, dense) in pairs {
            if map.dense(raw) != Some(dense) {
                return Err(Error::Validation(format!(
                    "{}: id map is not dense and ordered by raw id",
                    path.display()
                )));
            }
        }
        Ok(map)
    }
}

/// Parsed interactions with their universe and id maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub interactions: Vec<Interaction>,
    pub n_users: usize,
    pub n_items: usize,
    pub user_map: IdMap,
    pub item_map: IdMap,
}

#[derive(Debug, Clone, Copy)]
struct RawRecord {
    user: u64,
    item: u64,
    value: u8,
}

fn split_fields(line: &str, sep: char) -> Vec<&str> {
    if sep.is_whitespace() {
        line.split_whitespace().collect()
    } else {
        line.split(sep).map(str::trim).collect()
    }
}

fn read_raw_triples(path: &Path, opts: &TripleOptions) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let fields = split_fields(line, opts.separator);
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let id = |s: &str, what: &str| -> Result<u64> {
            let v: u64 = s.parse().map_err(|_| parse_err(format!("invalid {what} id {s:?}")))?;
            if opts.one_based {
                v.checked_sub(1)
                    .ok_or_else(|| parse_err(format!("{what} id 0 in a one-based file")))
            } else {
                Ok(v)
            }
        };
        let user = id(fields[0], "user")?;
        let item = id(fields[1], "item")?;
        let value: u8 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("invalid value {:?}", fields[2])))?;
        match opts.values {
            ValueColumn::Rating { .. } if !(1..=5).contains(&value) => {
                return Err(Error::Validation(format!(
                    "{}:{lineno}: rating {value} outside 1-5",
                    path.display()
                )))
            }
            ValueColumn::Label if value > 1 => {
                return Err(Error::Validation(format!(
                    "{}:{lineno}: label {value} is not 0/1",
                    path.display()
                )))
            }
            _ => {}
        }
        records.push(RawRecord { user, item, value });
    }
    Ok(records)
}

fn build_maps(files: &[Vec<RawRecord>], remap: bool) -> (IdMap, IdMap) {
    let users = files.iter().flatten().map(|r| r.user);
    let items = files.iter().flatten().map(|r| r.item);
    if remap {
        (IdMap::from_raw_ids(users), IdMap::from_raw_ids(items))
    } else {
        let nu = users.max().map_or(0, |m| m as usize + 1);
        let ni = items.max().map_or(0, |m| m as usize + 1);
        (IdMap::identity(nu), IdMap::identity(ni))
    }
}

fn to_interaction(
    r: &RawRecord,
    users: &IdMap,
    items: &IdMap,
    values: ValueColumn,
    source: Source,
) -> Result<Interaction> {
    let (label, raw_rating) = match values {
        ValueColumn::Rating { threshold } => (binarize(r.value, threshold)?, Some(r.value)),
        ValueColumn::Label => (r.value, None),
    };
    Ok(Interaction {
        user: users.dense(r.user).expect("user id present in map"),
        item: items.dense(r.item).expect("item id present in map"),
        label,
        raw_rating,
        source,
    })
}

/// Load one triple file; ids become contiguous and file order is preserved.
pub fn load_triples(path: &Path, opts: &TripleOptions) -> Result<Loaded> {
    let mut all = load_triples_joint(&[(path, opts.source)], opts)?;
    let interactions = all.interactions.pop().unwrap_or_default();
    Ok(Loaded {
        interactions,
        n_users: all.n_users,
        n_items: all.n_items,
        user_map: all.user_map,
        item_map: all.item_map,
    })
}

/// Several files loaded against one shared id space.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLoaded {
    pub interactions: Vec<Vec<Interaction>>,
    pub n_users: usize,
    pub n_items: usize,
    pub user_map: IdMap,
    pub item_map: IdMap,
}

/// Load several triple files (e.g. logged and uniform) so they share one id map.
pub fn load_triples_joint(files: &[(&Path, Source)], opts: &TripleOptions) -> Result<JointLoaded> {
    let raws = files
        .iter()
        .map(|(p, _)| read_raw_triples(p, opts))
        .collect::<Result<Vec<_>>>()?;
    let (user_map, item_map) = build_maps(&raws, opts.remap);
    let interactions = raws
        .iter()
        .zip(files)
        .map(|(recs, (_, source))| {
            recs.iter()
                .map(|r| to_interaction(r, &user_map, &item_map, opts.values, *source))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointLoaded {
        interactions,
        n_users: user_map.len(),
        n_items: item_map.len(),
        user_map,
        item_map,
    })
}

/// Load a dense whitespace-separated rating matrix (rows = users, 0 = unobserved).
pub fn load_matrix_ascii(path: &Path, threshold: u8, source: Source) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut interactions = Vec::new();
    let mut n_items: Option<usize> = None;
    let mut n_users = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = n_users;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let cells = line
            .split_whitespace()
            .map(|c| {
                c.parse::<u8>()
                    .map_err(|_| parse_err(format!("row {row}: invalid cell {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match n_items {
            None => n_items = Some(cells.len()),
            Some(n) if n != cells.len() => {
                return Err(parse_err(format!(
                    "row {row}: ragged matrix, {} columns instead of {n}",
                    cells.len()
                )))
            }
            _ => {}
        }
        for (item, &rating) in cells.iter().enumerate() {
            if rating == 0 {
                continue;
            }
            interactions.push(Interaction {
                user: row,
                item,
                label: binarize(rating, threshold)?,
                raw_rating: Some(rating),
                source,
            });
        }
        n_users += 1;
    }
    let n_items = n_items.unwrap_or(0);
    Ok(Loaded {
        interactions,
        n_users,
        n_items,
        user_map: IdMap::identity(n_users),
        item_map: IdMap::identity(n_items),
    })
}

/// Write `user<TAB>item<TAB>value` lines using dense ids.
pub fn write_triples(path: &Path, interactions: &[Interaction], values: ValueColumn) -> Result<()> {
    let mut out = String::with_capacity(interactions.len() * 12);
    for x in interactions {
        let value = match values {
            ValueColumn::Label => x.label,
            ValueColumn::Rating { .. } => x
                .raw_rating
                .ok_or_else(|| Error::Validation(format!("interaction ({}, {}) has no raw rating", x.user, x.item)))?,
        };
        let _ = writeln!(out, "{}\t{}\t{}", x.user, x.item, value);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.05,
            validation: 0.05,
            test: 0.90,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be nonnegative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

/// Seeded random partition into (train, validation, test).
///
/// Part sizes are `floor(n * fraction)` for train and validation; the
/// remainder goes to test.
pub fn split_uniform(
    uniform: &[Interaction],
    fractions: SplitFractions,
    rng: &mut Rng,
) -> Result<(Vec<Interaction>, Vec<Interaction>, Vec<Interaction>)> {
    fractions.validate()?;
    let n = uniform.len();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    let n_train = ((n as f64 * fractions.train) + 1e-9).floor() as usize;
    let n_val = (((n as f64 * fractions.validation) + 1e-9).floor() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| uniform[i]).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Keep only positive interactions (implicit-feedback variant).
pub fn drop_negatives(interactions: &[Interaction]) -> Vec<Interaction> {
    interactions.iter().filter(|x| x.label == 1).copied().collect()
}

/// Keep the first occurrence of every (user, item) pair.
pub fn dedup_pairs(interactions: &[Interaction]) -> Vec<Interaction> {
    let mut seen = HashSet::with_capacity(interactions.len());
    interactions.iter().filter(|x| seen.insert(x.pair())).copied().collect()
}

/// Draws label-0 examples from items a user has no observation for.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    n_items: usize,
    observed: HashSet<(usize, usize)>,
}

impl NegativeSampler {
    pub fn new<'a>(n_items: usize, observed: impl IntoIterator<Item = &'a Interaction>) -> Self {
        NegativeSampler {
            n_items,
            observed: observed.into_iter().map(Interaction::pair).collect(),
        }
    }

    /// Uniform unobserved item for `user`; `None` if 1000 rejections in a row fail.
    pub fn sample(&self, user: usize, rng: &mut Rng) -> Option<Interaction> {
        if self.n_items == 0 {
            return None;
        }
        for _ in 0..1000 {
            let item = rng.below(self.n_items);
            if !self.observed.contains(&(user, item)) {
                return Some(Interaction::new(user, item, 0, Source::Logged));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ws_opts() -> TripleOptions {
        TripleOptions {
            separator: ' ',
            ..TripleOptions::default()
        }
    }

    #[test]
    fn triples_binarized() {
        let f = write_tmp("1 1 5\n2 1 2\n");
        let loaded = load_triples(f.path(), &ws_opts()).unwrap();
        let labels: Vec<u8> = loaded.interactions.iter().map(|x| x.label).collect();
        assert_eq!(labels, vec![1, 0]);
        assert_eq!((loaded.n_users, loaded.n_items), (2, 1));
        assert_eq!(loaded.interactions[1].user, 1);
        assert_eq!(loaded.interactions[0].raw_rating, Some(5));
    }

    #[test]
    fn triples_empty_file() {
        let f = write_tmp("");
        let loaded = load_triples(f.path(), &ws_opts()).unwrap();
        assert!(loaded.interactions.is_empty());
        assert_eq!((loaded.n_users, loaded.n_items), (0, 0));
    }

    #[test]
    fn triples_parse_error_names_line() {
        let f = write_tmp("1 x 3\n");
        match load_triples(f.path(), &ws_opts()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("0\t0\t4\n0\t1\n");
        match load_triples(f.path(), &TripleOptions::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn triples_rating_out_of_range() {
        let f = write_tmp("0 0 7\n");
        assert!(matches!(
            load_triples(f.path(), &ws_opts()).unwrap_err(),
            Error::Validation(_)
        ));
    }

    #[test]
    fn one_based_without_remap() {
        let f = write_tmp("1\t3\t4\n2\t1\t1\n");
        let opts = TripleOptions {
            one_based: true,
            remap: false,
            ..TripleOptions::default()
        };
        let loaded = load_triples(f.path(), &opts).unwrap();
        assert_eq!((loaded.n_users, loaded.n_items), (2, 3));
        assert_eq!(loaded.interactions[0].pair(), (0, 2));
        let f = write_tmp("0\t1\t4\n");
        assert!(matches!(
            load_triples(f.path(), &opts).unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn joint_load_shares_id_space() {
        let a = write_tmp("10\t7\t5\n30\t7\t1\n");
        let b = write_tmp("20\t9\t4\n");
        let joint = load_triples_joint(
            &[(a.path(), Source::Logged), (b.path(), Source::Uniform)],
            &TripleOptions::default(),
        )
        .unwrap();
        assert_eq!((joint.n_users, joint.n_items), (3, 2));
        assert_eq!(joint.interactions[0][1].user, 2);
        assert_eq!(joint.interactions[1][0].pair(), (1, 1));
        assert_eq!(joint.interactions[1][0].source, Source::Uniform);
        assert_eq!(joint.user_map.raw(2), Some(30));
    }

    #[test]
    fn id_map_round_trip() {
        let map = IdMap::from_raw_ids([42, 7, 99, 7]);
        assert_eq!(map.len(), 3);
        assert_eq!(map.dense(42), Some(1));
        let f = tempfile::NamedTempFile::new().unwrap();
        map.write(f.path()).unwrap();
        assert_eq!(fs::read_to_string(f.path()).unwrap(), "7\t0\n42\t1\n99\t2\n");
        assert_eq!(IdMap::read(f.path()).unwrap(), map);
    }

    #[test]
    fn matrix_loader() {
        let f = write_tmp("5 0\n0 1\n");
        let loaded = load_matrix_ascii(f.path(), 3, Source::Uniform).unwrap();
        let got: Vec<_> = loaded.interactions.iter().map(|x| (x.user, x.item, x.label)).collect();
        assert_eq!(got, vec![(0, 0, 1), (1, 1, 0)]);
        assert_eq!((loaded.n_users, loaded.n_items), (2, 2));

        let f = write_tmp("0 0 0\n0 0 0\n");
        assert!(load_matrix_ascii(f.path(), 3, Source::Uniform)
            .unwrap()
            .interactions
            .is_empty());

        let f = write_tmp("1 2 3\n4 5\n");
        match load_matrix_ascii(f.path(), 3, Source::Uniform).unwrap_err() {
            Error::Parse { message, .. } => assert!(message.contains("row 1"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matrix_count_matches_independent_scan() {
        let mut rng = Rng::new(3, 0);
        let mut text = String::new();
        let mut nonzero = 0;
        for _ in 0..17 {
            let row: Vec<String> = (0..11)
                .map(|_| {
                    let v = if rng.bernoulli(0.3) { 1 + rng.below(5) } else { 0 };
                    v.to_string()
                })
                .collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        for tok in text.split_whitespace() {
            if tok != "0" {
                nonzero += 1;
            }
        }
        let f = write_tmp(&text);
        let loaded = load_matrix_ascii(f.path(), 3, Source::Logged).unwrap();
        assert_eq!(loaded.interactions.len(), nonzero);
        assert_eq!((loaded.n_users, loaded.n_items), (17, 11));
    }

    #[test]
    fn binarize_rule() {
        assert_eq!(binarize(3, 3).unwrap(), 1);
        assert_eq!(binarize(2, 3).unwrap(), 0);
        assert_eq!(binarize(5, 6).unwrap(), 0);
        assert!(binarize(0, 3).is_err());
        assert!(binarize(6, 3).is_err());
    }

    fn uniform_list(n: usize) -> Vec<Interaction> {
        (0..n)
            .map(|i| Interaction::new(i, i % 7, (i % 2) as u8, Source::Uniform))
            .collect()
    }

    #[test]
    fn split_sizes() {
        let xs = uniform_list(100);
        let (a, b, c) = split_uniform(&xs, SplitFractions::default(), &mut Rng::new(1, 0)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (5, 5, 90));

        let all_test = SplitFractions {
            train: 0.0,
            validation: 0.0,
            test: 1.0,
        };
        let (a, b, c) = split_uniform(&xs, all_test, &mut Rng::new(1, 0)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (0, 0, 100));

        let (a, b, c) = split_uniform(&[], SplitFractions::default(), &mut Rng::new(1, 0)).unwrap();
        assert!(a.is_empty() && b.is_empty() && c.is_empty());

        let bad = SplitFractions {
            train: 0.5,
            validation: 0.6,
            test: 0.0,
        };
        assert!(split_uniform(&xs, bad, &mut Rng::new(1, 0)).is_err());
    }

    #[test]
    fn split_deterministic() {
        let xs = uniform_list(57);
        let a = split_uniform(&xs, SplitFractions::default(), &mut Rng::new(9, 2)).unwrap();
        let b = split_uniform(&xs, SplitFractions::default(), &mut Rng::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negatives() {
        let xs = vec![
            Interaction::new(0, 1, 1, Source::Logged),
            Interaction::new(0, 2, 0, Source::Logged),
        ];
        assert_eq!(drop_negatives(&xs), vec![xs[0]]);
        let pos = vec![xs[0], Interaction::new(1, 1, 1, Source::Logged)];
        assert_eq!(drop_negatives(&pos), pos);

        let sampler = NegativeSampler::new(3, &xs);
        let mut rng = Rng::new(0, 0);
        for _ in 0..50 {
            let neg = sampler.sample(0, &mut rng).unwrap();
            assert_eq!(neg.item, 0);
            assert_eq!(neg.label, 0);
        }
    }

    #[test]
    fn dedup_keeps_first() {
        let xs = vec![
            Interaction::new(0, 1, 1, Source::Uniform),
            Interaction::new(0, 1, 0, Source::Uniform),
            Interaction::new(1, 1, 0, Source::Uniform),
        ];
        assert_eq!(dedup_pairs(&xs), vec![xs[0], xs[2]]);
    }

    #[test]
    fn dataset_validation() {
        let mut ds = Dataset {
            n_users: 2,
            n_items: 2,
            biased_train: vec![Interaction::new(0, 0, 1, Source::Logged)],
            uniform_train: vec![Interaction::new(0, 1, 1, Source::Uniform)],
            validation: vec![Interaction::new(1, 0, 0, Source::Uniform)],
            test: vec![Interaction::new(1, 1, 1, Source::Uniform)],
        };
        ds.validate().unwrap();
        ds.test.push(Interaction::new(0, 1, 0, Source::Uniform));
        assert!(ds.validate().is_err());
        ds.test.pop();
        ds.biased_train.push(Interaction::new(5, 0, 1, Source::Logged));
        assert!(ds.validate().is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 0usize..300, seed in any::<u64>(), tr in 0.0f64..0.5, va in 0.0f64..0.5) {
            let xs = uniform_list(n);
            let fr = SplitFractions { train: tr, validation: va, test: 1.0 - tr - va };
            let (a, b, c) = split_uniform(&xs, fr, &mut Rng::new(seed, 0)).unwrap();
            prop_assert_eq!(a.len() + b.len() + c.len(), n);
            prop_assert_eq!(a.len(), (n as f64 * tr + 1e-9).floor() as usize);
            let mut users: Vec<usize> = a.iter().chain(&b).chain(&c).map(|x| x.user).collect();
            users.sort_unstable();
            prop_assert_eq!(users, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn binarize_monotone(r1 in 1u8..=5, r2 in 1u8..=5, t in 0u8..8) {
            if r1 <= r2 {
                prop_assert!(binarize(r1, t).unwrap() <= binarize(r2, t).unwrap());
            }
        }

        #[test]
        fn triple_round_trip(recs in proptest::collection::vec((0usize..40, 0usize..30, 0u8..2), 0..60)) {
            let xs: Vec<Interaction> = recs.iter().map(|&(u, i, l)| Interaction::new(u, i, l, Source::Logged)).collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_triples(f.path(), &xs, ValueColumn::Label).unwrap();
            let opts = TripleOptions { values: ValueColumn::Label, remap: false, ..TripleOptions::default() };
            let loaded = load_triples(f.path(), &opts).unwrap();
            prop_assert_eq!(loaded.interactions, xs);
        }

        #[test]
        fn drop_negatives_count(labels in proptest::collection::vec(0u8..2, 0..50)) {
            let xs: Vec<Interaction> = labels.iter().enumerate().map(|(i, &l)| Interaction::new(i, 0, l, Source::Logged)).collect();
            let k = labels.iter().filter(|&&l| l == 1).count();
            prop_assert_eq!(drop_negatives(&xs).len(), k);
        }
    }
}
