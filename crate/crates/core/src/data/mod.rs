//! Interaction data: ingestion, leave-one-out splitting, evaluation
//! candidates, simulated privacy preferences and synthetic generation.

mod movielens;
mod persist;
mod synthetic;

use std::collections::BTreeMap;

use rand::seq::index;

pub use movielens::{load_movielens, movielens_schema, parse_ratings, parse_users, MovieLens, AGE_BUCKETS};
pub use persist::{fingerprint, read_dataset, read_dataset_file, write_dataset, write_dataset_file, DATASET_MAGIC};
pub use synthetic::{generate_synthetic, Synthetic, SyntheticParams};

use crate::error::{Error, Result};
use crate::numeric::SimRng;

/// Number of sampled negatives each test item is ranked against.
pub const DEFAULT_CANDIDATES: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AttributeSchema {
    attrs: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attrs: Vec<Attribute>) -> Result<Self> {
        if attrs.len() > AttrMask::CAPACITY {
            return Err(Error::param(format!(
                "at most {} attributes are supported",
                AttrMask::CAPACITY
            )));
        }
        for a in &attrs {
            if a.classes < 2 {
                return Err(Error::param(format!(
                    "attribute {} needs at least 2 classes, got {}",
                    a.name, a.classes
                )));
            }
        }
        Ok(AttributeSchema { attrs })
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<&Attribute> {
        self.attrs.get(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Attribute> {
        self.attrs.iter()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }

    pub fn all(&self) -> AttrMask {
        AttrMask::full(self.attrs.len())
    }
}

/// Set of attribute ids, stored as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AttrMask(u64);

impl AttrMask {
    pub const CAPACITY: usize = 64;

    pub const fn empty() -> Self {
        AttrMask(0)
    }

    pub fn full(n: usize) -> Self {
        if n >= 64 {
            AttrMask(u64::MAX)
        } else {
            AttrMask((1u64 << n) - 1)
        }
    }

    pub fn from_ids(ids: impl IntoIterator<Item = usize>) -> Self {
        let mut m = AttrMask::empty();
        for t in ids {
            m.insert(t);
        }
        m
    }

    #[inline]
    pub fn contains(self, t: usize) -> bool {
        t < 64 && self.0 & (1 << t) != 0
    }

    #[inline]
    pub fn insert(&mut self, t: usize) {
        assert!(t < 64, "attribute id {t} exceeds mask capacity");
        self.0 |= 1 << t;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&t| self.contains(t))
    }

    pub fn is_subset_of(self, other: AttrMask) -> bool {
        self.0 & !other.0 == 0
    }
}

/// Attribute labels and private masks, indexed by dense user id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserProfiles {
    schema: AttributeSchema,
    labels: Vec<Vec<usize>>,
    private: Vec<AttrMask>,
}

impl UserProfiles {
    pub fn new(schema: AttributeSchema, labels: Vec<Vec<usize>>) -> Result<Self> {
        for (u, row) in labels.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::dim(format!(
                    "user {u} has {} labels for {} attributes",
                    row.len(),
                    schema.len()
                )));
            }
            for (t, &y) in row.iter().enumerate() {
                let c = schema.attrs[t].classes;
                if y >= c {
                    return Err(Error::Index(format!(
                        "user {u} label {y} for attribute {} with {c} classes",
                        schema.attrs[t].name
                    )));
                }
            }
        }
        let private = vec![AttrMask::empty(); labels.len()];
        Ok(UserProfiles { schema, labels, private })
    }

    /// Profiles for the users retained in `ds`, looked up by raw user id.
    pub fn align(
        schema: AttributeSchema,
        by_raw_id: &BTreeMap<u64, Vec<usize>>,
        ds: &InteractionDataset,
    ) -> Result<Self> {
        let labels = ds
            .user_ids()
            .iter()
            .map(|raw| {
                by_raw_id
                    .get(raw)
                    .cloned()
                    .ok_or_else(|| Error::state(format!("no profile for user {raw}")))
            })
            .collect::<Result<Vec<_>>>()?;
        UserProfiles::new(schema, labels)
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn num_users(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self, user: usize) -> &[usize] {
        &self.labels[user]
    }

    pub fn label(&self, user: usize, t: usize) -> usize {
        self.labels[user][t]
    }

    /// Labels of every user for attribute `t`.
    pub fn column(&self, t: usize) -> Vec<usize> {
        self.labels.iter().map(|row| row[t]).collect()
    }

    pub fn private_mask(&self, user: usize) -> AttrMask {
        self.private[user]
    }

    pub fn set_private_mask(&mut self, user: usize, mask: AttrMask) -> Result<()> {
        if !mask.is_subset_of(self.schema.all()) {
            return Err(Error::Index(format!(
                "mask {mask:?} references unknown attributes"
            )));
        }
        self.private[user] = mask;
        Ok(())
    }

    pub fn is_private(&self, user: usize, t: usize) -> bool {
        self.private[user].contains(t)
    }
}

/// One implicit interaction; timestamps only order a user's history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub item: usize,
    pub timestamp: i64,
}

/// Interaction as read from a source, keyed by raw ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: u64,
    pub item: u64,
    pub timestamp: i64,
}

/// Leave-one-out split with dense ids.
///
/// Per user: chronologically sorted training interactions, one held-out test
/// interaction and (after [`sample_candidates`]) the negatives the test item
/// is ranked against. `user_ids`/`item_ids` map dense ids back to raw ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionDataset {
    num_items: usize,
    train: Vec<Vec<Interaction>>,
    train_items: Vec<Vec<usize>>,
    test: Vec<Interaction>,
    candidates: Vec<Vec<usize>>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    dropped_users: usize,
}

impl InteractionDataset {
    pub(crate) fn from_parts(
        num_items: usize,
        train: Vec<Vec<Interaction>>,
        test: Vec<Interaction>,
        candidates: Vec<Vec<usize>>,
        user_ids: Vec<u64>,
        item_ids: Vec<u64>,
        dropped_users: usize,
    ) -> Result<Self> {
        if train.len() != test.len() || user_ids.len() != test.len() {
            return Err(Error::dim("per-user tables disagree on user count"));
        }
        if item_ids.len() != num_items {
            return Err(Error::dim("item id map disagrees with item count"));
        }
        if !candidates.is_empty() && candidates.len() != test.len() {
            return Err(Error::dim("candidate table disagrees with user count"));
        }
        let mut train_items = Vec::with_capacity(train.len());
        for (u, (rows, t)) in train.iter().zip(&test).enumerate() {
            let mut items: Vec<usize> = rows.iter().map(|r| r.item).collect();
            items.sort_unstable();
            items.dedup();
            if items.len() != rows.len() {
                return Err(Error::state(format!("user {u} has duplicate training items")));
            }
            if items.last().is_some_and(|&i| i >= num_items) || t.item >= num_items {
                return Err(Error::Index(format!("user {u} references an unknown item")));
            }
            if items.binary_search(&t.item).is_ok() {
                return Err(Error::state(format!("user {u} test item is also in training")));
            }
            if let Some(c) = candidates.get(u) {
                if c.iter().any(|&i| i >= num_items || i == t.item || items.binary_search(&i).is_ok()) {
                    return Err(Error::state(format!(
                        "user {u} candidate list contains an interacted or unknown item"
                    )));
                }
            }
            train_items.push(items);
        }
        Ok(InteractionDataset {
            num_items,
            train,
            train_items,
            test,
            candidates,
            user_ids,
            item_ids,
            dropped_users,
        })
    }

    pub fn num_users(&self) -> usize {
        self.test.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn train(&self, user: usize) -> &[Interaction] {
        &self.train[user]
    }

    /// Sorted, deduplicated training item ids of `user`.
    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_items[user]
    }

    pub fn has_trained(&self, user: usize, item: usize) -> bool {
        self.train_items[user].binary_search(&item).is_ok()
    }

    pub fn test(&self, user: usize) -> Interaction {
        self.test[user]
    }

    pub fn has_candidates(&self) -> bool {
        !self.candidates.is_empty() || self.test.is_empty()
    }

    pub fn candidates(&self, user: usize) -> Option<&[usize]> {
        self.candidates.get(user).map(Vec::as_slice)
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Users removed by the split for having fewer than two interactions.
    pub fn dropped_users(&self) -> usize {
        self.dropped_users
    }

    pub fn total_train_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }
}

/// Leave-one-out split: each user's latest interaction becomes the test
/// item (ties at the latest timestamp go to the largest item id).
///
/// Users with fewer than two distinct items are dropped; users and items are
/// re-indexed densely in raw-id order. Repeated (user, item) pairs keep the
/// latest timestamp.
pub fn leave_one_out_split(raw: &[RawInteraction]) -> Result<InteractionDataset> {
    let mut per_user: BTreeMap<u64, BTreeMap<u64, i64>> = BTreeMap::new();
    for r in raw {
        let slot = per_user.entry(r.user).or_default().entry(r.item).or_insert(r.timestamp);
        *slot = (*slot).max(r.timestamp);
    }
    let before = per_user.len();
    per_user.retain(|_, items| items.len() >= 2);
    let dropped = before - per_user.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} users with fewer than 2 interactions");
    }

    let mut item_ids: Vec<u64> = per_user.values().flat_map(|m| m.keys().copied()).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let dense_item = |raw: u64| item_ids.binary_search(&raw).expect("item collected above");

    let grouped: Vec<(u64, Vec<Interaction>)> = per_user
        .iter()
        .map(|(&u, items)| {
            let rows = items
                .iter()
                .map(|(&i, &t)| Interaction { item: dense_item(i), timestamp: t })
                .collect();
            (u, rows)
        })
        .collect();
    split_grouped(grouped, item_ids, dropped)
}

pub(crate) fn split_grouped(
    grouped: Vec<(u64, Vec<Interaction>)>,
    item_ids: Vec<u64>,
    dropped: usize,
) -> Result<InteractionDataset> {
    let mut user_ids = Vec::with_capacity(grouped.len());
    let mut train = Vec::with_capacity(grouped.len());
    let mut test = Vec::with_capacity(grouped.len());
    for (raw_user, mut rows) in grouped {
        rows.sort_by_key(|r| (r.timestamp, r.item));
        let held_out = rows.pop().ok_or_else(|| Error::state("user without interactions"))?;
        user_ids.push(raw_user);
        train.push(rows);
        test.push(held_out);
    }
    InteractionDataset::from_parts(item_ids.len(), train, test, Vec::new(), user_ids, item_ids, dropped)
}

/// Draw `count` distinct never-interacted items per user, uniformly without
/// replacement. Lists are stored sorted.
pub fn sample_candidates(
    mut ds: InteractionDataset,
    count: usize,
    rng: &mut SimRng,
) -> Result<InteractionDataset> {
    let mut all = Vec::with_capacity(ds.num_users());
    for u in 0..ds.num_users() {
        let test_item = ds.test[u].item;
        let eligible: Vec<usize> = (0..ds.num_items)
            .filter(|&i| i != test_item && !ds.has_trained(u, i))
            .collect();
        if eligible.len() < count {
            return Err(Error::Config(format!(
                "user {} has {} non-interacted items, {count} candidates required",
                ds.user_ids[u],
                eligible.len()
            )));
        }
        let mut picked: Vec<usize> = index::sample(rng, eligible.len(), count)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        picked.sort_unstable();
        all.push(picked);
    }
    ds.candidates = all;
    Ok(ds)
}

/// Mark each (user, attribute) pair private independently with probability
/// `alpha`.
pub fn assign_privacy(profiles: &mut UserProfiles, alpha: f64, rng: &mut SimRng) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n_attrs = profiles.schema.len();
    for mask in profiles.private.iter_mut() {
        let mut m = AttrMask::empty();
        for t in 0..n_attrs {
            if rng.bernoulli(alpha) {
                m.insert(t);
            }
        }
        *mask = m;
    }
    Ok(())
}

/// Uniform draw over items outside `user`'s training set.
///
/// The caller guarantees at least one such item exists.
pub fn sample_negative(ds: &InteractionDataset, user: usize, rng: &mut SimRng) -> usize {
    let seen = &ds.train_items[user];
    let free = ds.num_items - seen.len();
    assert!(free > 0, "user {user} has interacted with every item");
    if free * 4 >= ds.num_items {
        loop {
            let j = rng.index(ds.num_items);
            if seen.binary_search(&j).is_err() {
                return j;
            }
        }
    }
    // Dense histories: pick the k-th free item directly.
    let mut k = rng.index(free);
    let mut prev = 0;
    for &s in seen {
        let gap = s - prev;
        if k < gap {
            return prev + k;
        }
        k -= gap;
        prev = s + 1;
    }
    prev + k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(user: u64, item: u64, t: i64) -> RawInteraction {
        RawInteraction { user, item, timestamp: t }
    }

    fn toy_dataset(num_items: usize, per_user: &[&[usize]]) -> InteractionDataset {
        let grouped = per_user
            .iter()
            .enumerate()
            .map(|(u, items)| {
                let rows = items
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| Interaction { item: i, timestamp: k as i64 })
                    .collect();
                (u as u64, rows)
            })
            .collect();
        split_grouped(grouped, (0..num_items as u64).collect(), 0).unwrap()
    }

    #[test]
    fn latest_interaction_is_held_out() {
        let ds = leave_one_out_split(&[raw(1, 10, 10), raw(1, 20, 20), raw(1, 30, 30)]).unwrap();
        assert_eq!(ds.num_users(), 1);
        assert_eq!(ds.item_ids()[ds.test(0).item], 30);
        let train: Vec<u64> = ds.train(0).iter().map(|r| ds.item_ids()[r.item]).collect();
        assert_eq!(train, vec![10, 20]);
    }

    #[test]
    fn timestamp_tie_goes_to_largest_item() {
        let ds = leave_one_out_split(&[raw(1, 5, 10), raw(1, 9, 30), raw(1, 7, 30)]).unwrap();
        assert_eq!(ds.item_ids()[ds.test(0).item], 9);
    }

    #[test]
    fn single_interaction_users_are_dropped() {
        let ds = leave_one_out_split(&[raw(1, 5, 1), raw(2, 5, 1), raw(2, 6, 2), raw(3, 8, 1)]).unwrap();
        assert_eq!(ds.num_users(), 1);
        assert_eq!(ds.user_ids(), &[2]);
        assert_eq!(ds.dropped_users(), 2);
        // items only seen by dropped users disappear from the catalogue
        assert_eq!(ds.item_ids(), &[5, 6]);
    }

    #[test]
    fn duplicate_ratings_keep_latest() {
        let ds = leave_one_out_split(&[raw(1, 5, 50), raw(1, 6, 20), raw(1, 5, 10)]).unwrap();
        assert_eq!(ds.item_ids()[ds.test(0).item], 5);
        assert_eq!(ds.train(0).len(), 1);
    }

    #[test]
    fn candidates_avoid_history_and_are_reproducible() {
        let ds = toy_dataset(120, &[&[0, 1, 2, 3], &[4, 5, 6], &[7, 8]]);
        let a = sample_candidates(ds.clone(), 50, &mut SimRng::new(4)).unwrap();
        let b = sample_candidates(ds, 50, &mut SimRng::new(4)).unwrap();
        assert_eq!(a, b);
        for u in 0..a.num_users() {
            let c = a.candidates(u).unwrap();
            assert_eq!(c.len(), 50);
            let mut uniq = c.to_vec();
            uniq.dedup();
            assert_eq!(uniq.len(), 50);
            assert!(c.iter().all(|&i| !a.has_trained(u, i) && i != a.test(u).item));
        }
    }

    #[test]
    fn candidates_infeasible_when_too_few_items() {
        // 51 items, 2 interacted -> 49 eligible.
        let ds = toy_dataset(51, &[&[0, 1]]);
        assert!(matches!(
            sample_candidates(ds, 50, &mut SimRng::new(0)),
            Err(Error::Config(_))
        ));
    }

    fn profiles(n: usize, attrs: usize) -> UserProfiles {
        let schema = AttributeSchema::new(
            (0..attrs)
                .map(|t| Attribute { name: format!("a{t}"), classes: 2 })
                .collect(),
        )
        .unwrap();
        UserProfiles::new(schema, vec![vec![0; attrs]; n]).unwrap()
    }

    #[test]
    fn privacy_extremes() {
        let mut p = profiles(100, 3);
        assign_privacy(&mut p, 0.0, &mut SimRng::new(1)).unwrap();
        assert!((0..100).all(|u| p.private_mask(u).is_empty()));
        assign_privacy(&mut p, 1.0, &mut SimRng::new(1)).unwrap();
        assert!((0..100).all(|u| p.private_mask(u) == AttrMask::full(3)));
        assert!(matches!(
            assign_privacy(&mut p, 1.5, &mut SimRng::new(1)),
            Err(Error::Parameter(_))
        ));
        assert!(assign_privacy(&mut p, -0.1, &mut SimRng::new(1)).is_err());
    }

    #[test]
    fn privacy_rate_concentrates_at_alpha() {
        // 6040 x 3 Bernoulli(0.3): sd of the mean ≈ 0.0034, so ±0.02 is ~6 sd.
        let mut p = profiles(6040, 3);
        assign_privacy(&mut p, 0.3, &mut SimRng::new(2024)).unwrap();
        let marked: usize = (0..6040).map(|u| p.private_mask(u).len()).sum();
        let rate = marked as f64 / (6040.0 * 3.0);
        assert!((rate - 0.3).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn privacy_rate_passes_chi_square() {
        // Two-cell χ² with 1 dof; p > 0.01 means statistic < 6.635.
        let n_users = 5000;
        let mut p = profiles(n_users, 4);
        assign_privacy(&mut p, 0.3, &mut SimRng::new(77)).unwrap();
        let n = (n_users * 4) as f64;
        let hits = (0..n_users).map(|u| p.private_mask(u).len()).sum::<usize>() as f64;
        let exp_hit = 0.3 * n;
        let exp_miss = 0.7 * n;
        let chi2 = (hits - exp_hit).powi(2) / exp_hit + ((n - hits) - exp_miss).powi(2) / exp_miss;
        assert!(chi2 < 6.635, "chi2 {chi2}");
    }

    #[test]
    fn negative_forced_when_one_item_left() {
        let ds = toy_dataset(6, &[&[0, 1, 2, 4, 5, 3]]);
        // test item is 3 (latest); training covers 0,1,2,4,5
        let mut rng = SimRng::new(9);
        for _ in 0..100 {
            assert_eq!(sample_negative(&ds, 0, &mut rng), 3);
        }
    }

    #[test]
    fn negative_sampling_is_uniform_over_free_items() {
        // 20 items, 10 trained -> 10 eligible; freq 0.1 ± 0.01 at 1e4 draws.
        let trained: Vec<usize> = (0..20).step_by(2).collect();
        let mut hist = trained.clone();
        hist.push(1);
        let ds = toy_dataset(20, &[&hist]);
        // the appended item (1) is the test item; training = even ids
        assert_eq!(ds.train_items(0), trained.as_slice());
        let mut rng = SimRng::new(31);
        let mut counts = [0usize; 20];
        let n = 10_000;
        for _ in 0..n {
            let j = sample_negative(&ds, 0, &mut rng);
            assert!(!ds.has_trained(0, j));
            counts[j] += 1;
        }
        for i in (1..20).step_by(2) {
            let f = counts[i] as f64 / n as f64;
            assert!((f - 0.1).abs() <= 0.01, "item {i} freq {f}");
        }
    }

    #[test]
    fn dense_history_negative_path() {
        // 40 items, 35 trained: exercises the enumeration branch.
        let mut hist: Vec<usize> = (0..40).filter(|i| i % 8 != 3).collect();
        hist.push(3);
        let ds = toy_dataset(40, &[&hist]);
        let mut rng = SimRng::new(8);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            let j = sample_negative(&ds, 0, &mut rng);
            assert!(!ds.has_trained(0, j));
            seen.insert(j);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![3, 11, 19, 27, 35]);
    }

    #[test]
    fn mask_operations() {
        let m = AttrMask::from_ids([0, 2]);
        assert!(m.contains(0) && !m.contains(1) && m.contains(2));
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0, 2]);
        assert!(m.is_subset_of(AttrMask::full(3)));
        assert!(!m.is_subset_of(AttrMask::full(2)));
        assert_eq!(AttrMask::full(64).len(), 64);
    }

    #[test]
    fn schema_rejects_unary_attributes() {
        let bad = AttributeSchema::new(vec![Attribute { name: "x".into(), classes: 1 }]);
        assert!(matches!(bad, Err(Error::Parameter(_))));
    }
}
