use rayon::prelude::*;

use super::RecModel;
use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::numeric::dot;

pub const DEFAULT_K: usize = 10;

/// 1 when the 1-based `rank` falls inside the top `k`.
pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

/// NDCG for a single relevant item: `1 / log2(rank + 1)` inside the cut-off.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Rank of the held-out item among itself and the user's candidates.
///
/// Candidates scoring equal to the test item are ranked ahead of it, so a
/// constant model puts the test item last.
pub fn test_rank(model: &RecModel, ds: &InteractionDataset, user: usize) -> Result<usize> {
    let cands = ds
        .candidates(user)
        .ok_or_else(|| Error::state("dataset has no evaluation candidates"))?;
    let e_u = model.user(user);
    let target = dot(e_u, model.item(ds.test(user).item));
    let ahead = cands.iter().filter(|&&c| dot(e_u, model.item(c)) >= target).count();
    Ok(1 + ahead)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RankingMetrics {
    pub hr: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Per-user `(hr, ndcg)` in user-id order.
pub fn per_user_metrics(model: &RecModel, ds: &InteractionDataset, k: usize) -> Result<Vec<(f64, f64)>> {
    if !ds.has_candidates() {
        return Err(Error::state("dataset has no evaluation candidates"));
    }
    if model.num_users() != ds.num_users() || model.num_items() != ds.num_items() {
        return Err(Error::dim("model and dataset sizes differ"));
    }
    (0..ds.num_users())
        .into_par_iter()
        .map(|u| test_rank(model, ds, u).map(|r| (hr_at_k(r, k), ndcg_at_k(r, k))))
        .collect()
}

/// Mean HR/NDCG over the users selected by `users` (all when `None`).
pub fn evaluate_users(
    model: &RecModel,
    ds: &InteractionDataset,
    k: usize,
    users: Option<&[usize]>,
) -> Result<RankingMetrics> {
    let per_user = per_user_metrics(model, ds, k)?;
    let selected: Vec<usize> = match users {
        Some(list) => list.to_vec(),
        None => (0..ds.num_users()).collect(),
    };
    if selected.is_empty() {
        return Ok(RankingMetrics::default());
    }
    let (mut hr, mut ndcg) = (0.0, 0.0);
    for &u in &selected {
        let (h, n) = *per_user
            .get(u)
            .ok_or_else(|| Error::Index(format!("user {u}")))?;
        hr += h;
        ndcg += n;
    }
    let n = selected.len() as f64;
    Ok(RankingMetrics { hr: hr / n, ndcg: ndcg / n, users: selected.len() })
}

/// HR@10 and NDCG@10 averaged over all users.
pub fn evaluate(model: &RecModel, ds: &InteractionDataset) -> Result<RankingMetrics> {
    evaluate_users(model, ds, DEFAULT_K, None)
}
