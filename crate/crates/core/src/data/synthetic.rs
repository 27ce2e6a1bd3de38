//! Synthetic datasets with planted attribute/interaction correlation.
//!
//! Every attribute is binary. For each attribute the catalogue is split
//! into two balanced blocks (independently per attribute); a user interacts
//! with an item with probability `p_out + (p_in - p_out) * m / n_attrs`, where
//! `m` counts the attributes whose value matches the item's block.

use rand::seq::SliceRandom;

use super::{split_grouped, Attribute, AttributeSchema, Interaction, InteractionDataset, UserProfiles};
use crate::error::{Error, Result};
use crate::numeric::SimRng;

const MAX_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticParams {
    pub users: usize,
    pub items: usize,
    pub attributes: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            users: 500,
            items: 200,
            attributes: 1,
            p_in: 0.3,
            p_out: 0.02,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: InteractionDataset,
    pub profiles: UserProfiles,
    /// `item_blocks[t][i]` is the attribute value item `i` is associated with.
    pub item_blocks: Vec<Vec<usize>>,
}

pub fn generate_synthetic(params: &SyntheticParams, rng: &mut SimRng) -> Result<Synthetic> {
    let SyntheticParams { users, items, attributes, p_in, p_out } = *params;
    if !(0.0 <= p_out && p_out <= p_in && p_in <= 1.0) {
        return Err(Error::param(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    if users == 0 || items < 2 || attributes == 0 {
        return Err(Error::param("synthetic data needs users, >= 2 items and >= 1 attribute"));
    }
    let schema = AttributeSchema::new(
        (0..attributes)
            .map(|t| Attribute { name: format!("attr{t}"), classes: 2 })
            .collect(),
    )?;

    let item_blocks: Vec<Vec<usize>> = (0..attributes)
        .map(|_| {
            let mut order: Vec<usize> = (0..items).collect();
            order.shuffle(rng);
            let mut block = vec![0; items];
            for &i in &order[items / 2..] {
                block[i] = 1;
            }
            block
        })
        .collect();

    let labels: Vec<Vec<usize>> = (0..users)
        .map(|_| (0..attributes).map(|_| usize::from(rng.bernoulli(0.5))).collect())
        .collect();

    let prob = |user: &[usize], item: usize| {
        let matches = (0..attributes).filter(|&t| item_blocks[t][item] == user[t]).count();
        p_out + (p_in - p_out) * matches as f64 / attributes as f64
    };

    let mut grouped = Vec::with_capacity(users);
    for (u, user) in labels.iter().enumerate() {
        let expected: f64 = (0..items).map(|i| prob(user, i)).sum();
        if expected < 2.0 {
            return Err(Error::param(format!(
                "expected {expected:.2} interactions per user, at least 2 needed"
            )));
        }
        let mut picked = Vec::new();
        for _ in 0..MAX_RESAMPLES {
            picked = (0..items).filter(|&i| rng.bernoulli(prob(user, i))).collect();
            if picked.len() >= 2 {
                break;
            }
        }
        if picked.len() < 2 {
            return Err(Error::param("could not draw 2 interactions for a user"));
        }
        picked.shuffle(rng);
        let rows = picked
            .into_iter()
            .enumerate()
            .map(|(k, item)| Interaction { item, timestamp: k as i64 })
            .collect();
        grouped.push((u as u64, rows));
    }

    let dataset = split_grouped(grouped, (0..items as u64).collect(), 0)?;
    let profiles = UserProfiles::new(schema, labels)?;
    Ok(Synthetic { dataset, profiles, item_blocks })
}
