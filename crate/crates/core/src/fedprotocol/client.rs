use std::collections::BTreeMap;

use super::ldp::LdpMechanism;
use super::FedConfig;
use crate::data::{sample_negative, InteractionDataset, UserProfiles};
use crate::error::{Error, Result};
use crate::filters::{filter_train_step, privacy_term, AttributeFilter, FilterTensors, PrivacyWeights};
use crate::numeric::{axpy, SimRng};
use crate::recmodel::{bpr_gradients_vectors, bpr_loss_vectors, RecModel};

/// What one client sends back after local training.
///
/// Every group (user row, each item row, each filter tensor) has been
/// clipped and noised independently. `filter_deltas` only ever holds
/// attributes the user disclosed.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub user: usize,
    pub user_delta: Vec<f64>,
    /// Ascending item id.
    pub item_deltas: Vec<(usize, Vec<f64>)>,
    /// Ascending attribute id.
    pub filter_deltas: Vec<(usize, FilterTensors)>,
    /// Number of BPR steps taken locally.
    pub examples: usize,
    pub stats: ClientStats,
    pub audit: UploadAudit,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientStats {
    pub bpr_loss: f64,
    /// Mean weighted privacy loss over the local steps; `None` for users with
    /// nothing private.
    pub privacy_loss: Option<f64>,
    /// Mean pre-step cross-entropy per attribute the client trained.
    pub filter_ce: Vec<Option<f64>>,
}

/// Simulation-side bookkeeping; not part of the upload's payload semantics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UploadAudit {
    pub groups: usize,
    pub max_prenoise_norm: f64,
}

impl UploadAudit {
    fn record(&mut self, norm: f64) {
        self.groups += 1;
        self.max_prenoise_norm = self.max_prenoise_norm.max(norm);
    }
}

/// Local training for `user` against a read-only snapshot of the global
/// parameters.
///
/// Each of the `local_epochs` epochs first takes one cross-entropy step on
/// every disclosed attribute's filter, then one SGD step of the joint
/// objective per training positive with a freshly sampled negative. The
/// returned deltas are `local - global`, perturbed per group.
pub fn client_local_train(
    model: &RecModel,
    filters: &[AttributeFilter],
    ds: &InteractionDataset,
    profiles: &UserProfiles,
    user: usize,
    cfg: &FedConfig,
    rng: &mut SimRng,
) -> Result<ClientUpdate> {
    let positives = ds.train(user);
    if positives.is_empty() {
        return Err(Error::state(format!("user {user} has no training interactions")));
    }
    let n_attrs = profiles.schema().len();
    if filters.len() != n_attrs {
        return Err(Error::state(format!("{} filters for {n_attrs} attributes", filters.len())));
    }
    let mask = profiles.private_mask(user);
    let weights = PrivacyWeights::new(cfg.beta)?;
    let beta = cfg.beta;
    let lr = cfg.lr_rec;
    let d = model.dim();

    let mut e_u = model.user(user).to_vec();
    let mut items: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut local_filters: Vec<Option<AttributeFilter>> = (0..n_attrs)
        .map(|t| (!mask.contains(t)).then(|| filters[t].clone()))
        .collect();

    let mut ce_sum = vec![0.0; n_attrs];
    let mut bpr_sum = 0.0;
    let mut priv_sum = 0.0;
    let mut steps = 0usize;
    let use_privacy = beta > 0.0 && !mask.is_empty();

    for _ in 0..cfg.local_epochs {
        for (t, slot) in local_filters.iter_mut().enumerate() {
            if let Some(f) = slot {
                let y = profiles.label(user, t);
                ce_sum[t] += filter_train_step(f, &[(&e_u, y)], cfg.lr_filter)?;
            }
        }
        for interaction in positives {
            let i = interaction.item;
            let j = sample_negative(ds, user, rng);
            for k in [i, j] {
                items.entry(k).or_insert_with(|| model.item(k).to_vec());
            }
            let (e_i, e_j) = (&items[&i], &items[&j]);
            bpr_sum += bpr_loss_vectors(&e_u, e_i, e_j);
            let g = bpr_gradients_vectors(&e_u, e_i, e_j);

            let mut user_grad = vec![0.0; d];
            axpy(1.0 - beta, &g.user, &mut user_grad);
            if use_privacy {
                let (pl, pg) = privacy_term(filters, &e_u, mask, &weights)?;
                priv_sum += pl;
                axpy(beta, &pg, &mut user_grad);
            }
            axpy(-lr, &user_grad, &mut e_u);
            let step = lr * (1.0 - beta);
            axpy(-step, &g.pos, items.get_mut(&i).unwrap());
            axpy(-step, &g.neg, items.get_mut(&j).unwrap());
            steps += 1;
        }
    }

    let ldp = LdpMechanism::new(cfg.clip_bound, cfg.epsilon, cfg.noise)?;
    let mut audit = UploadAudit::default();
    let mut upload = |delta: Vec<f64>, rng: &mut SimRng| -> Result<Vec<f64>> {
        let p = ldp.perturb(&delta, rng)?;
        audit.record(p.prenoise_norm);
        Ok(p.values)
    };

    let user_delta = upload(diff(&e_u, model.user(user)), rng)?;
    let mut item_deltas = Vec::with_capacity(items.len());
    for (k, row) in &items {
        item_deltas.push((*k, upload(diff(row, model.item(*k)), rng)?));
    }
    let mut filter_deltas = Vec::new();
    for (t, slot) in local_filters.iter().enumerate() {
        if let Some(f) = slot {
            let [w1, b1, w2, b2] = f.diff(&filters[t]);
            filter_deltas.push((t, [upload(w1, rng)?, upload(b1, rng)?, upload(w2, rng)?, upload(b2, rng)?]));
        }
    }

    let epochs = cfg.local_epochs as f64;
    let stats = ClientStats {
        bpr_loss: bpr_sum / steps as f64,
        privacy_loss: use_privacy.then(|| priv_sum / steps as f64),
        filter_ce: (0..n_attrs)
            .map(|t| local_filters[t].as_ref().map(|_| ce_sum[t] / epochs))
            .collect(),
    };
    Ok(ClientUpdate {
        user,
        user_delta,
        item_deltas,
        filter_deltas,
        examples: steps,
        stats,
        audit,
    })
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
