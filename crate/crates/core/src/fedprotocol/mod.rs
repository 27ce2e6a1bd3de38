//! Simulated federated rounds.
//!
//! The server samples clients uniformly without replacement, each client
//! trains on a private copy of the global parameters with its own derived
//! RNG, and the server folds the perturbed deltas back in ascending user-id
//! order. Results are therefore independent of the worker count.

mod client;
mod ldp;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use client::{client_local_train, ClientStats, ClientUpdate, UploadAudit};
pub use ldp::{ldp_perturb, LdpMechanism, Perturbed};

use crate::data::{InteractionDataset, UserProfiles};
use crate::error::{Error, Result};
use crate::filters::{AttributeFilter, FilterTensors, DEFAULT_HIDDEN, DEFAULT_INIT_SCALE};
use crate::numeric::{axpy, SimRng};
use crate::recmodel::{checkpoint, RecModel, DEFAULT_DIM};

#[derive(Clone, Debug, PartialEq)]
pub struct FedConfig {
    pub rounds: usize,
    /// Clients per round; `None` means `max(1, ceil(0.1·|U|))`.
    pub clients_per_round: Option<usize>,
    pub local_epochs: usize,
    pub clip_bound: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub lr_rec: f64,
    pub lr_filter: f64,
    /// `false` disables Laplace noise (clipping still applies).
    pub noise: bool,
    pub dim: usize,
    pub hidden: usize,
    pub filter_init_scale: f64,
    pub seed: u64,
    /// Upper bound on concurrently trained clients. Does not affect results.
    pub workers: usize,
}

impl FedConfig {
    pub fn new(seed: u64) -> Self {
        FedConfig {
            rounds: 200,
            clients_per_round: None,
            local_epochs: 2,
            clip_bound: 0.5,
            epsilon: 1.0,
            beta: 0.5,
            lr_rec: 0.1,
            lr_filter: 0.01,
            noise: true,
            dim: DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN,
            filter_init_scale: DEFAULT_INIT_SCALE,
            seed,
            workers: 1,
        }
    }

    pub fn clients_for(&self, num_users: usize) -> usize {
        self.clients_per_round
            .unwrap_or_else(|| ((num_users as f64 * 0.1).ceil() as usize).max(1))
    }

    pub fn validate(&self, num_users: usize) -> Result<()> {
        let m = self.clients_for(num_users);
        if m == 0 || m > num_users {
            return Err(Error::param(format!("{m} clients per round for {num_users} users")));
        }
        if self.local_epochs == 0 {
            return Err(Error::param("local epochs must be >= 1"));
        }
        LdpMechanism::new(self.clip_bound, self.epsilon, self.noise)?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.lr_rec >= 0.0 && self.lr_filter >= 0.0) {
            return Err(Error::param("learning rates must be >= 0"));
        }
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::param("dimensions must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::param("workers must be >= 1"));
        }
        Ok(())
    }
}

/// Generator for `user`'s local training in `round`.
pub fn client_rng(seed: u64, round: u64, user: usize) -> SimRng {
    SimRng::derive(seed, &[1, round, user as u64])
}

const INIT_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 2;

#[derive(Debug)]
pub struct ServerState {
    pub model: RecModel,
    pub filters: Vec<AttributeFilter>,
    round: u64,
    rng: SimRng,
    pool: Arc<rayon::ThreadPool>,
}

impl ServerState {
    /// Fresh global parameters for `ds`. Fails on invalid configuration or
    /// when there is nothing to train on.
    pub fn new(ds: &InteractionDataset, profiles: &UserProfiles, cfg: &FedConfig) -> Result<Self> {
        cfg.validate(ds.num_users())?;
        if ds.total_train_interactions() == 0 {
            return Err(Error::param("dataset has no training interactions"));
        }
        if profiles.num_users() != ds.num_users() {
            return Err(Error::dim("profiles and dataset disagree on user count"));
        }
        let mut init = SimRng::derive(cfg.seed, &[INIT_STREAM]);
        let model = RecModel::new(ds.num_users(), ds.num_items(), cfg.dim, &mut init);
        let filters = profiles
            .schema()
            .iter()
            .map(|a| AttributeFilter::random(&a.name, a.classes, cfg.hidden, cfg.dim, cfg.filter_init_scale, &mut init))
            .collect();
        ServerState::from_parts(model, filters, cfg)
    }

    pub fn from_parts(model: RecModel, filters: Vec<AttributeFilter>, cfg: &FedConfig) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers.max(1))
            .build()
            .map_err(|e| Error::state(format!("thread pool: {e}")))?;
        Ok(ServerState {
            model,
            filters,
            round: 0,
            rng: SimRng::derive(cfg.seed, &[SAMPLING_STREAM]),
            pool: Arc::new(pool),
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// SHA-256 of the round counter and the checkpoint bytes.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.round.to_le_bytes());
        h.update(checkpoint::encode(&self.model, &self.filters));
        hex::encode(h.finalize())
    }

    /// Clients for the next round, ascending.
    pub fn sample_clients(&mut self, num_users: usize, m: usize) -> Result<Vec<usize>> {
        if m > num_users {
            return Err(Error::param(format!("{m} clients requested from {num_users} users")));
        }
        let mut picked = index::sample(&mut self.rng, num_users, m).into_vec();
        picked.sort_unstable();
        Ok(picked)
    }

    /// Train the given clients against the current global parameters.
    pub fn collect_updates(
        &self,
        clients: &[usize],
        ds: &InteractionDataset,
        profiles: &UserProfiles,
        cfg: &FedConfig,
    ) -> Result<Vec<ClientUpdate>> {
        let round = self.round;
        let (model, filters) = (&self.model, &self.filters);
        self.pool.install(|| {
            clients
                .par_iter()
                .map(|&u| {
                    let mut rng = client_rng(cfg.seed, round, u);
                    client_local_train(model, filters, ds, profiles, u, cfg, &mut rng)
                })
                .collect()
        })
    }
}

/// Fold client uploads into the global parameters.
///
/// User rows take their owner's delta. Item rows and filters move by the
/// mean delta over the clients that uploaded one; others stay unchanged.
pub fn aggregate(server: &mut ServerState, mut updates: Vec<ClientUpdate>) -> Result<()> {
    updates.sort_by_key(|u| u.user);
    if let Some(w) = updates.windows(2).find(|w| w[0].user == w[1].user) {
        return Err(Error::Protocol(format!("user {} uploaded twice in one round", w[0].user)));
    }
    let d = server.model.dim();
    let mut item_sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut filter_sums: BTreeMap<usize, (FilterTensors, usize)> = BTreeMap::new();
    for up in &updates {
        if up.user >= server.model.num_users() || up.user_delta.len() != d {
            return Err(Error::Protocol(format!("malformed update from user {}", up.user)));
        }
        for (i, delta) in &up.item_deltas {
            if *i >= server.model.num_items() || delta.len() != d {
                return Err(Error::Protocol(format!("user {} sent a bad item delta", up.user)));
            }
            let slot = item_sums.entry(*i).or_insert_with(|| (vec![0.0; d], 0));
            axpy(1.0, delta, &mut slot.0);
            slot.1 += 1;
        }
        for (t, delta) in &up.filter_deltas {
            let f = server
                .filters
                .get(*t)
                .ok_or_else(|| Error::Protocol(format!("user {} sent a delta for filter {t}", up.user)))?;
            let shapes_ok = f.tensors().iter().zip(delta).all(|(p, q)| p.len() == q.len());
            if !shapes_ok {
                return Err(Error::Protocol(format!("user {} sent a misshapen filter delta", up.user)));
            }
            let slot = filter_sums.entry(*t).or_insert_with(|| (f.zero_tensors(), 0));
            for (acc, q) in slot.0.iter_mut().zip(delta) {
                axpy(1.0, q, acc);
            }
            slot.1 += 1;
        }
    }
    for up in &updates {
        axpy(1.0, &up.user_delta, server.model.user_mut(up.user));
    }
    for (i, (sum, n)) in item_sums {
        axpy(1.0 / n as f64, &sum, server.model.item_mut(i));
    }
    for (t, (sum, n)) in filter_sums {
        server.filters[t].add_scaled(1.0 / n as f64, &sum);
    }
    if !server.model.is_finite() || !server.filters.iter().all(AttributeFilter::is_finite) {
        return Err(Error::state("non-finite parameters after aggregation"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    /// 1-based index of the completed round.
    pub round: u64,
    pub clients: usize,
    pub mean_bpr_loss: f64,
    pub mean_privacy_loss: Option<f64>,
    pub mean_filter_ce: Vec<Option<f64>>,
    pub wall_ms: u128,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(round: u64, updates: &[ClientUpdate], n_attrs: usize, wall_ms: u128) -> RoundMetrics {
    RoundMetrics {
        round,
        clients: updates.len(),
        mean_bpr_loss: mean(updates.iter().map(|u| u.stats.bpr_loss)).unwrap_or(f64::NAN),
        mean_privacy_loss: mean(updates.iter().filter_map(|u| u.stats.privacy_loss)),
        mean_filter_ce: (0..n_attrs)
            .map(|t| mean(updates.iter().filter_map(|u| u.stats.filter_ce[t])))
            .collect(),
        wall_ms,
    }
}

/// One full round: sample, train locally, aggregate, advance the counter.
pub fn run_round(
    server: &mut ServerState,
    ds: &InteractionDataset,
    profiles: &UserProfiles,
    cfg: &FedConfig,
) -> Result<RoundMetrics> {
    run_round_observed(server, ds, profiles, cfg, |_| {})
}

/// [`run_round`], showing every upload to `observe` before aggregation.
pub fn run_round_observed(
    server: &mut ServerState,
    ds: &InteractionDataset,
    profiles: &UserProfiles,
    cfg: &FedConfig,
    mut observe: impl FnMut(&ClientUpdate),
) -> Result<RoundMetrics> {
    let start = Instant::now();
    let m = cfg.clients_for(ds.num_users());
    let clients = server.sample_clients(ds.num_users(), m)?;
    let updates = server.collect_updates(&clients, ds, profiles, cfg)?;
    updates.iter().for_each(&mut observe);
    let n_attrs = profiles.schema().len();
    let round = server.round + 1;
    let summary_wo_time = summarize(round, &updates, n_attrs, 0);
    aggregate(server, updates)?;
    server.round = round;
    Ok(RoundMetrics {
        wall_ms: start.elapsed().as_millis(),
        ..summary_wo_time
    })
}

/// Run `cfg.rounds` rounds, handing each round's metrics to `on_round`.
pub fn train(
    server: &mut ServerState,
    ds: &InteractionDataset,
    profiles: &UserProfiles,
    cfg: &FedConfig,
    mut on_round: impl FnMut(&ServerState, &RoundMetrics) -> Result<()>,
) -> Result<Vec<RoundMetrics>> {
    let mut all = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let m = run_round(server, ds, profiles, cfg)?;
        on_round(server, &m)?;
        all.push(m);
    }
    Ok(all)
}

/// CSV writer for [`RoundMetrics`]:
/// `round,mean_bpr_loss,mean_privacy_loss,filter_ce_<attr>...,wall_ms`.
///
/// Empty cells mean "no contributor this round". `wall_ms` is only filled
/// in when `record_wall_time` is set, so that repeated runs produce
/// identical files by default.
pub struct RoundCsv<W: Write> {
    out: W,
    record_wall_time: bool,
}

impl<W: Write> RoundCsv<W> {
    pub fn new(mut out: W, attribute_names: &[&str], record_wall_time: bool) -> Result<Self> {
        let mut header = String::from("round,mean_bpr_loss,mean_privacy_loss");
        for name in attribute_names {
            header.push_str(&format!(",filter_ce_{name}"));
        }
        header.push_str(",wall_ms\n");
        out.write_all(header.as_bytes())?;
        Ok(RoundCsv { out, record_wall_time })
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = format!("{},{},{}", m.round, m.mean_bpr_loss, opt(m.mean_privacy_loss));
        for ce in &m.mean_filter_ce {
            row.push(',');
            row.push_str(&opt(*ce));
        }
        let wall = if self.record_wall_time { m.wall_ms } else { 0 };
        row.push_str(&format!(",{wall}\n"));
        self.out.write_all(row.as_bytes())?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
