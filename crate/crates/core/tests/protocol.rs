//! Federated rounds against hand-rolled oracles.

use std::collections::BTreeMap;

use ucfed_core::data::{leave_one_out_split, sample_negative, AttrMask, Attribute, RawInteraction};
use ucfed_core::fedprotocol::{client_rng, run_round, train};
use ucfed_core::numeric::{dot, l2_norm};
use ucfed_core::{AttributeSchema, FedConfig, InteractionDataset, ServerState, SimRng, UserProfiles};

fn toy(users: u64, items: u64, seed: u64) -> (InteractionDataset, UserProfiles) {
    let mut rng = SimRng::new(seed);
    let mut raw = Vec::new();
    for u in 0..users {
        let n = 3 + rng.index(4);
        for t in 0..n {
            raw.push(RawInteraction { user: u, item: rng.index(items as usize) as u64, timestamp: t as i64 });
        }
    }
    // make sure every item id appears so the table has `items` rows
    for i in 0..items {
        raw.push(RawInteraction { user: i % users, item: i, timestamp: -1 });
    }
    let ds = leave_one_out_split(&raw).unwrap();
    let schema = AttributeSchema::new(vec![Attribute { name: "g".into(), classes: 2 }]).unwrap();
    let labels = (0..ds.num_users()).map(|u| vec![u % 2]).collect();
    (ds, UserProfiles::new(schema, labels).unwrap())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clip(mut v: Vec<f64>, bound: f64) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > bound {
        v.iter_mut().for_each(|x| *x *= bound / n);
    }
    v
}

/// Plain federated BPR with per-group clipping, written out longhand.
struct Oracle {
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
}

impl Oracle {
    fn round(&mut self, ds: &InteractionDataset, clients: &[usize], cfg: &FedConfig, round: u64) {
        let mut user_deltas = Vec::new();
        let mut item_sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for &u in clients {
            let mut rng = client_rng(cfg.seed, round, u);
            let mut e_u = self.users[u].clone();
            let mut local: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for _ in 0..cfg.local_epochs {
                for x in ds.train(u) {
                    let (i, j) = (x.item, sample_negative(ds, u, &mut rng));
                    for k in [i, j] {
                        local.entry(k).or_insert_with(|| self.items[k].clone());
                    }
                    let (ei, ej) = (local[&i].clone(), local[&j].clone());
                    let diff: Vec<f64> = ei.iter().zip(&ej).map(|(a, b)| a - b).collect();
                    let c = 1.0 - sigmoid(dot(&e_u, &diff));
                    let lr = cfg.lr_rec;
                    for k in 0..e_u.len() {
                        let gu = -c * diff[k];
                        let gi = -c * e_u[k];
                        let gj = c * e_u[k];
                        e_u[k] -= lr * gu;
                        local.get_mut(&i).unwrap()[k] -= lr * gi;
                        local.get_mut(&j).unwrap()[k] -= lr * gj;
                    }
                }
            }
            let du: Vec<f64> = e_u.iter().zip(&self.users[u]).map(|(a, b)| a - b).collect();
            user_deltas.push((u, clip(du, cfg.clip_bound)));
            for (k, row) in local {
                let d: Vec<f64> = row.iter().zip(&self.items[k]).map(|(a, b)| a - b).collect();
                let d = clip(d, cfg.clip_bound);
                let slot = item_sums.entry(k).or_insert_with(|| (vec![0.0; d.len()], 0));
                slot.0.iter_mut().zip(&d).for_each(|(s, v)| *s += v);
                slot.1 += 1;
            }
        }
        for (u, d) in user_deltas {
            self.users[u].iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        for (k, (sum, n)) in item_sums {
            self.items[k].iter_mut().zip(&sum).for_each(|(a, b)| *a += b / n as f64);
        }
    }

    fn max_gap(&self, server: &ServerState) -> f64 {
        let mut gap: f64 = 0.0;
        for (u, row) in self.users.iter().enumerate() {
            for (a, b) in row.iter().zip(server.model.user(u)) {
                gap = gap.max((a - b).abs());
            }
        }
        for (i, row) in self.items.iter().enumerate() {
            for (a, b) in row.iter().zip(server.model.item(i)) {
                gap = gap.max((a - b).abs());
            }
        }
        gap
    }
}

#[test]
fn five_user_rounds_match_longhand_federated_bpr() {
    let (ds, mut profiles) = toy(5, 10, 1);
    assert_eq!((ds.num_users(), ds.num_items()), (5, 10));
    // privacy preferences must not matter at beta = 0
    profiles.set_private_mask(1, AttrMask::full(1)).unwrap();
    let cfg = FedConfig {
        beta: 0.0,
        noise: false,
        clients_per_round: Some(5),
        clip_bound: 0.05,
        dim: 6,
        hidden: 4,
        lr_rec: 0.5,
        ..FedConfig::new(3)
    };
    let mut server = ServerState::new(&ds, &profiles, &cfg).unwrap();
    let mut oracle = Oracle {
        users: (0..5).map(|u| server.model.user(u).to_vec()).collect(),
        items: (0..10).map(|i| server.model.item(i).to_vec()).collect(),
    };
    for r in 0..8 {
        run_round(&mut server, &ds, &profiles, &cfg).unwrap();
        oracle.round(&ds, &[0, 1, 2, 3, 4], &cfg, r);
        let gap = oracle.max_gap(&server);
        assert!(gap <= 1e-12, "round {r}: gap {gap:e}");
    }
}

#[test]
fn partial_participation_matches_longhand_oracle() {
    let (ds, profiles) = toy(5, 10, 2);
    let cfg = FedConfig { beta: 0.0, noise: false, clients_per_round: Some(2), dim: 4, hidden: 3, ..FedConfig::new(8) };
    let mut server = ServerState::new(&ds, &profiles, &cfg).unwrap();
    let mut oracle = Oracle {
        users: (0..5).map(|u| server.model.user(u).to_vec()).collect(),
        items: (0..10).map(|i| server.model.item(i).to_vec()).collect(),
    };
    // replay the server's client choice with an identically seeded twin
    let mut twin = ServerState::new(&ds, &profiles, &cfg).unwrap();
    for r in 0..10 {
        let clients = twin.sample_clients(5, 2).unwrap();
        run_round(&mut server, &ds, &profiles, &cfg).unwrap();
        oracle.round(&ds, &clients, &cfg, r);
        assert!(oracle.max_gap(&server) <= 1e-12);
    }
}

#[test]
fn single_client_loss_decreases_without_noise() {
    let (ds, profiles) = toy(1, 12, 3);
    let cfg = FedConfig { beta: 0.0, noise: false, rounds: 10, dim: 8, hidden: 4, lr_rec: 0.5, clip_bound: 10.0, ..FedConfig::new(4) };
    let mut server = ServerState::new(&ds, &profiles, &cfg).unwrap();
    let m = train(&mut server, &ds, &profiles, &cfg, |_, _| Ok(())).unwrap();
    let losses: Vec<f64> = m.iter().map(|r| r.mean_bpr_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}
