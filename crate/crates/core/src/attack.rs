//! Attribute-inference attack on server-held user embeddings.
//!
//! For each attribute the attacker learns from a stratified fraction of the
//! users whose label has leaked (those who disclosed it) and is scored on
//! the users who declared it private. Binary attributes report AUC, the
//! rest micro-F1.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use crate::data::UserProfiles;
use crate::error::{Error, Result};
use crate::filters::{filter_train_step, AttributeFilter, DEFAULT_HIDDEN, DEFAULT_INIT_SCALE};
use crate::numeric::{Matrix, SimRng};

pub const DEFAULT_LEAKED_FRACTION: f64 = 0.8;
pub const DEFAULT_ATTACK_STEPS: usize = 300;
pub const DEFAULT_ATTACK_LR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Auc,
    MicroF1,
}

impl MetricKind {
    pub fn for_classes(classes: usize) -> Self {
        if classes == 2 {
            MetricKind::Auc
        } else {
            MetricKind::MicroF1
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Auc => "auc",
            MetricKind::MicroF1 => "micro_f1",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub attribute: String,
    pub metric: MetricKind,
    pub value: f64,
    pub leaked_fraction: f64,
    pub n_train: usize,
    pub n_targets: usize,
    /// `true` when nobody kept the attribute private and the attacker was
    /// scored on disclosed users held out of its training set instead.
    pub held_out_fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub leaked_fraction: f64,
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    /// Weights start as `N(0, (init_scale / sqrt(fan_in))^2)`, as for filters.
    pub init_scale: f64,
    /// Z-score each embedding coordinate with statistics of the training set.
    pub standardize: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(seed: u64) -> Self {
        AttackConfig {
            leaked_fraction: DEFAULT_LEAKED_FRACTION,
            hidden: DEFAULT_HIDDEN,
            steps: DEFAULT_ATTACK_STEPS,
            lr: DEFAULT_ATTACK_LR,
            init_scale: DEFAULT_INIT_SCALE,
            standardize: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.leaked_fraction > 0.0 && self.leaked_fraction < 1.0) {
            return Err(Error::param(format!("leaked fraction must lie in (0, 1), got {}", self.leaked_fraction)));
        }
        if self.hidden == 0 || self.steps == 0 {
            return Err(Error::param("attacker needs a hidden layer and at least one step"));
        }
        if !(self.lr > 0.0 && self.init_scale > 0.0) {
            return Err(Error::param("attacker lr and init scale must be positive"));
        }
        Ok(())
    }
}

/// A trained attacker: an optional input standardiser plus a classifier.
#[derive(Clone, Debug)]
pub struct Attacker {
    shift: Vec<f64>,
    scale: Vec<f64>,
    classifier: AttributeFilter,
}

impl Attacker {
    fn prepare(&self, h: &[f64]) -> Vec<f64> {
        h.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn predict_proba(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.classifier.forward(&self.prepare(h))
    }

    pub fn predict(&self, h: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(h)?))
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// Split `pool` by class and take `round(fraction · n_c)` of each class
/// (clamped so both sides are non-empty when `n_c ≥ 2`). Returns
/// `(train, held_out)`, each ascending.
pub fn stratified_split(pool: &[usize], labels: &[usize], fraction: f64, rng: &mut SimRng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &u in pool {
        by_class.entry(labels[u]).or_default().push(u);
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        shuffle(&mut members, rng);
        let n = members.len();
        let mut k = (fraction * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        }
        held.extend_from_slice(&members[k.min(n)..]);
        members.truncate(k.min(n));
        train.extend(members);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

fn shuffle(v: &mut [usize], rng: &mut SimRng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.index(i + 1));
    }
}

/// Train an attacker on the rows `train` of `embeddings`.
pub fn fit_attacker(
    embeddings: &Matrix,
    labels: &[usize],
    classes: usize,
    train: &[usize],
    cfg: &AttackConfig,
    rng: &mut SimRng,
) -> Result<Attacker> {
    cfg.validate()?;
    if labels.len() != embeddings.rows() {
        return Err(Error::dim("one label per embedding row required"));
    }
    let present: std::collections::BTreeSet<usize> = train.iter().map(|&u| labels[u]).collect();
    if present.len() < 2 {
        return Err(Error::Training(format!(
            "leaked set covers {} class(es); attacker needs at least 2",
            present.len()
        )));
    }
    if let Some(&bad) = present.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!("label {bad} outside {classes} classes")));
    }
    let d = embeddings.cols();
    let (shift, scale) = if cfg.standardize {
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for &u in train {
            for (m, &x) in mean.iter_mut().zip(embeddings.row(u)) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for &u in train {
            for ((v, &x), &m) in var.iter_mut().zip(embeddings.row(u)).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let sd = var.iter().map(|&v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        (mean, sd)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let mut attacker = Attacker {
        shift,
        scale,
        classifier: AttributeFilter::random("attacker", classes, cfg.hidden, d, cfg.init_scale, rng),
    };
    let inputs: Vec<Vec<f64>> = train.iter().map(|&u| attacker.prepare(embeddings.row(u))).collect();
    let batch: Vec<(&[f64], usize)> = inputs.iter().zip(train).map(|(h, &u)| (h.as_slice(), labels[u])).collect();
    for _ in 0..cfg.steps {
        filter_train_step(&mut attacker.classifier, &batch, cfg.lr)?;
    }
    if !attacker.classifier.is_finite() {
        return Err(Error::Training("attacker diverged".into()));
    }
    Ok(attacker)
}

/// Train an attacker on a stratified `leaked_fraction` of all rows. Returns
/// the attacker and the held-out rows.
pub fn train_attacker(
    embeddings: &Matrix,
    labels: &[usize],
    classes: usize,
    cfg: &AttackConfig,
    rng: &mut SimRng,
) -> Result<(Attacker, Vec<usize>)> {
    cfg.validate()?;
    let pool: Vec<usize> = (0..embeddings.rows()).collect();
    if labels.len() != pool.len() {
        return Err(Error::dim("one label per embedding row required"));
    }
    let (train, held) = stratified_split(&pool, labels, cfg.leaked_fraction, rng);
    Ok((fit_attacker(embeddings, labels, classes, &train, cfg, rng)?, held))
}

/// Mann–Whitney AUC: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::param("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::dim(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    if pred.is_empty() {
        return Err(Error::param("no predictions"));
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Micro-averaged F1 from pooled per-class TP/FP/FN counts. For
/// single-label predictions this equals accuracy.
pub fn micro_f1(pred: &[usize], labels: &[usize]) -> Result<f64> {
    accuracy(pred, labels)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    let classes = pred.iter().chain(labels).copied().max().unwrap_or(0) + 1;
    for c in 0..classes {
        for (&p, &y) in pred.iter().zip(labels) {
            match (p == c, y == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                _ => {}
            }
        }
    }
    let (tp, fp, fne) = (tp as f64, fp as f64, fne as f64);
    Ok(2.0 * tp / (2.0 * tp + fp + fne))
}

/// Score `attacker` on `targets`.
pub fn score_attacker(attacker: &Attacker, embeddings: &Matrix, labels: &[usize], targets: &[usize]) -> Result<f64> {
    if attacker.classes() == 2 {
        let mut scores = Vec::with_capacity(targets.len());
        for &u in targets {
            scores.push(attacker.predict_proba(embeddings.row(u))?[1]);
        }
        let truth: Vec<bool> = targets.iter().map(|&u| labels[u] == 1).collect();
        auc(&scores, &truth)
    } else {
        let pred = targets
            .iter()
            .map(|&u| attacker.predict(embeddings.row(u)))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<usize> = targets.iter().map(|&u| labels[u]).collect();
        micro_f1(&pred, &truth)
    }
}

/// Attack attribute `t`. Read-only with respect to `embeddings`.
pub fn attack_attribute(
    embeddings: &Matrix,
    profiles: &UserProfiles,
    t: usize,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    cfg.validate()?;
    let attr = profiles
        .schema()
        .get(t)
        .ok_or_else(|| Error::Index(format!("attribute {t} not in schema")))?;
    if embeddings.rows() != profiles.num_users() {
        return Err(Error::dim("embedding table and profiles disagree on user count"));
    }
    let labels = profiles.column(t);
    let mut rng = SimRng::derive(cfg.seed, &[t as u64]);
    let private: Vec<usize> = (0..labels.len()).filter(|&u| profiles.is_private(u, t)).collect();
    let disclosed: Vec<usize> = (0..labels.len()).filter(|&u| !profiles.is_private(u, t)).collect();
    let (train, targets, fallback) = if private.is_empty() {
        let (tr, held) = stratified_split(&disclosed, &labels, cfg.leaked_fraction, &mut rng);
        (tr, held, true)
    } else {
        let (tr, _) = stratified_split(&disclosed, &labels, cfg.leaked_fraction, &mut rng);
        (tr, private, false)
    };
    if targets.is_empty() {
        return Err(Error::Training(format!("no users to attack for {}", attr.name)));
    }
    let attacker = fit_attacker(embeddings, &labels, attr.classes, &train, cfg, &mut rng)?;
    let value = score_attacker(&attacker, embeddings, &labels, &targets)?;
    Ok(AttackReport {
        attribute: attr.name.clone(),
        metric: MetricKind::for_classes(attr.classes),
        value,
        leaked_fraction: cfg.leaked_fraction,
        n_train: train.len(),
        n_targets: targets.len(),
        held_out_fallback: fallback,
    })
}

/// Reports for every attribute that could be attacked, plus the ones that
/// were skipped and why.
#[derive(Debug, Default)]
pub struct AttackOutcome {
    pub reports: Vec<AttackReport>,
    pub skipped: Vec<(String, Error)>,
}

pub fn attack_all(embeddings: &Matrix, profiles: &UserProfiles, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let mut out = AttackOutcome::default();
    for (t, attr) in profiles.schema().iter().enumerate() {
        match attack_attribute(embeddings, profiles, t, cfg) {
            Ok(r) => out.reports.push(r),
            Err(e @ (Error::Training(_) | Error::Parameter(_))) => {
                log::warn!("attack on {} skipped: {e}", attr.name);
                out.skipped.push((attr.name.clone(), e));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub const ATTACK_CSV_HEADER: &str = "attribute,metric,value,leaked_fraction,n_targets,seed";

pub fn write_attack_csv(mut w: impl Write, reports: &[AttackReport], seed: u64) -> Result<()> {
    writeln!(w, "{ATTACK_CSV_HEADER}")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{},{}", r.attribute, r.metric, r.value, r.leaked_fraction, r.n_targets, seed)?;
    }
    Ok(())
}
