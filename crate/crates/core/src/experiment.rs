//! Experiment configuration and end-to-end pipelines.
//!
//! A configuration is a flat text file of `key = value` lines with `#`
//! comments. Every stage writes its artifacts into the configured output
//! directory, and every CSV ends with a `# config_hash=<hex>` line so that
//! results can be matched to the settings that produced them.
//!
//! Artifacts:
//!
//! | file | stage |
//! |------|-------|
//! | `config.resolved.txt` | all |
//! | `dataset.txt`, `dataset_fingerprint.txt` | ingest |
//! | `rounds.csv`, `checkpoint.bin`, `checkpoints/round_<r>.bin` | train |
//! | `utility.csv` | evaluate |
//! | `attack.csv` | attack |
//! | `protect_trace.csv`, `checkpoint.protected.bin` | protect |
//! | `sweep.csv`, `<param>=<value>/` | sweep |
//! | `FAILED` | any stage that errored |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::attack::{attack_all, write_attack_csv, AttackConfig, AttackReport, DEFAULT_LEAKED_FRACTION};
use crate::centralprotect::{protect_all, read_requests_file, write_trace_csv, ProtectTrace, DEFAULT_PROTECT_LR};
use crate::data::{
    assign_privacy, fingerprint, generate_synthetic, leave_one_out_split, load_movielens, read_dataset_file,
    sample_candidates, write_dataset_file, InteractionDataset, SyntheticParams, UserProfiles, DEFAULT_CANDIDATES,
};
use crate::error::{Error, Result};
use crate::fedprotocol::{train, FedConfig, RoundCsv, ServerState};
use crate::numeric::{derive_seed, SimRng};
use crate::recmodel::{evaluate_users, read_checkpoint_file, write_checkpoint_file, Checkpoint, RankingMetrics, DEFAULT_K};

pub const CONFIG_FILE: &str = "config.resolved.txt";
pub const DATASET_FILE: &str = "dataset.txt";
pub const FINGERPRINT_FILE: &str = "dataset_fingerprint.txt";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const UTILITY_FILE: &str = "utility.csv";
pub const ATTACK_FILE: &str = "attack.csv";
pub const TRACE_FILE: &str = "protect_trace.csv";
pub const PROTECTED_CHECKPOINT_FILE: &str = "checkpoint.protected.bin";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FAILED_FILE: &str = "FAILED";

// RNG stream keys under the experiment seed.
const SYNTH_STREAM: u64 = 10;
const CANDIDATE_STREAM: u64 = 11;
const PRIVACY_STREAM: u64 = 12;
const ATTACK_STREAM: u64 = 13;
const SWEEP_STREAM: u64 = 14;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    MovieLens { ratings: PathBuf, users: PathBuf },
    Synthetic(SyntheticParams),
    /// A file written by the ingest stage; privacy masks are taken as stored.
    Persisted(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub source: DatasetSource,
    pub fed: FedConfig,
    pub alpha: f64,
    pub leaked_fraction: f64,
    pub attack_seed: u64,
    pub k: usize,
    pub candidates: usize,
    pub out: PathBuf,
    /// Write `checkpoints/round_<r>.bin` every this many rounds; 0 disables.
    pub checkpoint_every: usize,
    /// Fill the `wall_ms` column of `rounds.csv`; off by default so that
    /// repeated runs give identical files.
    pub record_wall_ms: bool,
    pub protect_lr: f64,
}

impl ExperimentConfig {
    /// Defaults for everything but the seed, dataset and output directory.
    pub fn new(seed: u64, source: DatasetSource, out: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            seed,
            source,
            fed: FedConfig::new(seed),
            alpha: 0.3,
            leaked_fraction: DEFAULT_LEAKED_FRACTION,
            attack_seed: derive_seed(seed, &[ATTACK_STREAM]),
            k: DEFAULT_K,
            candidates: DEFAULT_CANDIDATES,
            out: out.into(),
            checkpoint_every: 0,
            record_wall_ms: false,
            protect_lr: DEFAULT_PROTECT_LR,
        }
    }

    /// Replace the seed everywhere it is used, re-deriving the attack seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.fed.seed = seed;
        self.attack_seed = derive_seed(seed, &[ATTACK_STREAM]);
    }

    /// Parse configuration text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
            }
            if kv.insert(key.clone(), (n + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        let r = Reader { kv, base };
        let seed: u64 = r.req("seed")?;
        let source = match r.opt_str("dataset").as_deref().unwrap_or("synthetic") {
            "synthetic" => {
                let d = SyntheticParams::default();
                DatasetSource::Synthetic(SyntheticParams {
                    users: r.get("synthetic_users", d.users)?,
                    items: r.get("synthetic_items", d.items)?,
                    attributes: r.get("synthetic_attributes", d.attributes)?,
                    p_in: r.get("p_in", d.p_in)?,
                    p_out: r.get("p_out", d.p_out)?,
                })
            }
            "movielens" => DatasetSource::MovieLens {
                ratings: r.existing_path("ratings")?,
                users: r.existing_path("users")?,
            },
            "persisted" => DatasetSource::Persisted(r.existing_path("dataset_path")?),
            other => return Err(Error::Config(format!("dataset must be synthetic, movielens or persisted, got `{other}`"))),
        };
        let out = r.path("out").unwrap_or_else(|| base.join("out"));
        let mut cfg = ExperimentConfig::new(seed, source, out);
        let f = &mut cfg.fed;
        f.rounds = r.get("rounds", f.rounds)?;
        f.clients_per_round = match r.opt_str("clients_per_round").as_deref() {
            None | Some("auto") => None,
            Some(_) => Some(r.req("clients_per_round")?),
        };
        f.local_epochs = r.get("local_epochs", f.local_epochs)?;
        f.clip_bound = r.get("clip_bound", f.clip_bound)?;
        f.epsilon = r.get("epsilon", f.epsilon)?;
        f.beta = r.get("beta", f.beta)?;
        f.lr_rec = r.get("lr_rec", f.lr_rec)?;
        f.lr_filter = r.get("lr_filter", f.lr_filter)?;
        f.noise = r.get("noise", f.noise)?;
        f.dim = r.get("dim", f.dim)?;
        f.hidden = r.get("hidden", f.hidden)?;
        f.filter_init_scale = r.get("filter_init_scale", f.filter_init_scale)?;
        f.workers = r.get("workers", f.workers)?;
        cfg.alpha = r.get("alpha", cfg.alpha)?;
        cfg.leaked_fraction = r.get("leaked_fraction", cfg.leaked_fraction)?;
        cfg.attack_seed = r.get("attack_seed", cfg.attack_seed)?;
        cfg.k = r.get("k", cfg.k)?;
        cfg.candidates = r.get("candidates", cfg.candidates)?;
        cfg.checkpoint_every = r.get("checkpoint_every", cfg.checkpoint_every)?;
        cfg.record_wall_ms = r.get("record_wall_ms", cfg.record_wall_ms)?;
        cfg.protect_lr = r.get("protect_lr", cfg.protect_lr)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    /// Range checks that need no data. Dataset-dependent checks (clients per
    /// round versus user count) happen when training starts.
    pub fn validate(&self) -> Result<()> {
        let f = &self.fed;
        if !(0.0..=1.0).contains(&f.beta) {
            return Err(Error::param(format!("beta must lie in [0, 1], got {}", f.beta)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(f.epsilon > 0.0) || !(f.clip_bound > 0.0) {
            return Err(Error::param("epsilon and clip_bound must be positive"));
        }
        if f.local_epochs == 0 || f.dim == 0 || f.hidden == 0 || f.workers == 0 {
            return Err(Error::param("local_epochs, dim, hidden and workers must be >= 1"));
        }
        if f.clients_per_round == Some(0) {
            return Err(Error::param("clients_per_round must be >= 1"));
        }
        if !(f.lr_rec >= 0.0 && f.lr_filter >= 0.0 && f.filter_init_scale >= 0.0 && self.protect_lr > 0.0) {
            return Err(Error::param("learning rates and init scale must be non-negative"));
        }
        if !(self.leaked_fraction > 0.0 && self.leaked_fraction < 1.0) {
            return Err(Error::param(format!("leaked_fraction must lie in (0, 1), got {}", self.leaked_fraction)));
        }
        if self.k == 0 || self.candidates == 0 {
            return Err(Error::param("k and candidates must be >= 1"));
        }
        if let DatasetSource::Synthetic(p) = &self.source {
            if !(0.0 <= p.p_out && p.p_out <= p.p_in && p.p_in <= 1.0) {
                return Err(Error::param("need 0 <= p_out <= p_in <= 1"));
            }
            if p.users == 0 || p.items < 2 || p.attributes == 0 || p.attributes > 64 {
                return Err(Error::param("synthetic data needs users, >= 2 items and 1..=64 attributes"));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` rendering of every setting.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let f = &self.fed;
        let _ = writeln!(s, "seed = {}", self.seed);
        match &self.source {
            DatasetSource::Synthetic(p) => {
                let _ = writeln!(s, "dataset = synthetic");
                let _ = writeln!(s, "synthetic_users = {}", p.users);
                let _ = writeln!(s, "synthetic_items = {}", p.items);
                let _ = writeln!(s, "synthetic_attributes = {}", p.attributes);
                let _ = writeln!(s, "p_in = {}", p.p_in);
                let _ = writeln!(s, "p_out = {}", p.p_out);
            }
            DatasetSource::MovieLens { ratings, users } => {
                let _ = writeln!(s, "dataset = movielens");
                let _ = writeln!(s, "ratings = {}", ratings.display());
                let _ = writeln!(s, "users = {}", users.display());
            }
            DatasetSource::Persisted(p) => {
                let _ = writeln!(s, "dataset = persisted");
                let _ = writeln!(s, "dataset_path = {}", p.display());
            }
        }
        let cpr = f.clients_per_round.map_or("auto".to_string(), |m| m.to_string());
        for (k, v) in [
            ("rounds", f.rounds.to_string()),
            ("clients_per_round", cpr),
            ("local_epochs", f.local_epochs.to_string()),
            ("clip_bound", f.clip_bound.to_string()),
            ("epsilon", f.epsilon.to_string()),
            ("beta", f.beta.to_string()),
            ("lr_rec", f.lr_rec.to_string()),
            ("lr_filter", f.lr_filter.to_string()),
            ("noise", f.noise.to_string()),
            ("dim", f.dim.to_string()),
            ("hidden", f.hidden.to_string()),
            ("filter_init_scale", f.filter_init_scale.to_string()),
            ("alpha", self.alpha.to_string()),
            ("leaked_fraction", self.leaked_fraction.to_string()),
            ("attack_seed", self.attack_seed.to_string()),
            ("k", self.k.to_string()),
            ("candidates", self.candidates.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("record_wall_ms", self.record_wall_ms.to_string()),
            ("protect_lr", self.protect_lr.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        if f.seed != self.seed {
            let _ = writeln!(s, "# training seed {}", f.seed);
        }
        s
    }

    /// SHA-256 over the settings that influence results. `workers` and `out`
    /// are excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolved());
        h.update(self.fed.seed.to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Full snapshot including the non-hashed fields.
    pub fn snapshot(&self) -> String {
        format!(
            "{}workers = {}\nout = {}\n# config_hash={}\n",
            self.resolved(),
            self.fed.workers,
            self.out.display(),
            self.hash()
        )
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig { leaked_fraction: self.leaked_fraction, ..AttackConfig::new(self.attack_seed) }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "dataset",
    "synthetic_users",
    "synthetic_items",
    "synthetic_attributes",
    "p_in",
    "p_out",
    "ratings",
    "users",
    "dataset_path",
    "out",
    "rounds",
    "clients_per_round",
    "local_epochs",
    "clip_bound",
    "epsilon",
    "beta",
    "lr_rec",
    "lr_filter",
    "noise",
    "dim",
    "hidden",
    "filter_init_scale",
    "workers",
    "alpha",
    "leaked_fraction",
    "attack_seed",
    "k",
    "candidates",
    "checkpoint_every",
    "record_wall_ms",
    "protect_lr",
];

struct Reader<'a> {
    kv: BTreeMap<String, (usize, String)>,
    base: &'a Path,
}

impl Reader<'_> {
    fn opt_str(&self, key: &str) -> Option<String> {
        self.kv.get(key).map(|(_, v)| v.clone())
    }

    fn req<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self
            .kv
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        v.parse()
            .map_err(|_| Error::Config(format!("line {line}: cannot parse `{key}` from {v:?}")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        if self.kv.contains_key(key) {
            self.req(key)
        } else {
            Ok(default)
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.opt_str(key).map(|v| self.base.join(v))
    }

    fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p = self
            .path(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        if !p.is_file() {
            return Err(Error::Config(format!("`{key}` points to missing file {}", p.display())));
        }
        Ok(p)
    }
}

/// Write a CSV produced by `body`, followed by the config-hash trailer.
pub fn write_csv(path: &Path, hash: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    body(&mut w)?;
    writeln!(w, "# config_hash={hash}")?;
    w.flush()?;
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    let failed = cfg.out_path(FAILED_FILE);
    if failed.exists() {
        fs::remove_file(failed)?;
    }
    fs::write(cfg.out_path(CONFIG_FILE), cfg.snapshot())?;
    Ok(())
}

/// Load or generate the dataset, hold out test items, draw candidates and
/// privacy preferences.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(InteractionDataset, UserProfiles)> {
    let (ds, mut profiles) = match &cfg.source {
        DatasetSource::Persisted(path) => {
            let (ds, profiles) = read_dataset_file(path)?;
            if !ds.has_candidates() {
                let ds = sample_candidates(ds, cfg.candidates, &mut SimRng::derive(cfg.seed, &[CANDIDATE_STREAM]))?;
                return Ok((ds, profiles));
            }
            return Ok((ds, profiles));
        }
        DatasetSource::Synthetic(p) => {
            let s = generate_synthetic(p, &mut SimRng::derive(cfg.seed, &[SYNTH_STREAM]))?;
            (s.dataset, s.profiles)
        }
        DatasetSource::MovieLens { ratings, users } => {
            let ml = load_movielens(ratings, users)?;
            let ds = leave_one_out_split(&ml.interactions)?;
            let profiles = UserProfiles::align(ml.schema, &ml.profiles, &ds)?;
            (ds, profiles)
        }
    };
    let ds = sample_candidates(ds, cfg.candidates, &mut SimRng::derive(cfg.seed, &[CANDIDATE_STREAM]))?;
    assign_privacy(&mut profiles, cfg.alpha, &mut SimRng::derive(cfg.seed, &[PRIVACY_STREAM]))?;
    Ok((ds, profiles))
}

/// Build the dataset and persist it with its fingerprint.
pub fn ingest(cfg: &ExperimentConfig) -> Result<(InteractionDataset, UserProfiles)> {
    prepare_out(cfg)?;
    let (ds, profiles) = build_dataset(cfg)?;
    write_dataset_file(&ds, &profiles, &cfg.out_path(DATASET_FILE))?;
    fs::write(cfg.out_path(FINGERPRINT_FILE), format!("{}\n", fingerprint(&ds, &profiles)?))?;
    log::info!(
        "dataset: {} users, {} items, {} training interactions, {} users dropped",
        ds.num_users(),
        ds.num_items(),
        ds.total_train_interactions(),
        ds.dropped_users()
    );
    Ok((ds, profiles))
}

/// The dataset persisted by [`ingest`], or a fresh one if there is none.
pub fn load_or_ingest(cfg: &ExperimentConfig) -> Result<(InteractionDataset, UserProfiles)> {
    let path = cfg.out_path(DATASET_FILE);
    if path.is_file() {
        read_dataset_file(&path)
    } else {
        ingest(cfg)
    }
}

/// Federated training; writes `rounds.csv` and checkpoints.
pub fn train_stage(cfg: &ExperimentConfig, ds: &InteractionDataset, profiles: &UserProfiles) -> Result<ServerState> {
    fs::create_dir_all(&cfg.out)?;
    let mut server = ServerState::new(ds, profiles, &cfg.fed)?;
    let names: Vec<&str> = profiles.schema().iter().map(|a| a.name.as_str()).collect();
    let hash = cfg.hash();
    let mut csv = RoundCsv::new(
        BufWriter::new(fs::File::create(cfg.out_path(ROUNDS_FILE))?),
        &names,
        cfg.record_wall_ms,
    )?;
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(cfg.out_path("checkpoints"))?;
    }
    train(&mut server, ds, profiles, &cfg.fed, |s, m| {
        csv.write(m)?;
        if cfg.checkpoint_every > 0 && m.round % cfg.checkpoint_every as u64 == 0 {
            let p = cfg.out_path("checkpoints").join(format!("round_{}.bin", m.round));
            write_checkpoint_file(&s.model, &s.filters, &p)?;
        }
        if m.round % 10 == 0 {
            log::info!("round {}: bpr {:.4}", m.round, m.mean_bpr_loss);
        }
        Ok(())
    })?;
    let mut w = csv.into_inner();
    writeln!(w, "# config_hash={hash}")?;
    w.flush()?;
    write_checkpoint_file(&server.model, &server.filters, &cfg.out_path(CHECKPOINT_FILE))?;
    Ok(server)
}

/// HR/NDCG for all users, users with at least one private attribute, and
/// users with none.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityReport {
    pub all: RankingMetrics,
    pub private: Option<RankingMetrics>,
    pub non_private: Option<RankingMetrics>,
}

pub fn utility(model: &crate::RecModel, ds: &InteractionDataset, profiles: &UserProfiles, k: usize) -> Result<UtilityReport> {
    let (private, public): (Vec<usize>, Vec<usize>) =
        (0..ds.num_users()).partition(|&u| !profiles.private_mask(u).is_empty());
    let group = |users: &[usize]| -> Result<Option<RankingMetrics>> {
        if users.is_empty() {
            Ok(None)
        } else {
            evaluate_users(model, ds, k, Some(users)).map(Some)
        }
    };
    Ok(UtilityReport {
        all: evaluate_users(model, ds, k, None)?,
        private: group(&private)?,
        non_private: group(&public)?,
    })
}

pub const UTILITY_CSV_HEADER: &str = "group,users,hr,ndcg,k";

pub fn write_utility_csv(w: &mut dyn Write, r: &UtilityReport, k: usize) -> Result<()> {
    writeln!(w, "{UTILITY_CSV_HEADER}")?;
    for (name, m) in [("all", Some(&r.all)), ("private", r.private.as_ref()), ("non_private", r.non_private.as_ref())] {
        match m {
            Some(m) => writeln!(w, "{name},{},{},{},{k}", m.users, m.hr, m.ndcg)?,
            None => writeln!(w, "{name},0,,,{k}")?,
        }
    }
    Ok(())
}

fn load_checkpoint(cfg: &ExperimentConfig, name: &str) -> Result<Checkpoint> {
    let p = cfg.out_path(name);
    if !p.is_file() {
        return Err(Error::state(format!("{} not found; run the train stage first", p.display())));
    }
    read_checkpoint_file(&p)
}

pub fn evaluate_stage(cfg: &ExperimentConfig, model: &crate::RecModel, ds: &InteractionDataset, profiles: &UserProfiles) -> Result<UtilityReport> {
    let report = utility(model, ds, profiles, cfg.k)?;
    write_csv(&cfg.out_path(UTILITY_FILE), &cfg.hash(), |w| write_utility_csv(w, &report, cfg.k))?;
    Ok(report)
}

pub fn attack_stage(cfg: &ExperimentConfig, model: &crate::RecModel, profiles: &UserProfiles) -> Result<Vec<AttackReport>> {
    let outcome = attack_all(model.user_table(), profiles, &cfg.attack_config())?;
    write_csv(&cfg.out_path(ATTACK_FILE), &cfg.hash(), |w| {
        write_attack_csv(w, &outcome.reports, cfg.attack_seed)
    })?;
    Ok(outcome.reports)
}

/// Central protection for the requests in `requests`; the protected model is
/// written next to the original checkpoint.
pub fn protect_stage(cfg: &ExperimentConfig, requests: &Path) -> Result<Vec<ProtectTrace>> {
    let Checkpoint { mut model, filters } = load_checkpoint(cfg, CHECKPOINT_FILE)?;
    let reqs = read_requests_file(requests, &filters)?;
    let traces = protect_all(&mut model, &filters, &reqs, cfg.protect_lr)?;
    write_csv(&cfg.out_path(TRACE_FILE), &cfg.hash(), |w| write_trace_csv(w, &traces))?;
    write_checkpoint_file(&model, &filters, &cfg.out_path(PROTECTED_CHECKPOINT_FILE))?;
    Ok(traces)
}

/// Saved model for the evaluate and attack subcommands.
pub fn saved_model(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    load_checkpoint(cfg, CHECKPOINT_FILE)
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub utility: UtilityReport,
    pub attacks: Vec<AttackReport>,
    pub rounds: u64,
}

fn mark_failed<T>(cfg: &ExperimentConfig, r: Result<T>) -> Result<T> {
    if let Err(e) = &r {
        if fs::create_dir_all(&cfg.out).is_ok() {
            let _ = fs::write(cfg.out_path(FAILED_FILE), format!("{e}\n"));
        }
    }
    r
}

/// Ingest, train, evaluate and attack. On failure the outputs written so far
/// are kept and a `FAILED` file records the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    mark_failed(cfg, run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let (ds, profiles) = ingest(cfg)?;
    let server = train_stage(cfg, &ds, &profiles)?;
    let utility = evaluate_stage(cfg, &server.model, &ds, &profiles)?;
    let attacks = attack_stage(cfg, &server.model, &profiles)?;
    Ok(ExperimentSummary { utility, attacks, rounds: server.round() })
}

/// Wrap a stage so that failures leave a `FAILED` marker.
pub fn run_stage<T>(cfg: &ExperimentConfig, stage: impl FnOnce() -> Result<T>) -> Result<T> {
    mark_failed(cfg, stage())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Alpha,
    Epsilon,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "alpha" => Ok(SweepParam::Alpha),
            "epsilon" => Ok(SweepParam::Epsilon),
            _ => Err(Error::param(format!("cannot sweep `{s}`; expected beta, alpha or epsilon"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Alpha => "alpha",
            SweepParam::Epsilon => "epsilon",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            SweepParam::Beta => cfg.fed.beta = v,
            SweepParam::Alpha => cfg.alpha = v,
            SweepParam::Epsilon => cfg.fed.epsilon = v,
        }
    }
}

/// Configuration for the `index`-th run of a sweep. The dataset seed is
/// kept; training and attack seeds are derived from it and the run index.
pub fn sweep_config(base: &ExperimentConfig, param: SweepParam, index: usize, value: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    param.apply(&mut cfg, value);
    cfg.fed.seed = derive_seed(base.seed, &[SWEEP_STREAM, index as u64]);
    cfg.attack_seed = derive_seed(base.seed, &[SWEEP_STREAM, index as u64, ATTACK_STREAM]);
    cfg.out = base.out.join(format!("{}={value}", param.name()));
    cfg
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub metric: String,
    pub group: String,
    pub result: f64,
}

pub const SWEEP_CSV_HEADER: &str = "parameter,value,metric,group,result";

/// One full experiment per value, each in its own subdirectory, combined
/// into `sweep.csv`.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::param("sweep needs at least one value"));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| sweep_config(base, param, i, v))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    fs::create_dir_all(&base.out)?;
    fs::write(base.out_path(CONFIG_FILE), base.snapshot())?;
    let mut rows = Vec::new();
    for (c, &v) in configs.iter().zip(values) {
        log::info!("sweep {} = {v}", param.name());
        let s = run_experiment(c)?;
        for (group, m) in [("all", Some(&s.utility.all)), ("private", s.utility.private.as_ref()), ("non_private", s.utility.non_private.as_ref())] {
            if let Some(m) = m {
                rows.push(SweepRow { value: v, metric: format!("hr@{}", base.k), group: group.into(), result: m.hr });
                rows.push(SweepRow { value: v, metric: format!("ndcg@{}", base.k), group: group.into(), result: m.ndcg });
            }
        }
        for a in &s.attacks {
            rows.push(SweepRow { value: v, metric: format!("attack_{}", a.metric), group: a.attribute.clone(), result: a.value });
        }
    }
    rows.sort_by(|a, b| (&a.metric, &a.group).cmp(&(&b.metric, &b.group)).then(a.value.total_cmp(&b.value)));
    write_csv(&base.out_path(SWEEP_FILE), &base.hash(), |w| {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{}", param.name(), r.value, r.metric, r.group, r.result)?;
        }
        Ok(())
    })?;
    Ok(rows)
}
