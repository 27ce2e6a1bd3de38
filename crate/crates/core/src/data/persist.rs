//! Line-oriented dataset file.
//!
//! ```text
//! UCFED-DS v1
//! users=<U> items=<I> candidates=<K> dropped=<D>
//! attribute=<name>:<classes>            (one line per attribute, in order)
//! items=<raw id of dense item 0>,<raw id of dense item 1>,...
//! raw=<id>\ttrain=<item>:<ts>,...\ttest=<item>:<ts>\tcand=<item>,...\tlabels=<y>,...\tprivate=<t>,...
//! ```
//!
//! User lines appear in dense-id order. Item ids in user lines are dense.
//! `K` is 0 when candidates have not been sampled; empty lists are written
//! as nothing after the `=`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AttrMask, Attribute, AttributeSchema, Interaction, InteractionDataset, UserProfiles};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "UCFED-DS v1";

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format { what: "dataset file", msg: msg.into() }
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_dataset(ds: &InteractionDataset, profiles: &UserProfiles, mut w: impl Write) -> Result<()> {
    w.write_all(render(ds, profiles)?.as_bytes())?;
    Ok(())
}

pub fn write_dataset_file(ds: &InteractionDataset, profiles: &UserProfiles, path: &Path) -> Result<()> {
    fs::write(path, render(ds, profiles)?)?;
    Ok(())
}

/// SHA-256 over the canonical serialized form, hex encoded.
pub fn fingerprint(ds: &InteractionDataset, profiles: &UserProfiles) -> Result<String> {
    Ok(hex::encode(Sha256::digest(render(ds, profiles)?.as_bytes())))
}

fn render(ds: &InteractionDataset, profiles: &UserProfiles) -> Result<String> {
    if profiles.num_users() != ds.num_users() {
        return Err(Error::dim(format!(
            "{} profiles for {} users",
            profiles.num_users(),
            ds.num_users()
        )));
    }
    let k = ds.candidates(0).map_or(0, <[usize]>::len);
    let mut s = String::new();
    writeln!(s, "{DATASET_MAGIC}").unwrap();
    writeln!(
        s,
        "users={} items={} candidates={k} dropped={}",
        ds.num_users(),
        ds.num_items(),
        ds.dropped_users()
    )
    .unwrap();
    for a in profiles.schema().iter() {
        if a.name.is_empty() || a.name.contains([':', ',', '\t', '\n', ' ']) {
            return Err(fmt_err(format!("attribute name {:?} cannot be persisted", a.name)));
        }
        writeln!(s, "attribute={}:{}", a.name, a.classes).unwrap();
    }
    writeln!(s, "items={}", join(ds.item_ids())).unwrap();
    for u in 0..ds.num_users() {
        let t = ds.test(u);
        writeln!(
            s,
            "raw={}\ttrain={}\ttest={}:{}\tcand={}\tlabels={}\tprivate={}",
            ds.user_ids()[u],
            join(ds.train(u).iter().map(|r| format!("{}:{}", r.item, r.timestamp))),
            t.item,
            t.timestamp,
            join(ds.candidates(u).unwrap_or(&[]).iter()),
            join(profiles.labels(u).iter()),
            join(profiles.private_mask(u).iter()),
        )
        .unwrap();
    }
    Ok(s)
}

pub fn read_dataset_file(path: &Path) -> Result<(InteractionDataset, UserProfiles)> {
    read_dataset(fs::File::open(path)?)
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| fmt_err(format!("line {line}: bad {what} {s:?}")))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| parse_num(x, what, line)).collect()
}

fn parse_pair(s: &str, line: usize) -> Result<Interaction> {
    let (i, t) = s
        .split_once(':')
        .ok_or_else(|| fmt_err(format!("line {line}: expected item:timestamp, got {s:?}")))?;
    Ok(Interaction {
        item: parse_num(i, "item", line)?,
        timestamp: parse_num(t, "timestamp", line)?,
    })
}

fn field<'a>(part: Option<&'a str>, key: &str, line: usize) -> Result<&'a str> {
    part.and_then(|p| p.strip_prefix(key))
        .and_then(|p| p.strip_prefix('='))
        .ok_or_else(|| fmt_err(format!("line {line}: expected field {key}")))
}

pub fn read_dataset(r: impl Read) -> Result<(InteractionDataset, UserProfiles)> {
    let mut lines = BufReader::new(r).lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(fmt_err(format!("unexpected end of file, expected {what}"))),
        }
    };

    let (_, magic) = next("magic")?;
    if magic != DATASET_MAGIC {
        return Err(fmt_err(format!("bad magic {magic:?}")));
    }
    let (n, header) = next("header")?;
    let mut parts = header.split(' ');
    let users: usize = parse_num(field(parts.next(), "users", n)?, "users", n)?;
    let items: usize = parse_num(field(parts.next(), "items", n)?, "items", n)?;
    let k: usize = parse_num(field(parts.next(), "candidates", n)?, "candidates", n)?;
    let dropped: usize = parse_num(field(parts.next(), "dropped", n)?, "dropped", n)?;

    let mut attrs = Vec::new();
    let item_ids: Vec<u64> = loop {
        let (n, l) = next("attribute or items line")?;
        if let Some(rest) = l.strip_prefix("attribute=") {
            let (name, c) = rest
                .rsplit_once(':')
                .ok_or_else(|| fmt_err(format!("line {n}: bad attribute {rest:?}")))?;
            attrs.push(Attribute { name: name.to_string(), classes: parse_num(c, "classes", n)? });
        } else if let Some(rest) = l.strip_prefix("items=") {
            break parse_list(rest, "item id", n)?;
        } else {
            return Err(fmt_err(format!("line {n}: unexpected {l:?}")));
        }
    };
    if item_ids.len() != items {
        return Err(fmt_err(format!("{} item ids for {items} items", item_ids.len())));
    }
    let schema = AttributeSchema::new(attrs)?;

    let mut user_ids = Vec::with_capacity(users);
    let mut train = Vec::with_capacity(users);
    let mut test = Vec::with_capacity(users);
    let mut cands = Vec::with_capacity(users);
    let mut labels = Vec::with_capacity(users);
    let mut masks = Vec::with_capacity(users);
    for _ in 0..users {
        let (n, l) = next("user line")?;
        let mut parts = l.split('\t');
        user_ids.push(parse_num::<u64>(field(parts.next(), "raw", n)?, "raw id", n)?);
        let tr = field(parts.next(), "train", n)?;
        train.push(if tr.is_empty() {
            Vec::new()
        } else {
            tr.split(',').map(|p| parse_pair(p, n)).collect::<Result<Vec<_>>>()?
        });
        test.push(parse_pair(field(parts.next(), "test", n)?, n)?);
        let c: Vec<usize> = parse_list(field(parts.next(), "cand", n)?, "candidate", n)?;
        if c.len() != k {
            return Err(fmt_err(format!("line {n}: {} candidates, header says {k}", c.len())));
        }
        cands.push(c);
        labels.push(parse_list(field(parts.next(), "labels", n)?, "label", n)?);
        let mask: Vec<usize> = parse_list(field(parts.next(), "private", n)?, "attribute id", n)?;
        if mask.iter().any(|&t| t >= schema.len()) {
            return Err(fmt_err(format!("line {n}: private mask references unknown attribute")));
        }
        masks.push(AttrMask::from_ids(mask));
    }
    if let Some((n, Ok(l))) = lines.next() {
        if !l.trim().is_empty() {
            return Err(fmt_err(format!("line {n}: trailing content")));
        }
    }
    if k == 0 {
        cands.clear();
    }
    let ds = InteractionDataset::from_parts(items, train, test, cands, user_ids, item_ids, dropped)?;
    let mut profiles = UserProfiles::new(schema, labels)?;
    for (u, m) in masks.into_iter().enumerate() {
        profiles.set_private_mask(u, m)?;
    }
    Ok((ds, profiles))
}
