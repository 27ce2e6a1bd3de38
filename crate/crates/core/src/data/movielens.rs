//! MovieLens-1M `::`-delimited files.
//!
//! `ratings.dat`: `UserID::MovieID::Rating::Timestamp`
//! `users.dat`:   `UserID::Gender::Age::Occupation::Zip-code`
//!
//! Every rating is an implicit positive regardless of its value.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Attribute, AttributeSchema, RawInteraction};
use crate::error::{Error, Result};

/// Age codes used by MovieLens-1M; the class index is the position here.
pub const AGE_BUCKETS: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];
const OCCUPATIONS: usize = 21;

#[derive(Clone, Debug)]
pub struct MovieLens {
    pub interactions: Vec<RawInteraction>,
    /// Labels `[gender, age, occupation]` per raw user id.
    pub profiles: BTreeMap<u64, Vec<usize>>,
    pub schema: AttributeSchema,
}

pub fn movielens_schema() -> AttributeSchema {
    AttributeSchema::new(vec![
        Attribute { name: "gender".into(), classes: 2 },
        Attribute { name: "age".into(), classes: AGE_BUCKETS.len() },
        Attribute { name: "occupation".into(), classes: OCCUPATIONS },
    ])
    .expect("static schema")
}

/// Load both files. Ratings of users without a complete profile are
/// discarded along with those users.
pub fn load_movielens(ratings: &Path, users: &Path) -> Result<MovieLens> {
    let users_text = read_lossy(users)?;
    let profiles = parse_users(&users_text, &users.display().to_string())?;
    let ratings_text = read_lossy(ratings)?;
    let mut interactions = parse_ratings(&ratings_text, &ratings.display().to_string())?;
    interactions.retain(|r| profiles.contains_key(&r.user));
    Ok(MovieLens {
        interactions,
        profiles,
        schema: movielens_schema(),
    })
}

fn read_lossy(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_ratings(text: &str, origin: &str) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(parse_err(origin, lineno, format!("expected 4 fields, found {}", fields.len())));
        }
        let user = fields[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(origin, lineno, format!("user id: {e}")))?;
        let item = fields[1]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(origin, lineno, format!("item id: {e}")))?;
        fields[2]
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(origin, lineno, format!("rating: {e}")))?;
        let timestamp = fields[3]
            .trim()
            .parse::<i64>()
            .map_err(|e| parse_err(origin, lineno, format!("timestamp: {e}")))?;
        out.push(RawInteraction { user, item, timestamp });
    }
    Ok(out)
}

/// Parse `users.dat`. Users with an empty gender, age or occupation field
/// are skipped; values outside the known codes are errors.
pub fn parse_users(text: &str, origin: &str) -> Result<BTreeMap<u64, Vec<usize>>> {
    let mut out = BTreeMap::new();
    let mut incomplete = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 5 {
            return Err(parse_err(origin, lineno, format!("expected 5 fields, found {}", fields.len())));
        }
        let user = fields[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(origin, lineno, format!("user id: {e}")))?;
        let (g, a, o) = (fields[1].trim(), fields[2].trim(), fields[3].trim());
        if g.is_empty() || a.is_empty() || o.is_empty() {
            incomplete += 1;
            continue;
        }
        let gender = match g {
            "F" => 0,
            "M" => 1,
            other => return Err(parse_err(origin, lineno, format!("unknown gender {other:?}"))),
        };
        let age_code = a
            .parse::<u32>()
            .map_err(|e| parse_err(origin, lineno, format!("age: {e}")))?;
        let age = AGE_BUCKETS
            .iter()
            .position(|&b| b == age_code)
            .ok_or_else(|| parse_err(origin, lineno, format!("unknown age bucket {age_code}")))?;
        let occupation = o
            .parse::<usize>()
            .map_err(|e| parse_err(origin, lineno, format!("occupation: {e}")))?;
        if occupation >= OCCUPATIONS {
            return Err(parse_err(origin, lineno, format!("unknown occupation {occupation}")));
        }
        if out.insert(user, vec![gender, age, occupation]).is_some() {
            return Err(parse_err(origin, lineno, format!("duplicate user {user}")));
        }
    }
    if incomplete > 0 {
        log::warn!("{origin}: skipped {incomplete} users with missing attributes");
    }
    Ok(out)
}
