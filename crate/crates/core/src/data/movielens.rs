//! Reader for the MovieLens-1M `.dat` layout (`::`-separated, latin-1).
//!
//! ```text
//! ratings.dat  UserID::MovieID::Rating::Timestamp
//! users.dat    UserID::Gender::Age::Occupation::Zip-code
//! movies.dat   MovieID::Title::Genre1|Genre2|...
//! ```

use std::path::Path;

use super::corpus::{decode_latin1, parse_error, read_bytes, Corpus, Interaction, ItemRecord, UserMeta};
use crate::error::Result;

pub const USER_FIELDS: [&str; 4] = ["gender", "age", "occupation", "zip_region"];
pub const ITEM_FIELDS: [&str; 2] = ["genres", "year"];

pub fn parse_movielens(ratings: &Path, users: &Path, movies: &Path) -> Result<Corpus> {
    Ok(Corpus {
        interactions: parse_ratings(ratings)?,
        users: parse_users(users)?,
        items: parse_movies(movies)?,
        user_fields: USER_FIELDS.iter().map(|s| s.to_string()).collect(),
        item_fields: ITEM_FIELDS.iter().map(|s| s.to_string()).collect(),
    })
}

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = decode_latin1(&read_bytes(path)?);
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn fields<'a>(path: &Path, line_no: usize, line: &'a str, expected: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split("::").collect();
    if parts.len() != expected {
        return Err(parse_error(
            path,
            line_no,
            format!("expected {expected} `::`-separated fields, found {}", parts.len()),
        ));
    }
    if parts[0].is_empty() {
        return Err(parse_error(path, line_no, "empty id"));
    }
    Ok(parts)
}

pub fn parse_rating_line(path: &Path, line_no: usize, line: &str) -> Result<Interaction> {
    let f = fields(path, line_no, line, 4)?;
    if f[1].is_empty() {
        return Err(parse_error(path, line_no, "empty item id"));
    }
    let rating: u8 = f[2]
        .parse()
        .map_err(|_| parse_error(path, line_no, format!("bad rating `{}`", f[2])))?;
    if !(1..=5).contains(&rating) {
        return Err(parse_error(path, line_no, format!("rating {rating} outside 1..=5")));
    }
    let timestamp: u64 = f[3]
        .parse()
        .map_err(|_| parse_error(path, line_no, format!("bad timestamp `{}`", f[3])))?;
    Ok(Interaction {
        user_id: f[0].to_string(),
        item_id: f[1].to_string(),
        rating,
        timestamp,
    })
}

fn parse_ratings(path: &Path) -> Result<Vec<Interaction>> {
    lines(path)?
        .iter()
        .map(|(n, l)| parse_rating_line(path, *n, l))
        .collect()
}

fn parse_users(path: &Path) -> Result<Vec<UserMeta>> {
    lines(path)?
        .iter()
        .map(|(n, l)| {
            let f = fields(path, *n, l, 5)?;
            let zip_region = f[4].chars().next().map(String::from).unwrap_or_default();
            Ok(UserMeta {
                user_id: f[0].to_string(),
                fields: vec![
                    ("gender".into(), f[1].to_string()),
                    ("age".into(), f[2].to_string()),
                    ("occupation".into(), f[3].to_string()),
                    ("zip_region".into(), zip_region),
                ],
            })
        })
        .collect()
}

/// Five-year bucket of the release year in a title such as `Toy Story (1995)`.
pub fn year_bucket(title: &str) -> Option<String> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let year: u32 = inner[open + 1..].trim().parse().ok()?;
    Some((year - year % 5).to_string())
}

fn parse_movies(path: &Path) -> Result<Vec<ItemRecord>> {
    lines(path)?
        .iter()
        .map(|(n, l)| {
            let f = fields(path, *n, l, 3)?;
            let genres: Vec<String> = f[2]
                .split('|')
                .filter(|g| !g.is_empty())
                .map(String::from)
                .collect();
            Ok(ItemRecord {
                item_id: f[0].to_string(),
                fields: vec![
                    ("genres".into(), genres),
                    ("year".into(), year_bucket(f[1]).into_iter().collect()),
                ],
            })
        })
        .collect()
}
