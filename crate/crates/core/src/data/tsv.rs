//! Generic tab-separated corpus for non-MovieLens data.
//!
//! * interactions: `user<TAB>item<TAB>timestamp`, no header
//! * user features: header `user_id<TAB>field...`, one categorical value per cell
//! * item features: header `item_id<TAB>field...`, `|` separates multiple values
//!
//! Blank lines and lines starting with `#` are ignored everywhere.

use std::path::Path;

use super::corpus::{parse_error, read_bytes, Corpus, Interaction, ItemRecord, UserMeta};
use crate::error::Result;

fn text_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| parse_error(path, 0, format!("not UTF-8: {e}")))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .collect())
}

pub fn parse_tsv_corpus(
    interactions: &Path,
    user_features: Option<&Path>,
    item_features: Option<&Path>,
) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (n, line) in text_lines(interactions)? {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_error(interactions, n, format!("expected 3 columns, found {}", f.len())));
        }
        if f[0].is_empty() || f[1].is_empty() {
            return Err(parse_error(interactions, n, "empty id"));
        }
        let timestamp = f[2]
            .trim()
            .parse()
            .map_err(|_| parse_error(interactions, n, format!("bad timestamp `{}`", f[2])))?;
        corpus.interactions.push(Interaction {
            user_id: f[0].to_string(),
            item_id: f[1].to_string(),
            rating: 1,
            timestamp,
        });
    }
    if let Some(path) = user_features {
        let (header, rows) = sidecar(path)?;
        corpus.user_fields = header;
        corpus.users = rows
            .into_iter()
            .map(|(id, cells)| UserMeta {
                user_id: id,
                fields: corpus.user_fields.iter().cloned().zip(cells).collect(),
            })
            .collect();
    }
    if let Some(path) = item_features {
        let (header, rows) = sidecar(path)?;
        corpus.item_fields = header;
        corpus.items = rows
            .into_iter()
            .map(|(id, cells)| ItemRecord {
                item_id: id,
                fields: corpus
                    .item_fields
                    .iter()
                    .cloned()
                    .zip(cells.into_iter().map(|c| {
                        c.split('|').filter(|v| !v.is_empty()).map(String::from).collect()
                    }))
                    .collect(),
            })
            .collect();
    }
    Ok(corpus)
}

type SidecarRows = Vec<(String, Vec<String>)>;

fn sidecar(path: &Path) -> Result<(Vec<String>, SidecarRows)> {
    let mut lines = text_lines(path)?.into_iter();
    let Some((_, header)) = lines.next() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let names: Vec<String> = header.split('\t').skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for (n, line) in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != names.len() + 1 {
            return Err(parse_error(
                path,
                n,
                format!("expected {} columns, found {}", names.len() + 1, cells.len()),
            ));
        }
        rows.push((cells[0].to_string(), cells[1..].iter().map(|s| s.to_string()).collect()));
    }
    Ok((names, rows))
}
