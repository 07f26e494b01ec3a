use std::path::Path;

use super::{read_text, Behavior, Impression};
use crate::error::{Error, Result};

/// Counts reported by [`convert_goodreads`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GoodreadsStats {
    pub impressions: usize,
    /// Candidates rated exactly 3, which are neither positive nor negative.
    pub dropped_neutral: usize,
    /// Lines left without candidates after dropping neutral ratings.
    pub dropped_impressions: usize,
}

/// Converts `user_id \t timestamp \t history \t book:rating ...` lines into
/// behaviors records: ratings above 3 are positives, below 3 negatives, and
/// ratings of exactly 3 are dropped.
pub fn convert_goodreads(path: impl AsRef<Path>) -> Result<(Vec<Behavior>, GoodreadsStats)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut stats = GoodreadsStats::default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 || cols[0].is_empty() {
            return Err(malformed(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let mut candidates = Vec::new();
        for token in cols[3].split_whitespace() {
            let rating = token
                .rsplit_once(':')
                .and_then(|(id, r)| Some((id, r.parse::<u8>().ok()?)))
                .filter(|(id, r)| !id.is_empty() && (1..=5).contains(r));
            let Some((id, rating)) = rating else {
                return Err(malformed(format!("bad rating token `{token}`")));
            };
            match rating.cmp(&3) {
                std::cmp::Ordering::Greater => candidates.push((id.to_string(), 1)),
                std::cmp::Ordering::Less => candidates.push((id.to_string(), 0)),
                std::cmp::Ordering::Equal => stats.dropped_neutral += 1,
            }
        }
        if candidates.is_empty() {
            stats.dropped_impressions += 1;
            continue;
        }
        stats.impressions += 1;
        out.push(Behavior {
            history: cols[2].split_whitespace().map(str::to_string).collect(),
            impression: Impression {
                impression_id: (i + 1).to_string(),
                user_id: cols[0].to_string(),
                timestamp: cols[1].to_string(),
                candidates,
            },
        });
    }
    if stats.dropped_neutral > 0 {
        log::warn!(
            "{}: dropped {} neutral ratings and {} empty impressions",
            path.display(),
            stats.dropped_neutral,
            stats.dropped_impressions
        );
    }
    Ok((out, stats))
}
