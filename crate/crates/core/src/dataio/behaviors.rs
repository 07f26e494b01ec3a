use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};

/// One served slate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: String,
    pub candidates: Vec<(String, u8)>,
}

impl Impression {
    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|(_, l)| *l).collect()
    }
}

/// A behaviors line: the history exactly as logged plus the impression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Behavior {
    /// History ids in file order (oldest first in MIND logs).
    pub history: Vec<String>,
    pub impression: Impression,
}

fn parse_line(path: &Path, line_no: usize, line: &str) -> Result<Behavior> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line: line_no,
        reason,
    };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 5 {
        return Err(malformed(format!("expected 5 tab-separated columns, found {}", cols.len())));
    }
    if cols[0].is_empty() || cols[1].is_empty() {
        return Err(malformed("empty impression or user id".into()));
    }
    let mut candidates = Vec::new();
    for token in cols[4].split_whitespace() {
        let (id, label) = token.rsplit_once('-').ok_or_else(|| Error::Label {
            path: path.to_path_buf(),
            line: line_no,
            token: token.to_string(),
        })?;
        let label = match label {
            "0" => 0,
            "1" => 1,
            _ => {
                return Err(Error::Label {
                    path: path.to_path_buf(),
                    line: line_no,
                    token: token.to_string(),
                })
            }
        };
        candidates.push((id.to_string(), label));
    }
    if candidates.is_empty() {
        return Err(malformed("impression has no candidates".into()));
    }
    Ok(Behavior {
        history: cols[3].split_whitespace().map(str::to_string).collect(),
        impression: Impression {
            impression_id: cols[0].to_string(),
            user_id: cols[1].to_string(),
            timestamp: cols[2].to_string(),
            candidates,
        },
    })
}

/// Parses behaviors text; `origin` only labels error messages.
pub fn parse_behaviors_str(text: &str, origin: &Path) -> Result<Vec<Behavior>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(origin, i + 1, l.trim_end_matches('\r')))
        .collect()
}

pub fn parse_behaviors(path: impl AsRef<Path>) -> Result<Vec<Behavior>> {
    let path = path.as_ref();
    parse_behaviors_str(&read_text(path)?, path)
}

pub fn write_behaviors(path: impl AsRef<Path>, records: &[Behavior]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        let imp = &r.impression;
        let cands: Vec<String> = imp.candidates.iter().map(|(id, l)| format!("{id}-{l}")).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            imp.impression_id,
            imp.user_id,
            imp.timestamp,
            r.history.join(" "),
            cands.join(" ")
        )
        .expect("writing to a String");
    }
    write_text(path.as_ref(), &out)
}
