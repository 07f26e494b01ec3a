use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::error::{Error, Result};
use crate::textprep::{ContentItem, Schema};

/// Content items keyed by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    pub schema: Schema,
    pub items: BTreeMap<String, ContentItem>,
}

impl Catalog {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            items: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item: ContentItem) -> Result<()> {
        if self.items.contains_key(&item.id) {
            return Err(Error::DuplicateId { id: item.id });
        }
        self.items.insert(item.id.clone(), item);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ContentItem> {
        self.items.get(id).ok_or_else(|| Error::UnknownId {
            kind: "content",
            id: id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Parses `id \t title \t abstract \t category` lines.
pub fn parse_catalog_str(text: &str, schema: Schema, origin: &Path) -> Result<Catalog> {
    let mut catalog = Catalog::new(schema);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 || cols[0].is_empty() {
            return Err(Error::Malformed {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: format!("expected id, title, abstract, category; found {} columns", cols.len()),
            });
        }
        catalog.insert(ContentItem::new(cols[0], cols[1], cols[2], cols[3]))?;
    }
    Ok(catalog)
}

pub fn parse_catalog(path: impl AsRef<Path>, schema: Schema) -> Result<Catalog> {
    let path = path.as_ref();
    parse_catalog_str(&read_text(path)?, schema, path)
}

pub fn write_catalog<'a>(path: impl AsRef<Path>, items: impl IntoIterator<Item = &'a ContentItem>) -> Result<()> {
    let mut out = String::new();
    for it in items {
        writeln!(out, "{}\t{}\t{}\t{}", it.id, it.title, it.abstract_text, it.category).expect("writing to a String");
    }
    write_text(path.as_ref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn origin() -> PathBuf {
        PathBuf::from("<memory>")
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.tsv");
        let text = "N1\tBig win\tThe team won.\tsports\nN2\tChips\tNew chips ship.\ttech\n";
        let cat = parse_catalog_str(text, Schema::News, &origin()).unwrap();
        write_catalog(&path, cat.items.values()).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
        assert_eq!(parse_catalog(&path, Schema::News).unwrap(), cat);
    }

    #[test]
    fn empty_abstract_is_allowed() {
        let cat = parse_catalog_str("N1\tTitle\t\tsports\n", Schema::News, &origin()).unwrap();
        assert_eq!(cat.get("N1").unwrap().abstract_text, "");
    }

    #[test]
    fn duplicate_and_missing_columns_fail() {
        let dup = parse_catalog_str("N1\ta\tb\tc\nN1\td\te\tf\n", Schema::News, &origin());
        assert!(matches!(dup, Err(Error::DuplicateId { ref id }) if id == "N1"));
        let short = parse_catalog_str("N1\ta\tb\n", Schema::News, &origin());
        assert!(matches!(short, Err(Error::Malformed { line: 1, .. })));
        let cat = parse_catalog_str("N1\ta\tb\tc\n", Schema::News, &origin()).unwrap();
        assert!(matches!(cat.get("N9"), Err(Error::UnknownId { .. })));
    }
}
