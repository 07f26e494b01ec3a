//! Content rendering, tokenization and history sequence assembly.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const EOS: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// A recommendable piece of text content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentItem {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    pub category: String,
}

impl ContentItem {
    pub fn new(id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            category: category.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    News,
    Book,
}

impl Schema {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "news" => Ok(Schema::News),
            "book" => Ok(Schema::Book),
            other => Err(Error::Config(format!("unknown schema `{other}` (news|book)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Schema::News => "news",
            Schema::Book => "book",
        }
    }

    fn labels(self) -> [&'static str; 3] {
        match self {
            Schema::News => ["News Title", "News Abstract", "News Category"],
            Schema::Book => ["Book Name", "Book Description", "Book Category"],
        }
    }
}

pub fn render_template(item: &ContentItem, schema: Schema) -> String {
    let [t, a, c] = schema.labels();
    format!(
        "{t}: {}; {a}: {}; {c}: {}",
        item.title, item.abstract_text, item.category
    )
}

/// Lowercased words; any non-alphanumeric character separates tokens.
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<Option<String>>,
}

impl Vocabulary {
    fn reserved_only() -> Self {
        let mut v = Self {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        for (i, r) in RESERVED.iter().enumerate() {
            v.ids.insert(r.to_string(), i as u32);
            v.tokens.push(Some(r.to_string()));
        }
        v
    }

    /// Keeps the `max_tokens` most frequent words (ties by lexicographic order).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_tokens: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_tokens);
        let mut v = Self::reserved_only();
        for (w, _) in ranked {
            v.push(w);
        }
        v
    }

    /// Vocabulary with explicit ids; ids below 4 are reserved.
    pub fn with_entries<S: Into<String>>(entries: impl IntoIterator<Item = (S, u32)>) -> Result<Self> {
        let mut v = Self::reserved_only();
        for (tok, id) in entries {
            let tok = tok.into();
            if id < 4 || v.ids.contains_key(&tok) {
                return Err(Error::Config(format!("vocabulary entry `{tok}`={id} collides")));
            }
            let idx = id as usize;
            if v.tokens.len() <= idx {
                v.tokens.resize(idx + 1, None);
            }
            if v.tokens[idx].is_some() {
                return Err(Error::Config(format!("vocabulary id {id} assigned twice")));
            }
            v.tokens[idx] = Some(tok.clone());
            v.ids.insert(tok, id);
        }
        Ok(v)
    }

    fn push(&mut self, token: String) {
        let id = self.tokens.len() as u32;
        self.ids.insert(token.clone(), id);
        self.tokens.push(Some(token));
    }

    /// Number of ids, including reserved ones and unassigned holes.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).and_then(|t| t.as_deref())
    }

    /// Tokens in id order, `None` for holes; inverse of [`Vocabulary::from_tokens`].
    pub fn tokens(&self) -> &[Option<String>] {
        &self.tokens
    }

    pub fn from_tokens(tokens: Vec<Option<String>>) -> Result<Self> {
        let entries: Vec<(String, u32)> = tokens
            .into_iter()
            .enumerate()
            .skip(4)
            .filter_map(|(i, t)| t.map(|t| (t, i as u32)))
            .collect();
        Self::with_entries(entries)
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    split_words(text).take(max_len).map(|w| vocab.id(&w)).collect()
}

/// Per-field token caps applied before rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldCaps {
    pub title: usize,
    pub abstract_text: usize,
    pub category: usize,
}

impl FieldCaps {
    pub fn for_schema(schema: Schema) -> Self {
        match schema {
            Schema::News => Self {
                title: 32,
                abstract_text: 72,
                category: 4,
            },
            Schema::Book => Self {
                title: 24,
                abstract_text: 85,
                category: 4,
            },
        }
    }

    /// Upper bound on the tokens of one rendered item, without SOS/EOS.
    pub fn max_item_tokens(&self, schema: Schema) -> usize {
        let label_tokens: usize = schema.labels().iter().map(|l| split_words(l).count()).sum();
        label_tokens + self.title + self.abstract_text + self.category
    }
}

fn truncate_words(text: &str, cap: usize) -> String {
    split_words(text).take(cap).collect::<Vec<_>>().join(" ")
}

/// Token ids of an item rendered through the template, with each field capped.
pub fn tokenize_item(item: &ContentItem, schema: Schema, caps: FieldCaps, vocab: &Vocabulary) -> Vec<u32> {
    let capped = ContentItem {
        id: item.id.clone(),
        title: truncate_words(&item.title, caps.title),
        abstract_text: truncate_words(&item.abstract_text, caps.abstract_text),
        category: truncate_words(&item.category, caps.category),
    };
    let text = render_template(&capped, schema);
    tokenize(&text, vocab, caps.max_item_tokens(schema))
}

/// Token ids with SOS/EOS-delimited item spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// `(sos_position, eos_position)` per item, ordered and disjoint.
    pub item_boundaries: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            item_boundaries: Vec::new(),
        }
    }

    pub fn push_item(&mut self, tokens: &[u32]) {
        let start = self.ids.len();
        self.ids.push(SOS);
        self.ids.extend_from_slice(tokens);
        self.ids.push(EOS);
        self.item_boundaries.push((start, self.ids.len() - 1));
    }

    /// One wrapped item.
    pub fn single(tokens: &[u32]) -> Self {
        let mut s = Self::empty();
        s.push_item(tokens);
        s
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sos_positions(&self) -> Vec<usize> {
        self.item_boundaries.iter().map(|&(s, _)| s).collect()
    }
}

/// Wraps every item in SOS…EOS and concatenates them in the given
/// (most-recent-first) order, with the summary, if any, placed first.
pub fn build_history_sequence(items: &[Vec<u32>], summary: Option<&[u32]>) -> Result<TokenSequence> {
    if items.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut seq = TokenSequence::empty();
    if let Some(s) = summary {
        seq.push_item(s);
    }
    for item in items {
        seq.push_item(item);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn news_template() {
        let item = ContentItem::new("N1", "A", "B", "sports");
        assert_eq!(
            render_template(&item, Schema::News),
            "News Title: A; News Abstract: B; News Category: sports"
        );
        let empty = ContentItem::new("N1", "A", "", "sports");
        assert_eq!(
            render_template(&empty, Schema::News),
            "News Title: A; News Abstract: ; News Category: sports"
        );
    }

    #[test]
    fn book_template() {
        let item = ContentItem::new("B1", "Dune", "...", "scifi");
        assert_eq!(
            render_template(&item, Schema::Book),
            "Book Name: Dune; Book Description: ...; Book Category: scifi"
        );
    }

    #[test]
    fn tokenize_examples() {
        let vocab = Vocabulary::with_entries([("hello", 5)]).unwrap();
        assert!(tokenize("", &vocab, 8).is_empty());
        assert_eq!(tokenize("Hello hello", &vocab, 8), vec![5, 5]);
        assert_eq!(tokenize("Hello, world!", &vocab, 8), vec![5, UNK]);
        let long = (0..40).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(tokenize(&long, &vocab, 32).len(), 32);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(["b a a", "c"], 10);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("<sos>"), SOS);
        assert_eq!(v.id("<eos>"), EOS);
        // frequency first, then lexicographic
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("c"), 6);
        assert_eq!(v.size(), 7);
        assert!(Vocabulary::with_entries([("x", 2)]).is_err());
        assert!(Vocabulary::with_entries([("x", 5), ("y", 5)]).is_err());
    }

    #[test]
    fn vocab_top_f_cut() {
        let v = Vocabulary::build(["a a a b b c"], 2);
        assert_eq!(v.size(), 6);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn vocab_token_roundtrip() {
        let v = Vocabulary::build(["x y z y"], 10);
        let back = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn item_fields_are_capped() {
        let vocab = Vocabulary::build(["news title abstract category one two three four five"], 100);
        let item = ContentItem::new("x", "one two three four five", "one two three", "five");
        let caps = FieldCaps {
            title: 2,
            abstract_text: 1,
            category: 4,
        };
        let ids = tokenize_item(&item, Schema::News, caps, &vocab);
        let expected = tokenize("News Title: one two; News Abstract: one; News Category: five", &vocab, 100);
        assert_eq!(ids, expected);
    }

    #[test]
    fn history_sequence_boundaries() {
        let one = build_history_sequence(&[vec![7, 8, 9]], None).unwrap();
        assert_eq!(one.len(), 5);
        assert_eq!(one.item_boundaries, vec![(0, 4)]);

        let two = build_history_sequence(&[vec![7, 8, 9], vec![10, 11]], None).unwrap();
        assert_eq!(two.len(), 9);
        assert_eq!(two.item_boundaries, vec![(0, 4), (5, 8)]);
        for &(s, e) in &two.item_boundaries {
            assert_eq!(two.ids[s], SOS);
            assert_eq!(two.ids[e], EOS);
        }

        let with_summary = build_history_sequence(&[vec![7, 8, 9]], Some(&[20, 21])).unwrap();
        assert_eq!(with_summary.sos_positions(), vec![0, 4]);
        assert_eq!(with_summary.item_boundaries.len(), 2);

        assert!(matches!(build_history_sequence(&[], None), Err(Error::EmptyHistory)));
    }
}
