use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::corpus::{user_input, Corpus, TokenCache};
use crate::dataio::{read_text, write_text, Behavior};
use crate::error::{Error, Result};
use crate::model::SparModel;
use crate::numerics::Tensor;
use crate::predictor::relevance_score;

/// Standalone embeddings (`rows×cols` each) keyed by user or content id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    pub kind: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub entries: BTreeMap<String, Tensor>,
}

impl EmbeddingStore {
    pub fn new(kind: &'static str, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            rows,
            cols,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&Tensor> {
        self.entries.get(id).ok_or_else(|| Error::UnknownId {
            kind: self.kind,
            id: id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total stored floats, `len × rows × cols`.
    pub fn num_values(&self) -> usize {
        self.entries.len() * self.rows * self.cols
    }

    /// Text form: a `rows cols` header, then `id \t values` in id order.
    /// Values print in shortest round-trip form, so reloading is exact.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for (id, t) in &self.entries {
            out.push_str(id);
            out.push('\t');
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>, kind: &'static str) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let malformed = |line: usize, reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .unwrap_or("")
            .split(' ')
            .map(|s| s.parse().map_err(|_| malformed(1, "bad header")))
            .collect::<Result<_>>()?;
        let [rows, cols] = header[..] else {
            return Err(malformed(1, "header must be `rows cols`"));
        };
        let mut store = Self::new(kind, rows, cols);
        for (i, line) in lines.enumerate() {
            let (id, values) = line.split_once('\t').ok_or_else(|| malformed(i + 2, "missing tab"))?;
            let data: Vec<f32> = values
                .split(' ')
                .map(|v| v.parse().map_err(|_| malformed(i + 2, "bad value")))
                .collect::<Result<_>>()?;
            let t = Tensor::matrix(rows, cols, data).map_err(|_| malformed(i + 2, "wrong value count"))?;
            store.entries.insert(id.to_string(), t);
        }
        Ok(store)
    }
}

pub(crate) fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Γ for every user in `records`, from the first record that mentions them.
pub fn precompute_users(
    model: &SparModel,
    corpus: &Corpus,
    records: &[Behavior],
    mask_seed: u64,
    threads: usize,
) -> Result<EmbeddingStore> {
    let cache = TokenCache::new(model, corpus);
    let mut first: BTreeMap<&str, &Behavior> = BTreeMap::new();
    for r in records {
        first.entry(r.impression.user_id.as_str()).or_insert(r);
    }
    let users: Vec<(&str, &Behavior)> = first.into_iter().collect();
    let computed: Vec<Result<(String, Tensor)>> = with_threads(threads, || {
        users
            .par_iter()
            .map(|(id, r)| {
                let input = user_input(model, corpus, &cache, r)?;
                Ok((id.to_string(), model.user_embedding(&input, mask_seed)?))
            })
            .collect()
    })?;
    let c = model.config();
    let mut store = EmbeddingStore::new("user", c.interest_codes, c.repr_dim);
    for entry in computed {
        let (id, t) = entry?;
        store.entries.insert(id, t);
    }
    Ok(store)
}

/// Λ for every listed content id.
pub fn precompute_items<'a>(
    model: &SparModel,
    corpus: &Corpus,
    ids: impl IntoIterator<Item = &'a str>,
    threads: usize,
) -> Result<EmbeddingStore> {
    let cache = TokenCache::new(model, corpus);
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    let computed: Vec<Result<(String, Tensor)>> = with_threads(threads, || {
        ids.par_iter()
            .map(|id| Ok((id.to_string(), model.candidate_embedding(&cache.candidate(id)?)?)))
            .collect()
    })?;
    let c = model.config();
    let mut store = EmbeddingStore::new("content", c.candidate_codes, c.repr_dim);
    for entry in computed {
        let (id, t) = entry?;
        store.entries.insert(id, t);
    }
    Ok(store)
}

/// Scores candidates for one user from precomputed stores.
pub fn score_from_stores(
    users: &EmbeddingStore,
    items: &EmbeddingStore,
    score_weight: &Tensor,
    user_id: &str,
    candidates: &[&str],
) -> Result<Vec<f32>> {
    let gamma = users.get(user_id)?;
    candidates
        .iter()
        .map(|id| relevance_score(gamma, items.get(id)?, score_weight))
        .collect()
}
