use std::collections::{BTreeMap, HashMap};

use crate::dataio::{Behavior, Catalog, UserHistory};
use crate::error::{Error, Result};
use crate::model::{SparModel, UserInput};
use crate::textprep::{render_template, Vocabulary};

/// Content catalog plus optional per-user interest summaries.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub catalog: Catalog,
    pub summaries: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(catalog: Catalog) -> Self {
        Self {
            catalog,
            summaries: BTreeMap::new(),
        }
    }

    /// Vocabulary over every rendered item and every summary.
    pub fn vocabulary(&self, max_tokens: usize) -> Vocabulary {
        let rendered: Vec<String> = self
            .catalog
            .items
            .values()
            .map(|it| render_template(it, self.catalog.schema))
            .collect();
        Vocabulary::build(
            rendered.iter().map(String::as_str).chain(self.summaries.values().map(String::as_str)),
            max_tokens,
        )
    }
}

/// Item token ids for one model, computed once per catalog.
#[derive(Clone, Debug)]
pub struct TokenCache {
    items: HashMap<String, Vec<u32>>,
}

impl TokenCache {
    pub fn new(model: &SparModel, corpus: &Corpus) -> Self {
        Self {
            items: corpus
                .catalog
                .items
                .values()
                .map(|it| (it.id.clone(), model.item_tokens(it)))
                .collect(),
        }
    }

    pub fn item(&self, id: &str) -> Result<&[u32]> {
        self.items.get(id).map(Vec::as_slice).ok_or_else(|| Error::UnknownId {
            kind: "content",
            id: id.to_string(),
        })
    }

    /// Candidate ids wrapped in SOS…EOS.
    pub fn candidate(&self, id: &str) -> Result<Vec<u32>> {
        let t = self.item(id)?;
        let mut out = Vec::with_capacity(t.len() + 2);
        out.push(crate::textprep::SOS);
        out.extend_from_slice(t);
        out.push(crate::textprep::EOS);
        Ok(out)
    }
}

/// Encoder input for the user of a behaviors record.
pub fn user_input(model: &SparModel, corpus: &Corpus, cache: &TokenCache, record: &Behavior) -> Result<UserInput> {
    let user = &record.impression.user_id;
    let history = UserHistory::from_log(user, &record.history, model.config().history_cap);
    let items = history
        .engaged
        .iter()
        .map(|id| cache.item(id).map(<[u32]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let summary = corpus.summaries.get(user).map(|s| model.summary_tokens(s));
    model.user_input(&items, summary.as_deref())
}
