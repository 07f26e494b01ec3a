use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_behaviors, write_catalog, Behavior, Impression};
use crate::error::{Error, Result};
use crate::textprep::ContentItem;

const CATEGORY_WORDS: [&str; 16] = [
    "sports", "finance", "travel", "health", "music", "science", "politics", "food", "movies", "autos", "weather",
    "fashion", "gaming", "books", "pets", "garden",
];

const FILLER_WORDS: [&str; 32] = [
    "new", "report", "today", "local", "story", "update", "week", "people", "plan", "guide", "first", "big", "world",
    "city", "team", "life", "study", "latest", "best", "review", "market", "season", "home", "time", "year", "change",
    "watch", "trend", "inside", "event", "early", "open",
];

/// Parameters of the planted-preference generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub history_len: usize,
    pub candidates_per_impression: usize,
    pub seed: u64,
    pub train_impressions: usize,
    pub dev_impressions: usize,
    pub test_impressions: usize,
    /// Share of history items drawn uniformly instead of from preferred categories.
    pub history_noise: f64,
    /// Probability that a label is replaced by a fair coin flip.
    pub label_noise: f64,
    /// Probability that a candidate is drawn from the user's preferred categories.
    pub preferred_candidate_rate: f64,
}

impl SynthConfig {
    pub fn new(
        n_users: usize,
        n_items: usize,
        n_categories: usize,
        history_len: usize,
        candidates_per_impression: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_users,
            n_items,
            n_categories,
            history_len,
            candidates_per_impression,
            seed,
            train_impressions: 4,
            dev_impressions: 1,
            test_impressions: 2,
            history_noise: 0.1,
            label_noise: 0.1,
            preferred_candidate_rate: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            self.n_users,
            self.n_items,
            self.n_categories,
            self.history_len,
            self.candidates_per_impression,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic counts must all be at least 1".into()));
        }
        if self.n_items < self.n_categories {
            return Err(Error::Config(format!(
                "need at least one item per category ({} items, {} categories)",
                self.n_items, self.n_categories
            )));
        }
        let rates = [self.history_noise, self.label_noise, self.preferred_candidate_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("synthetic rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn category_word(c: usize) -> String {
    match CATEGORY_WORDS.get(c) {
        Some(w) => w.to_string(),
        None => format!("topic{c}"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticData {
    pub catalog: Vec<ContentItem>,
    pub train: Vec<Behavior>,
    pub dev: Vec<Behavior>,
    pub test: Vec<Behavior>,
    /// Planted preferred category words per user id.
    pub preferred: BTreeMap<String, Vec<String>>,
}

impl SyntheticData {
    /// Writes `catalog.tsv` and `{train,dev,test}/behaviors.tsv` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_catalog(dir.join("catalog.tsv"), &self.catalog)?;
        write_behaviors(dir.join("train").join("behaviors.tsv"), &self.train)?;
        write_behaviors(dir.join("dev").join("behaviors.tsv"), &self.dev)?;
        write_behaviors(dir.join("test").join("behaviors.tsv"), &self.test)
    }
}

/// Draws a distinct item from `pool` when possible, retrying a bounded number of times.
fn draw_distinct(rng: &mut ChaCha8Rng, pool: &[usize], taken: &mut Vec<usize>) -> usize {
    let mut pick = pool[rng.gen_range(0..pool.len())];
    for _ in 0..32 {
        if !taken.contains(&pick) {
            break;
        }
        pick = pool[rng.gen_range(0..pool.len())];
    }
    taken.push(pick);
    pick
}

/// Every user prefers a few categories; histories mostly come from them and
/// a candidate is clicked iff its category is preferred, up to label noise.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_categories];
    let catalog: Vec<ContentItem> = (0..cfg.n_items)
        .map(|i| {
            let c = i % cfg.n_categories;
            by_category[c].push(i);
            let word = category_word(c);
            let mut filler = || FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())];
            let title = format!("{word} {} {} {}", filler(), filler(), filler());
            let abstract_text = format!("{} {} {} {} {}", filler(), filler(), filler(), filler(), filler());
            ContentItem::new(format!("N{}", i + 1), title, abstract_text, word)
        })
        .collect();
    let all_items: Vec<usize> = (0..cfg.n_items).collect();
    let per_user = cfg.n_categories.saturating_sub(1).clamp(1, 2);

    let mut preferred = BTreeMap::new();
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut impression_no = 0usize;
    for u in 0..cfg.n_users {
        let user_id = format!("U{}", u + 1);
        let mut cats: Vec<usize> = (0..cfg.n_categories).collect();
        cats.shuffle(&mut rng);
        let liked: Vec<usize> = cats[..per_user].to_vec();
        let liked_pool: Vec<usize> = liked.iter().flat_map(|&c| by_category[c].iter().copied()).collect();
        let other_pool: Vec<usize> = cats[per_user..].iter().flat_map(|&c| by_category[c].iter().copied()).collect();
        preferred.insert(user_id.clone(), liked.iter().map(|&c| category_word(c)).collect());

        let mut taken = Vec::new();
        let history: Vec<String> = (0..cfg.history_len)
            .map(|_| {
                let pool = if rng.gen::<f64>() < cfg.history_noise { &all_items } else { &liked_pool };
                catalog[draw_distinct(&mut rng, pool, &mut taken)].id.clone()
            })
            .collect();

        let total = cfg.train_impressions + cfg.dev_impressions + cfg.test_impressions;
        for j in 0..total {
            impression_no += 1;
            let mut taken = Vec::new();
            let candidates = (0..cfg.candidates_per_impression)
                .map(|_| {
                    let want_liked = other_pool.is_empty() || rng.gen::<f64>() < cfg.preferred_candidate_rate;
                    let pool = if want_liked { &liked_pool } else { &other_pool };
                    let item = draw_distinct(&mut rng, pool, &mut taken);
                    let mut label = u8::from(liked.contains(&(item % cfg.n_categories)));
                    if rng.gen::<f64>() < cfg.label_noise {
                        label = u8::from(rng.gen::<bool>());
                    }
                    (catalog[item].id.clone(), label)
                })
                .collect();
            let record = Behavior {
                history: history.clone(),
                impression: Impression {
                    impression_id: impression_no.to_string(),
                    user_id: user_id.clone(),
                    timestamp: format!("T{j}"),
                    candidates,
                },
            };
            if j < cfg.train_impressions {
                train.push(record);
            } else if j < cfg.train_impressions + cfg.dev_impressions {
                dev.push(record);
            } else {
                test.push(record);
            }
        }
    }
    Ok(SyntheticData {
        catalog,
        train,
        dev,
        test,
        preferred,
    })
}

/// AUC of the category-indicator scorer when a fraction `preferred_rate` of
/// candidates is preferred and each label is replaced by a fair coin with
/// probability `label_noise`. Ties between equal indicator values count ½.
pub fn bayes_auc(preferred_rate: f64, label_noise: f64) -> f64 {
    let (q, e) = (preferred_rate, label_noise / 2.0);
    let p1 = q * (1.0 - e) / (q * (1.0 - e) + (1.0 - q) * e);
    let p0 = q * e / (q * e + (1.0 - q) * (1.0 - e));
    p1 * (1.0 - p0) + 0.5 * (p1 * p0 + (1.0 - p1) * (1.0 - p0))
}
