//! Training loop, evaluation and standalone embedding precomputation.

mod corpus;
mod embeddings;
mod optim;

pub use corpus::{user_input, Corpus, TokenCache};
pub use embeddings::{precompute_items, precompute_users, score_from_stores, EmbeddingStore};
pub use optim::{Adam, LrSchedule};

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{sample_negatives, Behavior, TrainExample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_rankings, EvalReport};
use crate::model::{SparModel, UserInput};
use crate::numerics::{Gradients, Tensor, Var};
use crate::predictor::{nce_loss_graph, relevance_score};
use embeddings::with_threads;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Minimum number of examples per step; whole impressions are packed.
    pub batch_size: usize,
    pub base_lr: f64,
    pub new_layer_lr_multiplier: f64,
    pub warmup_fraction: f64,
    /// Dev evaluation period in steps; 0 evaluates once per epoch only.
    pub eval_every_steps: usize,
    pub negatives: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            base_lr: 1e-3,
            new_layer_lr_multiplier: 5.0,
            warmup_fraction: 0.1,
            eval_every_steps: 0,
            negatives: 4,
            seed: 42,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        if !(self.base_lr > 0.0 && self.new_layer_lr_multiplier > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.negatives == 0 {
            return Err(Error::Config("epochs, batch_size and negatives must be at least 1".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer of `a` combined with `b`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-record candidate scores and their macro-averaged metrics.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub scores: Vec<Vec<f32>>,
}

/// Scores every impression through standalone Γ and Λ, then averages metrics.
pub fn evaluate(model: &SparModel, corpus: &Corpus, records: &[Behavior], mask_seed: u64, threads: usize) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::EmptyImpressions);
    }
    let cache = TokenCache::new(model, corpus);
    let mut user_keys: BTreeMap<(&str, &[String]), usize> = BTreeMap::new();
    let mut owners = Vec::new();
    for r in records {
        let key = (r.impression.user_id.as_str(), r.history.as_slice());
        if let std::collections::btree_map::Entry::Vacant(e) = user_keys.entry(key) {
            e.insert(owners.len());
            owners.push(r);
        }
    }
    let mut cand_ids: Vec<&str> = records
        .iter()
        .flat_map(|r| r.impression.candidates.iter().map(|(id, _)| id.as_str()))
        .collect();
    cand_ids.sort_unstable();
    cand_ids.dedup();

    let (gammas, lambdas) = with_threads(threads, || {
        let gammas: Vec<Result<Tensor>> = owners
            .par_iter()
            .map(|r| model.user_embedding(&user_input(model, corpus, &cache, r)?, mask_seed))
            .collect();
        let lambdas: Vec<Result<Tensor>> = cand_ids
            .par_iter()
            .map(|id| model.candidate_embedding(&cache.candidate(id)?))
            .collect();
        (gammas, lambdas)
    })?;
    let gammas = gammas.into_iter().collect::<Result<Vec<_>>>()?;
    let lambdas: HashMap<&str, Tensor> = cand_ids
        .iter()
        .copied()
        .zip(lambdas.into_iter().collect::<Result<Vec<_>>>()?)
        .collect();

    let weight = model.score_weight();
    let scores = records
        .iter()
        .map(|r| {
            let gamma = &gammas[user_keys[&(r.impression.user_id.as_str(), r.history.as_slice())]];
            r.impression
                .candidates
                .iter()
                .map(|(id, _)| relevance_score(gamma, &lambdas[id.as_str()], weight))
                .collect::<Result<Vec<f32>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let wide: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|&x| x as f64).collect()).collect();
    let labels: Vec<Vec<u8>> = records.iter().map(|r| r.impression.labels()).collect();
    let report = evaluate_rankings(wide.iter().zip(&labels).map(|(s, l)| (s.as_slice(), l.as_slice())))?;
    Ok(Evaluation { report, scores })
}

/// The training examples of one impression, sharing one user forward pass.
#[derive(Clone, Debug)]
pub struct TrainUnit {
    pub record: usize,
    pub examples: Vec<TrainExample>,
}

/// Summed NCE loss of a unit and its gradients.
fn unit_pass(
    model: &SparModel,
    cache: &TokenCache,
    user: &UserInput,
    examples: &[TrainExample],
    mask_seed: u64,
    dropout_seed: Option<u64>,
    with_grads: bool,
) -> Result<(f64, Option<Gradients<f32>>)> {
    let mut g = if with_grads {
        crate::numerics::Graph::new(&model.store)
    } else {
        crate::numerics::Graph::inference(&model.store)
    };
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let gamma = model.net.user_forward(&mut g, user, mask_seed, rng.as_mut())?.gamma;
    let mut lambdas: HashMap<&str, Var> = HashMap::new();
    let mut losses = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut scores = Vec::with_capacity(1 + ex.negatives.len());
        for id in std::iter::once(&ex.positive).chain(&ex.negatives) {
            let lambda = match lambdas.get(id.as_str()) {
                Some(&v) => v,
                None => {
                    let v = model.net.candidate_forward(&mut g, &cache.candidate(id)?, rng.as_mut())?;
                    lambdas.insert(id, v);
                    v
                }
            };
            scores.push(model.net.score(&mut g, gamma, lambda)?);
        }
        losses.push(nce_loss_graph(&mut g, &scores)?);
    }
    let stacked = g.concat_rows(&losses)?;
    let total = g.sum(stacked);
    let loss = g.scalar(total) as f64;
    let grads = if with_grads && loss.is_finite() { Some(g.backward(total)?) } else { None };
    Ok((loss, grads))
}

/// Mean NCE loss over `units` without dropout or gradient tracking.
pub fn batch_loss(model: &SparModel, corpus: &Corpus, records: &[Behavior], units: &[TrainUnit], mask_seed: u64) -> Result<f64> {
    let cache = TokenCache::new(model, corpus);
    let (mut total, mut n) = (0.0, 0usize);
    for u in units {
        let input = user_input(model, corpus, &cache, &records[u.record])?;
        total += unit_pass(model, &cache, &input, &u.examples, mask_seed, None, false)?.0;
        n += u.examples.len();
    }
    Ok(total / n as f64)
}

/// Training units of one epoch in shuffled order.
pub fn epoch_units(records: &[Behavior], negatives: usize, seed: u64, epoch: usize) -> Vec<TrainUnit> {
    let sample_seed = mix_seed(seed, epoch as u64);
    let mut units: Vec<TrainUnit> = records
        .iter()
        .enumerate()
        .map(|(i, r)| TrainUnit {
            record: i,
            examples: sample_negatives(&r.impression, negatives, sample_seed),
        })
        .filter(|u| !u.examples.is_empty())
        .collect();
    units.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(sample_seed, 0x5eed)));
    units
}

/// Groups consecutive units until each batch holds at least `batch_size` examples.
pub fn pack_batches(units: Vec<TrainUnit>, batch_size: usize) -> Vec<Vec<TrainUnit>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut count = 0;
    for u in units {
        count += u.examples.len();
        current.push(u);
        if count >= batch_size {
            batches.push(std::mem::take(&mut current));
            count = 0;
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the best Dev AUC (the final weights without a Dev set).
    pub model: SparModel,
    pub best: Option<EvalReport>,
    pub history: Vec<EvalReport>,
    /// Mean loss of every step.
    pub losses: Vec<f64>,
    pub steps: usize,
    /// Training impressions without any negative, which yield no examples.
    pub skipped_impressions: usize,
}

/// Trains with Adam and NCE over sampled negatives, keeping the best Dev-AUC weights.
///
/// One `step auc mrr ndcg5 ndcg10` line per evaluation goes to `progress`.
pub fn train(
    config: &TrainConfig,
    mut model: SparModel,
    corpus: &Corpus,
    train_records: &[Behavior],
    dev_records: &[Behavior],
    mut progress: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let cache = TokenCache::new(&model, corpus);
    let inputs = train_records
        .iter()
        .map(|r| user_input(&model, corpus, &cache, r))
        .collect::<Result<Vec<_>>>()?;
    let plan: Vec<Vec<Vec<TrainUnit>>> = (0..config.epochs)
        .map(|e| pack_batches(epoch_units(train_records, config.negatives, config.seed, e), config.batch_size))
        .collect();
    let usable = plan.first().map_or(0, |b| b.iter().map(Vec::len).sum::<usize>());
    let skipped_impressions = train_records.len() - usable;
    if usable == 0 {
        return Err(Error::EmptyImpressions);
    }
    let total_steps: usize = plan.iter().map(Vec::len).sum();
    let schedule = LrSchedule::new(config.base_lr, config.warmup_fraction, total_steps);
    let mut adam = Adam::new(&model.store, config.new_layer_lr_multiplier);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut history = Vec::new();
    let mut best: Option<(EvalReport, crate::numerics::ParamStore)> = None;
    let mut losses = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    let mut evaluate_now = |model: &SparModel, step: usize, history: &mut Vec<EvalReport>, progress: &mut Option<&mut dyn Write>| -> Result<()> {
        if dev_records.is_empty() {
            return Ok(());
        }
        let mut report = pool.install(|| evaluate(model, corpus, dev_records, config.seed, config.threads))?.report;
        report.step = step;
        if let Some(w) = progress.as_deref_mut() {
            writeln!(w, "{}", report.log_line()).map_err(|e| Error::io("<progress>", e))?;
        }
        log::info!("eval {}", report.log_line());
        if best.as_ref().is_none_or(|(b, _)| report.auc > b.auc) {
            best = Some((report, model.store.clone()));
        }
        history.push(report);
        Ok(())
    };

    for batches in &plan {
        for batch in batches {
            step += 1;
            let lr = schedule.lr(step);
            let mask_seed = mix_seed(config.seed, step as u64);
            let results: Vec<Result<(f64, Option<Gradients<f32>>)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|u| {
                        let dropout_seed = mix_seed(mask_seed, u.record as u64 + 1);
                        unit_pass(&model, &cache, &inputs[u.record], &u.examples, mask_seed, Some(dropout_seed), true)
                    })
                    .collect()
            });
            let n: usize = batch.iter().map(|u| u.examples.len()).sum();
            let mut grads = Gradients::empty(model.store.len());
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                if let Some(g) = g {
                    grads.merge(&g);
                }
            }
            let loss = loss / n as f64;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    step,
                    lr,
                    last_loss: losses.last().copied().unwrap_or(f64::NAN),
                });
            }
            losses.push(loss);
            grads.scale(1.0 / n as f32);
            adam.step(&mut model.store, &grads, lr);
            if config.eval_every_steps > 0 && step.is_multiple_of(config.eval_every_steps) {
                evaluate_now(&model, step, &mut history, &mut progress)?;
            }
        }
        if config.eval_every_steps == 0 || !step.is_multiple_of(config.eval_every_steps) {
            evaluate_now(&model, step, &mut history, &mut progress)?;
        }
    }
    let best_report = best.as_ref().map(|(r, _)| *r);
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(TrainOutcome {
        model,
        best: best_report,
        history,
        losses,
        steps: step,
        skipped_impressions,
    })
}
