//! Model-level probes: gradient check, encoder scaling benchmark and UHS
//! attention entropy.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SparModel, UserInput};
use crate::numerics::{grad_check, GradCheckReport, Graph, ParamStore, ParamValues, Var};
use crate::polyattn::{attention_entropy, SparseMask};
use crate::predictor::nce_loss_graph;
use crate::textprep::{ContentItem, FieldCaps, Vocabulary};

/// Small full model: 2 encoder layers, `d = 32`, `k = 8`, `m = 4`, `n = 2`.
pub fn grad_check_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder = EncoderConfig {
        layers: 2,
        heads: 2,
        model_dim: 32,
        ffn_dim: 64,
        max_session_tokens: 128,
        vocab_size: 0,
        dropout: 0.0,
    };
    c.caps = FieldCaps {
        title: 4,
        abstract_text: 4,
        category: 1,
    };
    c.summary_tokens = 8;
    c.history_cap = 6;
    c.session_size = 3;
    c.uhs_codes = 8;
    c.interest_codes = 4;
    c.candidate_codes = 2;
    c.code_dim = 16;
    c.repr_dim = 24;
    c.window = 12;
    c.random_ratio = 0.1;
    c.init_std = 0.2;
    c
}

const WORDS: [&str; 12] = [
    "sports", "finance", "travel", "music", "match", "market", "trip", "song", "team", "stock", "beach", "band",
];

fn random_item(rng: &mut ChaCha8Rng, i: usize) -> ContentItem {
    let mut w = || WORDS[rng.gen_range(0..WORDS.len())];
    ContentItem::new(format!("N{i}"), format!("{} {} {}", w(), w(), w()), format!("{} {}", w(), w()), w())
}

/// A model over a fixed toy vocabulary, a random user history and
/// `1 + negatives` random candidates.
pub fn toy_setup(config: ModelConfig, seed: u64, negatives: usize) -> Result<(SparModel, UserInput, Vec<Vec<u32>>)> {
    let vocab = Vocabulary::build(WORDS.iter().copied().chain(["news", "title", "abstract", "category"]), 64);
    let model = SparModel::new(config, vocab, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let history: Vec<Vec<u32>> = (0..model.config().history_cap)
        .map(|i| model.item_tokens(&random_item(&mut rng, i)))
        .collect();
    let summary = model.summary_tokens("this user likes sports and music");
    let input = model.user_input(&history, Some(&summary))?;
    let candidates = (0..=negatives)
        .map(|i| model.candidate_tokens(&random_item(&mut rng, 100 + i)))
        .collect();
    Ok((model, input, candidates))
}

/// NCE loss of the first candidate against the rest, as a graph node.
pub fn toy_loss<T: crate::numerics::Real>(
    model_net: &crate::model::SparNet,
    g: &mut Graph<'_, T>,
    input: &UserInput,
    candidates: &[Vec<u32>],
    mask_seed: u64,
) -> Result<Var> {
    let gamma = model_net.user_forward(g, input, mask_seed, None)?.gamma;
    let mut scores = Vec::with_capacity(candidates.len());
    for ids in candidates {
        let lambda = model_net.candidate_forward(g, ids, None)?;
        scores.push(model_net.score(g, gamma, lambda)?);
    }
    nce_loss_graph(g, &scores)
}

/// Finite-difference check of every trainable parameter of `config`'s model,
/// run on an `f64` copy of the weights.
pub fn model_grad_check(config: ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let (model, input, candidates) = toy_setup(config, seed, 4)?;
    let mut values = ParamValues::<f64>::from_store(&model.store);
    let net = &model.net;
    grad_check(
        &mut values,
        |g| toy_loss(net, g, &input, &candidates, seed),
        1e-5,
        16,
        seed,
    )
}

/// Median wall-clock seconds of session-split vs single-sequence encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub total_tokens: usize,
    pub sessions: usize,
    pub repetitions: usize,
    pub sessioned_secs: f64,
    pub full_secs: f64,
}

impl BenchReport {
    pub fn ratio(&self) -> f64 {
        self.sessioned_secs / self.full_secs
    }

    pub fn table(&self) -> String {
        format!(
            "layout\ttokens\tmedian_seconds\n{}x{}\t{}\t{:.6}\n1x{}\t{}\t{:.6}\nratio\t\t{:.4}\n",
            self.sessions,
            self.total_tokens / self.sessions,
            self.total_tokens,
            self.sessioned_secs,
            self.total_tokens,
            self.total_tokens,
            self.full_secs,
            self.ratio()
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times inference encoding of `total_tokens` random tokens as `sessions`
/// independent sessions and as one sequence, alternating the two layouts.
pub fn benchmark_encoder(mut config: EncoderConfig, total_tokens: usize, sessions: usize, repetitions: usize, seed: u64) -> Result<BenchReport> {
    if sessions == 0 || repetitions == 0 || !total_tokens.is_multiple_of(sessions) {
        return Err(Error::Config(format!(
            "benchmark needs sessions >= 1 dividing the token count and repetitions >= 1 \
             ({total_tokens} tokens, {sessions} sessions, {repetitions} repetitions)"
        )));
    }
    config.max_session_tokens = config.max_session_tokens.max(total_tokens);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::new(config.clone(), &mut store, 0.02, &mut rng)?;
    let ids: Vec<u32> = (0..total_tokens).map(|_| rng.gen_range(4..config.vocab_size as u32)).collect();
    let per = total_tokens / sessions;
    let (mut split, mut full) = (Vec::new(), Vec::new());
    for _ in 0..repetitions {
        let t = Instant::now();
        {
            let mut g = Graph::<f32>::inference(&store);
            for chunk in ids.chunks(per) {
                encoder.encode_session(&mut g, chunk, None, None)?;
            }
        }
        split.push(t.elapsed().as_secs_f64());

        let t = Instant::now();
        let mut g = Graph::<f32>::inference(&store);
        encoder.encode_session(&mut g, &ids, None, None)?;
        full.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        total_tokens,
        sessions,
        repetitions,
        sessioned_secs: median(split),
        full_secs: median(full),
    })
}

/// UHS attention entropy of one history under `mask` (`None` = full attention).
/// Returns the mean over codes and the per-code entropies.
pub fn uhs_entropy(model: &SparModel, input: &UserInput, mask: Option<&SparseMask>) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::inference(&model.store);
    let out = model.net.user_forward_with_mask(&mut g, input, mask, None)?;
    let weights = out
        .uhs_weights
        .ok_or_else(|| Error::Config("entropy probe needs the UHS layer (no_uhs is set)".into()))?;
    let w = g.tensor(weights);
    let (rows, cols) = w.dims2()?;
    let per_code = (0..rows)
        .map(|r| attention_entropy(&crate::numerics::Tensor::matrix(1, cols, w.row(r).to_vec())?))
        .collect::<Result<Vec<f64>>>()?;
    Ok((attention_entropy(&w)?, per_code))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_check() {
        let report = model_grad_check(grad_check_config(), 3).unwrap();
        assert!(report.max_error() < 1e-3, "{:?}", report.worst());
        assert!(report.per_param.len() > 30);
    }

    #[test]
    fn bench_rejects_uneven_split() {
        assert!(benchmark_encoder(EncoderConfig::default(), 100, 3, 1, 0).is_err());
    }

    #[test]
    fn entropy_is_bounded_by_log_length() {
        let (model, input, _) = toy_setup(grad_check_config(), 1, 1).unwrap();
        let (mean, per_code) = uhs_entropy(&model, &input, None).unwrap();
        assert_eq!(per_code.len(), 8);
        assert!(mean > 0.0 && mean <= (input.total_tokens() as f64).ln() + 1e-9);
    }
}
