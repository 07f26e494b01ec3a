//! The assembled recommender: session encoder, the three codebook layers, an
//! optional output projection and the score head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::make_sessions;
use crate::encoder::{Encoder, EncoderConfig, SessionBatch};
use crate::error::{Error, Result};
use crate::numerics::{Graph, LrGroup, ParamId, ParamStore, Real, Tensor, Var};
use crate::polyattn::{build_sparse_mask, ccs, uhs, uie, Codebook, SparseMask};
use crate::predictor::{relevance_score_graph, ScoreHead};
use crate::textprep::{tokenize, tokenize_item, ContentItem, FieldCaps, Schema, TokenSequence, Vocabulary};

/// Component switches matching the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Use each item's SOS state as its summarized row instead of the UHS layer.
    pub no_uhs: bool,
    /// Let every UHS code see every history token.
    pub full_attention: bool,
    /// One item per session.
    pub no_sessions: bool,
    /// Drop the prepended interest summary.
    pub no_summary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub schema: Schema,
    pub caps: FieldCaps,
    pub summary_tokens: usize,
    pub history_cap: usize,
    pub session_size: usize,
    /// `k`, the number of UHS codes.
    pub uhs_codes: usize,
    /// `m`, the number of user-interest codes.
    pub interest_codes: usize,
    /// `n`, the number of candidate codes.
    pub candidate_codes: usize,
    /// `p`, the width of code vectors.
    pub code_dim: usize,
    /// `r`, the width of Γ and Λ rows; a `d×r` projection is added when `r != d`.
    pub repr_dim: usize,
    pub window: usize,
    pub random_ratio: f64,
    pub init_std: f32,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        let d = encoder.model_dim;
        Self {
            encoder,
            schema: Schema::News,
            caps: FieldCaps::for_schema(Schema::News),
            summary_tokens: 64,
            history_cap: 60,
            session_size: 10,
            uhs_codes: 60,
            interest_codes: 16,
            candidate_codes: 4,
            code_dim: d / 2,
            repr_dim: d,
            window: 64,
            random_ratio: 0.1,
            init_std: 0.02,
            ablation: Ablation::default(),
        }
    }
}

fn parse<V: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<V> {
    let raw = pairs
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("config key `{key}` missing")))?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("config key `{key}` has unparsable value `{raw}`")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let d = self.encoder.model_dim;
        let positive = [
            ("history_cap", self.history_cap),
            ("session_size", self.session_size),
            ("k", self.uhs_codes),
            ("m", self.interest_codes),
            ("n", self.candidate_codes),
            ("code_dim", self.code_dim),
            ("repr_dim", self.repr_dim),
            ("window", self.window),
            ("summary_tokens", self.summary_tokens),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{key} must be at least 1")));
        }
        if self.code_dim > d {
            return Err(Error::Config(format!("code_dim {} exceeds model_dim {d}", self.code_dim)));
        }
        if !(0.0..=1.0).contains(&self.random_ratio) {
            return Err(Error::Config(format!("random_ratio {} outside [0, 1]", self.random_ratio)));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    /// Every architecture-defining value, keyed by its settings name.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let e = &self.encoder;
        let a = &self.ablation;
        [
            ("layers", e.layers.to_string()),
            ("heads", e.heads.to_string()),
            ("model_dim", e.model_dim.to_string()),
            ("ffn_dim", e.ffn_dim.to_string()),
            ("max_session_tokens", e.max_session_tokens.to_string()),
            ("vocab_size", e.vocab_size.to_string()),
            ("dropout", e.dropout.to_string()),
            ("schema", self.schema.as_str().to_string()),
            ("title_cap", self.caps.title.to_string()),
            ("abstract_cap", self.caps.abstract_text.to_string()),
            ("category_cap", self.caps.category.to_string()),
            ("summary_tokens", self.summary_tokens.to_string()),
            ("history_cap", self.history_cap.to_string()),
            ("session_size", self.session_size.to_string()),
            ("k", self.uhs_codes.to_string()),
            ("m", self.interest_codes.to_string()),
            ("n", self.candidate_codes.to_string()),
            ("code_dim", self.code_dim.to_string()),
            ("repr_dim", self.repr_dim.to_string()),
            ("window", self.window.to_string()),
            ("random_ratio", self.random_ratio.to_string()),
            ("init_std", self.init_std.to_string()),
            ("no_uhs", a.no_uhs.to_string()),
            ("full_attention", a.full_attention.to_string()),
            ("no_sessions", a.no_sessions.to_string()),
            ("no_summary", a.no_summary.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = Self {
            encoder: EncoderConfig {
                layers: parse(pairs, "layers")?,
                heads: parse(pairs, "heads")?,
                model_dim: parse(pairs, "model_dim")?,
                ffn_dim: parse(pairs, "ffn_dim")?,
                max_session_tokens: parse(pairs, "max_session_tokens")?,
                vocab_size: parse(pairs, "vocab_size")?,
                dropout: parse(pairs, "dropout")?,
            },
            schema: Schema::parse(&parse::<String>(pairs, "schema")?)?,
            caps: FieldCaps {
                title: parse(pairs, "title_cap")?,
                abstract_text: parse(pairs, "abstract_cap")?,
                category: parse(pairs, "category_cap")?,
            },
            summary_tokens: parse(pairs, "summary_tokens")?,
            history_cap: parse(pairs, "history_cap")?,
            session_size: parse(pairs, "session_size")?,
            uhs_codes: parse(pairs, "k")?,
            interest_codes: parse(pairs, "m")?,
            candidate_codes: parse(pairs, "n")?,
            code_dim: parse(pairs, "code_dim")?,
            repr_dim: parse(pairs, "repr_dim")?,
            window: parse(pairs, "window")?,
            random_ratio: parse(pairs, "random_ratio")?,
            init_std: parse(pairs, "init_std")?,
            ablation: Ablation {
                no_uhs: parse(pairs, "no_uhs")?,
                full_attention: parse(pairs, "full_attention")?,
                no_sessions: parse(pairs, "no_sessions")?,
                no_summary: parse(pairs, "no_summary")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Tokenized, session-grouped history of one user, ready for the encoder.
#[derive(Clone, Debug)]
pub struct UserInput {
    pub sessions: SessionBatch,
    pub summary: Option<TokenSequence>,
}

impl UserInput {
    /// Total history length `L⁺` including the summary.
    pub fn total_tokens(&self) -> usize {
        self.sessions.total_tokens() + self.summary.as_ref().map_or(0, |s| s.len())
    }

    /// SOS rows of the concatenated history.
    pub fn sos_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = 0;
        if let Some(s) = &self.summary {
            out.extend(s.sos_positions());
            offset = s.len();
        }
        for r in 0..self.sessions.num_sessions() {
            out.extend(self.sessions.sos_positions(r).iter().map(|&p| p + offset));
            offset += self.sessions.lengths()[r];
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UserForward {
    /// `Γ`, `m×r`.
    pub gamma: Var,
    /// UHS weights (`k×L⁺`), absent under `no_uhs`.
    pub uhs_weights: Option<Var>,
}

/// Parameter handles of the whole network. Forward passes are generic over
/// the element type so the same code runs on `f32` weights and on `f64`
/// copies for gradient checking.
#[derive(Clone, Debug)]
pub struct SparNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub uhs: Codebook,
    pub uie: Codebook,
    pub ccs: Codebook,
    pub projection: Option<ParamId>,
    pub head: ScoreHead,
}

impl SparNet {
    pub fn new(config: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let d = config.encoder.model_dim;
        let p = config.code_dim;
        let encoder = Encoder::new(config.encoder.clone(), store, std, &mut rng)?;
        let uhs = Codebook::new(store, "uhs", config.uhs_codes, d, p, std, &mut rng)?;
        let uie = Codebook::new(store, "uie", config.interest_codes, d, p, std, &mut rng)?;
        let ccs = Codebook::new(store, "ccs", config.candidate_codes, d, p, std, &mut rng)?;
        let projection = (config.repr_dim != d).then(|| {
            store.add(
                "projection.weight",
                Tensor::random_normal(vec![d, config.repr_dim], std, &mut rng),
                LrGroup::NewLayer,
            )
        });
        let head = ScoreHead::new(store, config.repr_dim, std, &mut rng);
        Ok(Self {
            config,
            encoder,
            uhs,
            uie,
            ccs,
            projection,
            head,
        })
    }

    fn project<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self.projection {
            Some(w) => {
                let w = g.param(w);
                g.matmul(x, w)
            }
            None => Ok(x),
        }
    }

    /// The UHS mask for a history, or `None` under full attention.
    pub fn uhs_mask(&self, input: &UserInput, seed: u64) -> Result<Option<SparseMask>> {
        if self.config.ablation.full_attention {
            return Ok(None);
        }
        build_sparse_mask(
            input.total_tokens(),
            &input.sos_positions(),
            self.config.uhs_codes,
            self.config.window,
            self.config.random_ratio,
            seed,
        )
        .map(Some)
    }

    /// Γ for one user with an explicit UHS mask.
    pub fn user_forward_with_mask<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        input: &UserInput,
        mask: Option<&SparseMask>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<UserForward> {
        let enc = self.encoder.encode_user_history(g, &input.sessions, input.summary.as_ref(), dropout)?;
        let (summarized, uhs_weights) = if self.config.ablation.no_uhs {
            (g.gather_rows(enc.states, &enc.sos_positions)?, None)
        } else {
            let out = uhs(g, enc.states, &self.uhs, mask)?;
            (out.output, Some(out.weights))
        };
        let interests = uie(g, summarized, &self.uie)?;
        let gamma = self.project(g, interests.output)?;
        Ok(UserForward { gamma, uhs_weights })
    }

    /// Γ for one user; `mask_seed` keys the random part of the UHS mask.
    pub fn user_forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        input: &UserInput,
        mask_seed: u64,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<UserForward> {
        let mask = self.uhs_mask(input, mask_seed)?;
        self.user_forward_with_mask(g, input, mask.as_ref(), dropout)
    }

    /// Λ (`n×r`) for one candidate's token ids.
    pub fn candidate_forward<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[u32], dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let h = self.encoder.encode_candidate(g, ids, dropout)?;
        let out = ccs(g, h, &self.ccs)?;
        self.project(g, out.output)
    }

    pub fn score<T: Real>(&self, g: &mut Graph<'_, T>, gamma: Var, lambda: Var) -> Result<Var> {
        relevance_score_graph(g, gamma, lambda, &self.head)
    }
}

/// A network together with its weights and vocabulary.
#[derive(Clone, Debug)]
pub struct SparModel {
    pub net: SparNet,
    pub store: ParamStore,
    pub vocab: Vocabulary,
}

impl SparModel {
    /// Fresh seeded weights; the encoder vocabulary size is taken from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.encoder.vocab_size = vocab.size();
        let mut store = ParamStore::new();
        let net = SparNet::new(config, &mut store, seed)?;
        Ok(Self { net, store, vocab })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Candidate token ids; the SOS/EOS wrapping matches history items.
    pub fn candidate_tokens(&self, item: &ContentItem) -> Vec<u32> {
        TokenSequence::single(&self.item_tokens(item)).ids
    }

    pub fn item_tokens(&self, item: &ContentItem) -> Vec<u32> {
        let c = self.config();
        tokenize_item(item, c.schema, c.caps, &self.vocab)
    }

    pub fn summary_tokens(&self, summary: &str) -> Vec<u32> {
        tokenize(summary, &self.vocab, self.config().summary_tokens)
    }

    /// Builds encoder input from tokenized history items (most recent first).
    ///
    /// The history is capped, grouped into sessions, and a summary is
    /// prepended unless the ablation drops it. A user without history is
    /// represented by one empty item.
    pub fn user_input(&self, items: &[Vec<u32>], summary: Option<&[u32]>) -> Result<UserInput> {
        let c = self.config();
        let empty = [Vec::new()];
        let items = if items.is_empty() { &empty[..] } else { &items[..items.len().min(c.history_cap)] };
        let groups = make_sessions(items.len(), c.session_size, !c.ablation.no_sessions)?;
        let sequences: Vec<TokenSequence> = groups
            .iter()
            .map(|range| {
                let mut s = TokenSequence::empty();
                for item in &items[range.clone()] {
                    s.push_item(item);
                }
                s
            })
            .collect();
        let summary = match summary {
            Some(s) if !c.ablation.no_summary => Some(TokenSequence::single(s)),
            _ => None,
        };
        Ok(UserInput {
            sessions: SessionBatch::from_sequences(&sequences)?,
            summary,
        })
    }

    /// Γ as a plain tensor, computed without gradient tracking.
    pub fn user_embedding(&self, input: &UserInput, mask_seed: u64) -> Result<Tensor> {
        let mut g = Graph::inference(&self.store);
        let out = self.net.user_forward(&mut g, input, mask_seed, None)?;
        Ok(g.tensor(out.gamma))
    }

    /// Λ as a plain tensor, computed without gradient tracking.
    pub fn candidate_embedding(&self, ids: &[u32]) -> Result<Tensor> {
        let mut g = Graph::inference(&self.store);
        let lambda = self.net.candidate_forward(&mut g, ids, None)?;
        Ok(g.tensor(lambda))
    }

    /// Scores candidates for one user in a single live forward pass.
    pub fn score_live(&self, input: &UserInput, candidates: &[Vec<u32>], mask_seed: u64) -> Result<Vec<f32>> {
        let mut g = Graph::inference(&self.store);
        let gamma = self.net.user_forward(&mut g, input, mask_seed, None)?.gamma;
        candidates
            .iter()
            .map(|ids| {
                let lambda = self.net.candidate_forward(&mut g, ids, None)?;
                let s = self.net.score(&mut g, gamma, lambda)?;
                Ok(g.scalar(s))
            })
            .collect()
    }

    pub fn score_weight(&self) -> &Tensor {
        &self.store.get(self.net.head.weight).tensor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        let mut c = ModelConfig::default();
        c.encoder = EncoderConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            max_session_tokens: 128,
            vocab_size: 0,
            dropout: 0.0,
        };
        c.caps = FieldCaps {
            title: 6,
            abstract_text: 6,
            category: 1,
        };
        c.history_cap = 6;
        c.session_size = 2;
        c.uhs_codes = 4;
        c.interest_codes = 3;
        c.candidate_codes = 2;
        c.code_dim = 4;
        c.repr_dim = 8;
        c.window = 5;
        c.init_std = 0.3;
        c
    }

    fn tiny_model(config: ModelConfig) -> SparModel {
        let vocab = Vocabulary::build(["alpha beta gamma delta news title abstract category sports tech"], 100);
        SparModel::new(config, vocab, 3).unwrap()
    }

    fn items(model: &SparModel) -> Vec<Vec<u32>> {
        ["alpha beta", "gamma delta", "beta gamma", "alpha"]
            .iter()
            .map(|t| model.item_tokens(&ContentItem::new("x", *t, "sports", "tech")))
            .collect()
    }

    #[test]
    fn config_pairs_round_trip() {
        let mut c = tiny_config();
        c.encoder.vocab_size = 50;
        c.ablation.no_uhs = true;
        c.random_ratio = 0.25;
        assert_eq!(ModelConfig::from_pairs(&c.to_pairs()).unwrap(), c);
    }

    #[test]
    fn embeddings_have_configured_shapes() {
        let mut c = tiny_config();
        c.repr_dim = 5;
        let model = tiny_model(c);
        let input = model.user_input(&items(&model), None).unwrap();
        assert_eq!(model.user_embedding(&input, 0).unwrap().shape(), &[3, 5]);
        let cand = model.candidate_tokens(&ContentItem::new("c", "alpha", "beta", "tech"));
        assert_eq!(model.candidate_embedding(&cand).unwrap().shape(), &[2, 5]);
    }

    #[test]
    fn sessions_and_summary_shape_input() {
        let model = tiny_model(tiny_config());
        let summary = model.summary_tokens("sports tech");
        let input = model.user_input(&items(&model), Some(&summary)).unwrap();
        assert_eq!(input.sessions.num_sessions(), 2);
        assert_eq!(input.sos_positions()[0], 0);
        assert_eq!(input.sos_positions().len(), 5);

        let mut c = tiny_config();
        c.ablation.no_sessions = true;
        c.ablation.no_summary = true;
        let model = tiny_model(c);
        let input = model.user_input(&items(&model), Some(&summary)).unwrap();
        assert_eq!(input.sessions.num_sessions(), 4);
        assert!(input.summary.is_none());
    }

    #[test]
    fn cold_start_user_is_encodable() {
        let model = tiny_model(tiny_config());
        let input = model.user_input(&[], None).unwrap();
        assert!(model.user_embedding(&input, 0).unwrap().is_finite());
    }

    #[test]
    fn history_is_capped() {
        let model = tiny_model(tiny_config());
        let many: Vec<Vec<u32>> = items(&model).into_iter().cycle().take(20).collect();
        let input = model.user_input(&many, None).unwrap();
        assert_eq!(input.sos_positions().len(), 6);
    }

    #[test]
    fn live_scores_match_store_scores() {
        let model = tiny_model(tiny_config());
        let input = model.user_input(&items(&model), None).unwrap();
        let cands: Vec<Vec<u32>> = ["alpha", "delta gamma"]
            .iter()
            .map(|t| model.candidate_tokens(&ContentItem::new("c", *t, "", "sports")))
            .collect();
        let live = model.score_live(&input, &cands, 9).unwrap();
        let gamma = model.user_embedding(&input, 9).unwrap();
        for (ids, s) in cands.iter().zip(live) {
            let lambda = model.candidate_embedding(ids).unwrap();
            let stored = crate::predictor::relevance_score(&gamma, &lambda, model.score_weight()).unwrap();
            assert_eq!(stored, s);
        }
    }

    #[test]
    fn every_ablation_builds_and_runs() {
        for bits in 0..16u8 {
            let mut c = tiny_config();
            c.ablation = Ablation {
                no_uhs: bits & 1 != 0,
                full_attention: bits & 2 != 0,
                no_sessions: bits & 4 != 0,
                no_summary: bits & 8 != 0,
            };
            let model = tiny_model(c);
            let input = model.user_input(&items(&model), Some(&[5, 6])).unwrap();
            let cand = model.candidate_tokens(&ContentItem::new("c", "alpha", "beta", "tech"));
            let s = model.score_live(&input, &[cand], 0).unwrap();
            assert!(s[0].is_finite());
        }
    }
}
