//! Small pre-norm transformer encoder applied independently per session.
//!
//! Sessions never attend to each other: each one is encoded on its own with
//! session-local positions, and the user history is the row concatenation of
//! the per-session outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, LrGroup, Mask, ParamId, ParamStore, Real, Tensor, Var};
use crate::textprep::{TokenSequence, PAD};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_session_tokens: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            max_session_tokens: 1280,
            vocab_size: 8196,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("encoder extents must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.max_session_tokens == 0 || self.vocab_size < 4 {
            return bad("max_session_tokens and vocab_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Padded sessions of one user, `g×l`.
#[derive(Clone, Debug)]
pub struct SessionBatch {
    ids: Vec<u32>,
    /// `true` exactly where the id is a real token.
    pad_mask: Mask,
    lengths: Vec<usize>,
    sos_positions: Vec<Vec<usize>>,
}

impl SessionBatch {
    pub fn from_sequences(sessions: &[TokenSequence]) -> Result<Self> {
        if sessions.is_empty() || sessions.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyHistory);
        }
        let width = sessions.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![PAD; sessions.len() * width];
        let mut mask = Mask::all(sessions.len(), width, false);
        for (r, s) in sessions.iter().enumerate() {
            ids[r * width..r * width + s.len()].copy_from_slice(&s.ids);
            for c in 0..s.len() {
                mask.set(r, c, true);
            }
        }
        Ok(Self {
            ids,
            pad_mask: mask,
            lengths: sessions.iter().map(|s| s.len()).collect(),
            sos_positions: sessions.iter().map(|s| s.sos_positions()).collect(),
        })
    }

    pub fn num_sessions(&self) -> usize {
        self.lengths.len()
    }

    pub fn width(&self) -> usize {
        self.pad_mask.cols()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn row_ids(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width()..(r + 1) * self.width()]
    }

    pub fn pad_mask(&self) -> &Mask {
        &self.pad_mask
    }

    pub fn sos_positions(&self, r: usize) -> &[usize] {
        &self.sos_positions[r]
    }

    pub fn total_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    /// Key projection without bias: a key bias shifts every logit of a
    /// query row equally and so never receives gradient.
    wk: ParamId,
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ffn_in: (ParamId, ParamId),
    ffn_out: (ParamId, ParamId),
}

/// Token states of a whole user history.
#[derive(Clone, Debug)]
pub struct HistoryEncoding {
    /// `L⁺×d`: summary rows first (if any), then each session's real tokens.
    pub states: Var,
    /// SOS rows within `states`, in order.
    pub sos_positions: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    final_ln: (ParamId, ParamId),
}

fn linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, std: f32, rng: &mut impl Rng) -> (ParamId, ParamId) {
    let w = store.add(
        format!("{name}.weight"),
        Tensor::random_normal(vec![fan_in, fan_out], std, rng),
        LrGroup::Base,
    );
    let b = store.add(format!("{name}.bias"), Tensor::zeros(vec![1, fan_out]), LrGroup::Base);
    (w, b)
}

fn layer_norm_params(store: &mut ParamStore, name: &str, dim: usize) -> (ParamId, ParamId) {
    let g = store.add(format!("{name}.gain"), Tensor::filled(vec![1, dim], 1.0), LrGroup::Base);
    let b = store.add(format!("{name}.bias"), Tensor::zeros(vec![1, dim]), LrGroup::Base);
    (g, b)
}

impl Encoder {
    pub fn new(config: EncoderConfig, store: &mut ParamStore, init_std: f32, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let tok_emb = store.add(
            "encoder.tok_emb",
            Tensor::random_normal(vec![config.vocab_size, d], init_std, rng),
            LrGroup::Base,
        );
        let pos_emb = store.add(
            "encoder.pos_emb",
            Tensor::random_normal(vec![config.max_session_tokens, d], init_std, rng),
            LrGroup::Base,
        );
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("encoder.layer{l}");
            blocks.push(Block {
                ln1: layer_norm_params(store, &format!("{p}.ln1"), d),
                wq: linear(store, &format!("{p}.attn.q"), d, d, init_std, rng),
                wk: store.add(
                    format!("{p}.attn.k.weight"),
                    Tensor::random_normal(vec![d, d], init_std, rng),
                    LrGroup::Base,
                ),
                wv: linear(store, &format!("{p}.attn.v"), d, d, init_std, rng),
                wo: linear(store, &format!("{p}.attn.out"), d, d, init_std, rng),
                ln2: layer_norm_params(store, &format!("{p}.ln2"), d),
                ffn_in: linear(store, &format!("{p}.ffn.in"), d, config.ffn_dim, init_std, rng),
                ffn_out: linear(store, &format!("{p}.ffn.out"), config.ffn_dim, d, init_std, rng),
            });
        }
        let final_ln = layer_norm_params(store, "encoder.final_ln", d);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
            final_ln,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn affine<T: Real>(g: &mut Graph<'_, T>, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let w = g.param(w);
        let b = g.param(b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm<T: Real>(g: &mut Graph<'_, T>, x: Var, (gain, bias): (ParamId, ParamId)) -> Result<Var> {
        let gain = g.param(gain);
        let bias = g.param(bias);
        g.layer_norm(x, gain, bias)
    }

    fn dropout<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_deref_mut() else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let (r, c) = g.dims(x);
        let keep = T::of_f64(1.0 / (1.0 - p));
        let mask = (0..r * c)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = g.input(r, c, mask)?;
        g.mul(x, m)
    }

    /// Encodes one session (`l` ids, optionally padded) into `l×d` states.
    ///
    /// `pad_mask[j] == false` hides position `j` as an attention key. Passing
    /// a generator enables dropout (training mode).
    pub fn encode_session<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[u32],
        pad_mask: Option<&[bool]>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if ids.len() > self.config.max_session_tokens {
            return Err(Error::SessionTooLong {
                len: ids.len(),
                max: self.config.max_session_tokens,
            });
        }
        if ids.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let heads = self.config.heads;
        let tok = g.param(self.tok_emb);
        let pos = g.param(self.pos_emb);
        let x = g.embedding(tok, ids)?;
        let p = g.slice_rows(pos, 0, ids.len())?;
        let mut x = g.add(x, p)?;
        x = self.dropout(g, x, &mut dropout)?;
        for b in &self.blocks {
            let h = Self::norm(g, x, b.ln1)?;
            let q = Self::affine(g, h, b.wq)?;
            let wk = g.param(b.wk);
            let k = g.matmul(h, wk)?;
            let v = Self::affine(g, h, b.wv)?;
            let a = g.attention(q, k, v, heads, pad_mask)?;
            let o = Self::affine(g, a, b.wo)?;
            let o = self.dropout(g, o, &mut dropout)?;
            x = g.add(x, o)?;
            let h = Self::norm(g, x, b.ln2)?;
            let f = Self::affine(g, h, b.ffn_in)?;
            let f = g.gelu(f);
            let f = Self::affine(g, f, b.ffn_out)?;
            let f = self.dropout(g, f, &mut dropout)?;
            x = g.add(x, f)?;
        }
        Self::norm(g, x, self.final_ln)
    }

    /// Candidate-side encoding: the same network and weights as sessions.
    pub fn encode_candidate<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[u32], dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        self.encode_session(g, ids, None, dropout)
    }

    /// Encodes every session separately and concatenates the real-token rows,
    /// with the summary's states placed first when present.
    pub fn encode_user_history<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        sessions: &SessionBatch,
        summary: Option<&TokenSequence>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<HistoryEncoding> {
        if sessions.num_sessions() == 0 {
            return Err(Error::EmptyHistory);
        }
        let mut parts = Vec::with_capacity(sessions.num_sessions() + 1);
        let mut sos_positions = Vec::new();
        let mut offset = 0;
        if let Some(s) = summary {
            parts.push(self.encode_session(g, &s.ids, None, dropout.as_deref_mut())?);
            sos_positions.extend(s.sos_positions());
            offset += s.len();
        }
        for r in 0..sessions.num_sessions() {
            let len = sessions.lengths()[r];
            // padding never changes real-token states, so only real tokens are encoded
            let h = self.encode_session(g, &sessions.row_ids(r)[..len], None, dropout.as_deref_mut())?;
            parts.push(h);
            sos_positions.extend(sessions.sos_positions(r).iter().map(|&p| p + offset));
            offset += len;
        }
        let states = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        Ok(HistoryEncoding { states, sos_positions })
    }
}
