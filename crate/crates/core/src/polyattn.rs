//! Codebook ("poly") attention layers and the sparse visibility mask.
//!
//! A codebook of `q` learned query codes turns an `L×d` sequence into `q`
//! convex combinations of its rows:
//! `out_a = softmax(code_a · tanh(H·W)ᵀ) · H`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, LrGroup, Mask, ParamId, ParamStore, Real, Tensor, Var};

/// Learned codes (`q×p`) with their key projection (`d×p`).
#[derive(Clone, Copy, Debug)]
pub struct Codebook {
    pub codes: ParamId,
    pub projection: ParamId,
    pub num_codes: usize,
    pub code_dim: usize,
}

impl Codebook {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        num_codes: usize,
        model_dim: usize,
        code_dim: usize,
        init_std: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_codes == 0 || code_dim == 0 || code_dim > model_dim {
            return Err(Error::Config(format!(
                "codebook {name}: need q >= 1 and 1 <= p <= d (q={num_codes}, p={code_dim}, d={model_dim})"
            )));
        }
        let codes = store.add(
            format!("{name}.codes"),
            Tensor::random_normal(vec![num_codes, code_dim], init_std, rng),
            LrGroup::NewLayer,
        );
        let projection = store.add(
            format!("{name}.projection"),
            Tensor::random_normal(vec![model_dim, code_dim], init_std, rng),
            LrGroup::NewLayer,
        );
        Ok(Self {
            codes,
            projection,
            num_codes,
            code_dim,
        })
    }
}

/// Per-code token visibility for the history summarizing layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMask {
    pub allowed: Mask,
    pub window: usize,
    pub random_ratio: f64,
    pub seed: u64,
}

/// Token span of width `window` around code `code`'s proportional position,
/// shifted to stay inside `[0, len)`.
pub fn window_span(len: usize, num_codes: usize, code: usize, window: usize) -> std::ops::Range<usize> {
    if window >= len {
        return 0..len;
    }
    let center = (((code as f64 + 0.5) * len as f64 / num_codes as f64).floor() as usize).min(len - 1);
    let start = center.saturating_sub((window - 1) / 2).min(len - window);
    start..start + window
}

/// Visibility of `total_len` tokens for `num_codes` codes: a local window,
/// every SOS position, and `floor(random_ratio · remaining)` further tokens
/// drawn without replacement from a generator keyed by `(seed, code)`.
pub fn build_sparse_mask(
    total_len: usize,
    sos_positions: &[usize],
    num_codes: usize,
    window: usize,
    random_ratio: f64,
    seed: u64,
) -> Result<SparseMask> {
    if window == 0 || num_codes == 0 || total_len == 0 || !(0.0..=1.0).contains(&random_ratio) {
        return Err(Error::Config(format!(
            "sparse mask needs window >= 1, k >= 1, L >= 1 and ratio in [0,1] \
             (window={window}, k={num_codes}, L={total_len}, ratio={random_ratio})"
        )));
    }
    if let Some(&p) = sos_positions.iter().find(|&&p| p >= total_len) {
        return Err(Error::Dimension {
            op: "sparse mask sos position",
            left: vec![p],
            right: vec![total_len],
        });
    }
    let mut allowed = Mask::all(num_codes, total_len, false);
    let mut rest = Vec::with_capacity(total_len);
    for a in 0..num_codes {
        for j in window_span(total_len, num_codes, a, window) {
            allowed.set(a, j, true);
        }
        for &p in sos_positions {
            allowed.set(a, p, true);
        }
        rest.clear();
        rest.extend((0..total_len).filter(|&j| !allowed.get(a, j)));
        let extra = (random_ratio * rest.len() as f64).floor() as usize;
        if extra > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(a as u64);
            for i in sample(&mut rng, rest.len(), extra) {
                allowed.set(a, rest[i], true);
            }
        }
    }
    Ok(SparseMask {
        allowed,
        window,
        random_ratio,
        seed,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct PolyOutput {
    /// `q×d` fused rows.
    pub output: Var,
    /// `q×L` attention weights.
    pub weights: Var,
}

pub fn poly_attend<T: Real>(g: &mut Graph<'_, T>, states: Var, book: &Codebook, mask: Option<&Mask>) -> Result<PolyOutput> {
    let (len, _) = g.dims(states);
    if let Some(m) = mask {
        if m.rows() != book.num_codes || m.cols() != len {
            return Err(Error::Dimension {
                op: "poly_attend mask",
                left: vec![book.num_codes, len],
                right: vec![m.rows(), m.cols()],
            });
        }
    }
    let proj = g.param(book.projection);
    let keys = g.matmul(states, proj)?;
    let keys = g.tanh(keys);
    let codes = g.param(book.codes);
    let logits = g.matmul_t(codes, keys)?;
    let weights = g.softmax_rows(logits, mask)?;
    let output = g.matmul(weights, states)?;
    Ok(PolyOutput { output, weights })
}

/// History summarizing: `k` codes over all `L⁺` history tokens, optionally sparse.
pub fn uhs<T: Real>(g: &mut Graph<'_, T>, states: Var, book: &Codebook, mask: Option<&SparseMask>) -> Result<PolyOutput> {
    poly_attend(g, states, book, mask.map(|m| &m.allowed))
}

/// Interest extraction: `m` codes over the `k` summarized rows.
pub fn uie<T: Real>(g: &mut Graph<'_, T>, summarized: Var, book: &Codebook) -> Result<PolyOutput> {
    poly_attend(g, summarized, book, None)
}

/// Candidate summarizing: `n` codes over a candidate's token states.
pub fn ccs<T: Real>(g: &mut Graph<'_, T>, candidate_states: Var, book: &Codebook) -> Result<PolyOutput> {
    poly_attend(g, candidate_states, book, None)
}

/// Mean over rows of the Shannon entropy (nats), with `0·ln 0 = 0`.
pub fn attention_entropy(weights: &Tensor) -> Result<f64> {
    let (rows, cols) = weights.dims2()?;
    let mut total = 0.0;
    for r in 0..rows {
        let row = &weights.data()[r * cols..(r + 1) * cols];
        let sum: f64 = row.iter().map(|&w| w as f64).sum();
        if (sum - 1.0).abs() > 1e-4 || row.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidDistribution { row: r, sum });
        }
        total -= row
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w as f64 * (w as f64).ln())
            .sum::<f64>();
    }
    Ok(total / rows as f64)
}
