//! Relevance scoring between a user's interest vectors `Γ` (`m×r`) and a
//! candidate's vectors `Λ` (`n×r`), and the contrastive training loss.
//!
//! Both flattens are row-major over `(user code a, candidate code b)`, so
//! entry `a·n + b` always pairs `Γ_a` with `Λ_b`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::{gelu_scalar, matmul_slices, matmul_t_slices, softmax_rows_slice};
use crate::numerics::{Graph, LrGroup, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct ScoreHead {
    /// `W^s`, `r×r`.
    pub weight: ParamId,
    pub dim: usize,
}

impl ScoreHead {
    pub fn new(store: &mut ParamStore, dim: usize, init_std: f32, rng: &mut impl Rng) -> Self {
        let weight = store.add(
            "predictor.score_head",
            Tensor::random_normal(vec![dim, dim], init_std, rng),
            LrGroup::NewLayer,
        );
        Self { weight, dim }
    }
}

fn check_widths(gamma: (usize, usize), lambda: (usize, usize)) -> Result<()> {
    if gamma.1 != lambda.1 {
        return Err(Error::Dimension {
            op: "match_scores",
            left: vec![gamma.0, gamma.1],
            right: vec![lambda.0, lambda.1],
        });
    }
    Ok(())
}

/// `K = flatten(Γ·Λᵀ)` as a `1×mn` tensor.
pub fn match_scores(gamma: &Tensor, lambda: &Tensor) -> Result<Tensor> {
    let ((m, r), (n, r2)) = (gamma.dims2()?, lambda.dims2()?);
    check_widths((m, r), (n, r2))?;
    Tensor::matrix(1, m * n, matmul_t_slices(gamma.data(), m, r, lambda.data(), n))
}

/// Scores one candidate from plain tensors. Bit-identical to [`relevance_score_graph`].
pub fn relevance_score(gamma: &Tensor, lambda: &Tensor, score_weight: &Tensor) -> Result<f32> {
    let ((m, r), (n, r2)) = (gamma.dims2()?, lambda.dims2()?);
    check_widths((m, r), (n, r2))?;
    if score_weight.shape() != [r, r] {
        return Err(Error::Dimension {
            op: "relevance_score weight",
            left: vec![r, r],
            right: score_weight.shape().to_vec(),
        });
    }
    let k = matmul_t_slices(gamma.data(), m, r, lambda.data(), n);
    let mut lw = matmul_slices(lambda.data(), n, r, score_weight.data(), r);
    lw.iter_mut().for_each(|x| *x = gelu_scalar(*x));
    let logits = matmul_t_slices(gamma.data(), m, r, &lw, n);
    let wp = softmax_rows_slice(&logits, 1, m * n, None)?;
    Ok(wp.iter().zip(&k).fold(0.0f32, |acc, (&w, &s)| acc + w * s))
}

pub fn match_scores_graph<T: Real>(g: &mut Graph<'_, T>, gamma: Var, lambda: Var) -> Result<Var> {
    check_widths(g.dims(gamma), g.dims(lambda))?;
    let (m, n) = (g.dims(gamma).0, g.dims(lambda).0);
    let k = g.matmul_t(gamma, lambda)?;
    g.reshape(k, 1, m * n)
}

/// Differentiable score `s = softmax(flatten(Γ·gelu(Λ·W^s)ᵀ)) · K`, a `1×1` node.
pub fn relevance_score_graph<T: Real>(g: &mut Graph<'_, T>, gamma: Var, lambda: Var, head: &ScoreHead) -> Result<Var> {
    let k = match_scores_graph(g, gamma, lambda)?;
    let (m, n) = (g.dims(gamma).0, g.dims(lambda).0);
    let ws = g.param(head.weight);
    let lw = g.matmul(lambda, ws)?;
    let lw = g.gelu(lw);
    let logits = g.matmul_t(gamma, lw)?;
    let logits = g.reshape(logits, 1, m * n)?;
    let wp = g.softmax_rows(logits, None)?;
    g.dot(wp, k)
}

/// `-log(e^{s⁺} / (e^{s⁺} + Σ e^{s⁻}))`, evaluated with log-sum-exp.
pub fn nce_loss(pos_score: f64, neg_scores: &[f64]) -> Result<f64> {
    if neg_scores.is_empty() {
        return Err(Error::Config("nce_loss needs at least one negative".into()));
    }
    let max = neg_scores.iter().copied().fold(pos_score, f64::max);
    let sum: f64 = std::iter::once(pos_score)
        .chain(neg_scores.iter().copied())
        .map(|s| (s - max).exp())
        .sum();
    Ok(max + sum.ln() - pos_score)
}

/// Graph form of [`nce_loss`]: `scores` holds the positive followed by its negatives.
pub fn nce_loss_graph<T: Real>(g: &mut Graph<'_, T>, scores: &[Var]) -> Result<Var> {
    if scores.len() < 2 {
        return Err(Error::Config("nce_loss needs at least one negative".into()));
    }
    let column = g.concat_rows(scores)?;
    let row = g.reshape(column, 1, scores.len())?;
    g.softmax_cross_entropy(row, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamValues;
    use crate::numerics::grad_check;

    fn t(rows: usize, cols: usize, data: &[f32]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn match_score_examples() {
        assert_eq!(match_scores(&t(1, 2, &[1.0, 0.0]), &t(1, 2, &[1.0, 0.0])).unwrap().data(), &[1.0]);
        assert_eq!(
            match_scores(&t(2, 2, &[1.0, 0.0, 0.0, 1.0]), &t(1, 2, &[2.0, 3.0])).unwrap().data(),
            &[2.0, 3.0]
        );
        let k = match_scores(&t(1, 3, &[1.0, 0.0, 0.0]), &t(2, 3, &[0.0, 4.0, 1.0, 0.0, -2.0, 5.0])).unwrap();
        assert_eq!(k.data(), &[0.0, 0.0]);
        assert!(matches!(
            match_scores(&t(1, 2, &[1.0, 0.0]), &t(1, 3, &[1.0, 0.0, 0.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn singleton_score_is_inner_product() {
        let gamma = t(1, 3, &[0.3, -1.2, 2.5]);
        let lambda = t(1, 3, &[1.1, 0.7, -0.4]);
        let ws = t(3, 3, &[0.2, -0.1, 0.5, 0.9, 0.3, -0.7, 0.05, 0.4, 0.6]);
        let s = relevance_score(&gamma, &lambda, &ws).unwrap();
        let inner = 0.3f32 * 1.1 + -1.2 * 0.7 + 2.5 * -0.4;
        assert_eq!(s, inner);
    }

    #[test]
    fn two_code_scalar_oracle() {
        // m = 2, n = 1, r = 2
        let (g0, g1, l) = ([0.5f64, -1.0], [2.0, 0.25], [1.5, 0.5]);
        let ws = [[0.3f64, -0.2], [0.1, 0.4]];
        let gelu = |x: f64| 0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()));
        let lw = [gelu(l[0] * ws[0][0] + l[1] * ws[1][0]), gelu(l[0] * ws[0][1] + l[1] * ws[1][1])];
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let (z0, z1) = (dot(g0, lw), dot(g1, lw));
        let (e0, e1) = (z0.exp(), z1.exp());
        let want = (e0 * dot(g0, l) + e1 * dot(g1, l)) / (e0 + e1);

        let s = relevance_score(&t(2, 2, &[0.5, -1.0, 2.0, 0.25]), &t(1, 2, &[1.5, 0.5]), &t(2, 2, &[0.3, -0.2, 0.1, 0.4])).unwrap();
        assert!((s as f64 - want).abs() < 1e-6, "{s} vs {want}");
    }

    #[test]
    fn consistent_pair_permutation_leaves_score_unchanged() {
        let gamma = t(2, 2, &[0.4, -0.3, 1.2, 0.8]);
        let lambda = t(2, 2, &[0.5, 0.1, -0.7, 0.9]);
        let ws = t(2, 2, &[0.6, 0.2, -0.3, 0.5]);
        let swapped_gamma = t(2, 2, &[1.2, 0.8, 0.4, -0.3]);
        let swapped_lambda = t(2, 2, &[-0.7, 0.9, 0.5, 0.1]);
        let a = relevance_score(&gamma, &lambda, &ws).unwrap();
        let b = relevance_score(&swapped_gamma, &swapped_lambda, &ws).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn graph_and_tensor_scores_are_bit_identical() {
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let head = ScoreHead::new(&mut store, 4, 0.5, &mut rng);
        let gamma = Tensor::random_normal(vec![3, 4], 1.0, &mut rng);
        let lambda = Tensor::random_normal(vec![2, 4], 1.0, &mut rng);
        let plain = relevance_score(&gamma, &lambda, &store.get(head.weight).tensor).unwrap();
        let mut g = Graph::inference(&store);
        let gv = g.input_tensor(&gamma).unwrap();
        let lv = g.input_tensor(&lambda).unwrap();
        let s = relevance_score_graph(&mut g, gv, lv, &head).unwrap();
        assert_eq!(g.scalar(s), plain);
    }

    #[test]
    fn nce_examples() {
        assert!((nce_loss(0.3, &[0.3; 4]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(nce_loss(60.0, &[0.0, -1.0]).unwrap() < 1e-20);
        let e = std::f64::consts::E;
        assert!((nce_loss(1.0, &[0.0, 0.0]).unwrap() + (e / (e + 2.0)).ln()).abs() < 1e-12);
        assert!(nce_loss(1.0, &[]).is_err());
        assert!(nce_loss(1e4, &[-1e4]).unwrap().is_finite());
    }

    #[test]
    fn nce_graph_matches_scalar() {
        let values = ParamValues::<f64>::from_store(&ParamStore::new());
        let mut g = Graph::inference(&values);
        let scores: Vec<Var> = [1.0, 0.0, 0.0].iter().map(|&s| g.input(1, 1, vec![s]).unwrap()).collect();
        let loss = nce_loss_graph(&mut g, &scores).unwrap();
        assert!((g.scalar(loss) - nce_loss(1.0, &[0.0, 0.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn score_head_gradients_check() {
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
        let head = ScoreHead::new(&mut store, 3, 0.7, &mut rng);
        let gamma = store.add("gamma", Tensor::random_normal(vec![2, 3], 1.0, &mut rng), LrGroup::NewLayer);
        let lambda = store.add("lambda", Tensor::random_normal(vec![2, 3], 1.0, &mut rng), LrGroup::NewLayer);
        let mut values = ParamValues::<f64>::from_store(&store);
        let report = grad_check(
            &mut values,
            |g| {
                let (gv, lv) = (g.param(gamma), g.param(lambda));
                relevance_score_graph(g, gv, lv, &head)
            },
            1e-5,
            16,
            3,
        )
        .unwrap();
        assert!(report.max_error() < 1e-3, "{:?}", report.per_param);
    }
}
