// Scores one user against candidates with the attention-weighted matching
// head and computes the contrastive loss of the positive.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spar::numerics::{ParamStore, Tensor};
use spar::predictor::{match_scores, nce_loss, relevance_score, ScoreHead};

pub fn run_example() -> spar::Result<()> {
    let (m, n, r) = (4, 2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let head = ScoreHead::new(&mut store, r, 0.5, &mut rng);
    let weight = &store.get(head.weight).tensor;

    let gamma = Tensor::random_normal(vec![m, r], 1.0, &mut rng);
    let candidates: Vec<Tensor> = (0..5).map(|_| Tensor::random_normal(vec![n, r], 1.0, &mut rng)).collect();
    println!("pairwise matches of candidate 0: {:?}", match_scores(&gamma, &candidates[0])?.data());

    let scores = candidates
        .iter()
        .map(|lambda| relevance_score(&gamma, lambda, weight).map(f64::from))
        .collect::<spar::Result<Vec<f64>>>()?;
    println!("scores: {scores:?}");
    println!("loss with candidate 0 as the positive: {:.4}", nce_loss(scores[0], &scores[1..])?);

    // With one code on each side the head reduces to a plain inner product.
    let g1 = Tensor::random_normal(vec![1, r], 1.0, &mut rng);
    let l1 = Tensor::random_normal(vec![1, r], 1.0, &mut rng);
    let dot: f32 = g1.data().iter().zip(l1.data()).map(|(a, b)| a * b).sum();
    println!("m = n = 1: score {} vs dot {dot}", relevance_score(&g1, &l1, weight)?);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
