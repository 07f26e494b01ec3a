// The three codebook attention layers on random token states: history
// summarizing under a sparse mask, interest extraction and candidate
// summarizing, followed by the entropy of the summarizing weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spar::numerics::{Graph, ParamStore, Tensor};
use spar::polyattn::{attention_entropy, build_sparse_mask, ccs, uhs, uie, Codebook};

pub fn run_example() -> spar::Result<()> {
    let (d, p, tokens) = (16, 8, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let history_book = Codebook::new(&mut store, "uhs", 6, d, p, 0.5, &mut rng)?;
    let interest_book = Codebook::new(&mut store, "uie", 3, d, p, 0.5, &mut rng)?;
    let candidate_book = Codebook::new(&mut store, "ccs", 2, d, p, 0.5, &mut rng)?;

    let states = Tensor::random_normal(vec![tokens, d], 1.0, &mut rng);
    let mask = build_sparse_mask(tokens, &[0, 12, 24, 36], 6, 8, 0.1, 11)?;

    let mut g = Graph::inference(&store);
    let h = g.input_tensor(&states)?;
    let sparse = uhs(&mut g, h, &history_book, Some(&mask))?;
    let full = uhs(&mut g, h, &history_book, None)?;
    let interests = uie(&mut g, sparse.output, &interest_book)?;
    let candidate = g.input_tensor(&Tensor::random_normal(vec![20, d], 1.0, &mut rng))?;
    let summary = ccs(&mut g, candidate, &candidate_book)?;

    println!("history summary {:?}", g.dims(sparse.output));
    println!("user interests  {:?}", g.dims(interests.output));
    println!("candidate       {:?}", g.dims(summary.output));
    let h_sparse = attention_entropy(&g.tensor(sparse.weights))?;
    let h_full = attention_entropy(&g.tensor(full.weights))?;
    println!("mean entropy: sparse {h_sparse:.3} nats, full {h_full:.3} nats (ln {tokens} = {:.3})", (tokens as f64).ln());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
