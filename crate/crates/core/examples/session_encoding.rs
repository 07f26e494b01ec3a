// Encodes a user history as independent sessions and compares the cost of
// session-split encoding against one long sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spar::diagnostics::benchmark_encoder;
use spar::encoder::{Encoder, EncoderConfig, SessionBatch};
use spar::numerics::{Graph, ParamStore};
use spar::textprep::{build_history_sequence, TokenSequence};

pub fn run_example() -> spar::Result<()> {
    let config = EncoderConfig {
        layers: 2,
        heads: 2,
        model_dim: 32,
        ffn_dim: 64,
        max_session_tokens: 512,
        vocab_size: 100,
        dropout: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let encoder = Encoder::new(config.clone(), &mut store, 0.02, &mut rng)?;

    let mut item = || -> Vec<u32> { (0..rng.gen_range(3..8)).map(|_| rng.gen_range(4..100)).collect() };
    let items: Vec<Vec<u32>> = (0..6).map(|_| item()).collect();
    let sessions: Vec<TokenSequence> = items
        .chunks(3)
        .map(|chunk| {
            let mut s = TokenSequence::empty();
            for it in chunk {
                s.push_item(it);
            }
            s
        })
        .collect();
    let summary = TokenSequence::single(&[10, 11, 12]);
    let batch = SessionBatch::from_sequences(&sessions)?;

    let mut g = Graph::inference(&store);
    let encoded = encoder.encode_user_history(&mut g, &batch, Some(&summary), None)?;
    println!("{} sessions, padded width {}", batch.num_sessions(), batch.width());
    println!("history states {:?}, SOS rows {:?}", g.dims(encoded.states), encoded.sos_positions);
    let joint = build_history_sequence(&items, Some(&[10, 11, 12]))?;
    println!("the same history as one sequence would hold {} tokens", joint.len());

    let report = benchmark_encoder(config, 512, 4, 3, 1)?;
    print!("{}", report.table());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
