// Precomputes standalone user and content embeddings, persists them, and
// ranks candidates from the stores alone.

use spar::dataio::{generate_synthetic, Catalog, SynthConfig};
use spar::encoder::EncoderConfig;
use spar::model::{ModelConfig, SparModel};
use spar::textprep::Schema;
use spar::trainer::{precompute_items, precompute_users, score_from_stores, user_input, Corpus, EmbeddingStore, TokenCache};

fn small_model() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder = EncoderConfig {
        layers: 1,
        heads: 2,
        model_dim: 32,
        ffn_dim: 64,
        max_session_tokens: 256,
        vocab_size: 0,
        dropout: 0.0,
    };
    c.history_cap = 10;
    c.session_size = 5;
    c.uhs_codes = 10;
    c.interest_codes = 4;
    c.candidate_codes = 2;
    c.code_dim = 16;
    c.repr_dim = 24;
    c.window = 16;
    c
}

pub fn run_example() -> spar::Result<()> {
    let data = generate_synthetic(&SynthConfig::new(12, 40, 3, 10, 5, 9))?;
    let mut catalog = Catalog::new(Schema::News);
    for item in &data.catalog {
        catalog.insert(item.clone())?;
    }
    let corpus = Corpus::new(catalog);
    let model = SparModel::new(small_model(), corpus.vocabulary(1000), 4)?;
    let mask_seed = 4;

    let users = precompute_users(&model, &corpus, &data.test, mask_seed, 0)?;
    let items = precompute_items(&model, &corpus, corpus.catalog.items.keys().map(String::as_str), 0)?;
    println!("{} users x {}x{} and {} items x {}x{}", users.len(), users.rows, users.cols, items.len(), items.rows, items.cols);

    let dir = tempfile::tempdir().map_err(|e| spar::Error::Config(e.to_string()))?;
    users.save(dir.path().join("users.emb"))?;
    items.save(dir.path().join("items.emb"))?;
    let users = EmbeddingStore::load(dir.path().join("users.emb"), "user")?;
    let items = EmbeddingStore::load(dir.path().join("items.emb"), "content")?;

    let record = &data.test[0];
    let ids: Vec<&str> = record.impression.candidates.iter().map(|(c, _)| c.as_str()).collect();
    let stored = score_from_stores(&users, &items, model.score_weight(), &record.impression.user_id, &ids)?;

    let cache = TokenCache::new(&model, &corpus);
    let input = user_input(&model, &corpus, &cache, record)?;
    let candidates = ids.iter().map(|id| cache.candidate(id)).collect::<spar::Result<Vec<_>>>()?;
    let live = model.score_live(&input, &candidates, mask_seed)?;
    for ((id, s), l) in ids.iter().zip(&stored).zip(&live) {
        println!("{id}: stored {s:+.6} live {l:+.6}");
    }
    let gap = stored.iter().zip(&live).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    println!("largest gap {gap:.2e}");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
