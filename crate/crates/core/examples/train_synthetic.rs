// Trains a small model on planted-preference data, compares held-out metrics
// with the untrained model and round-trips the best checkpoint.

use spar::dataio::{generate_synthetic, load_checkpoint, save_checkpoint, Catalog, SynthConfig, UserHistory};
use spar::encoder::EncoderConfig;
use spar::model::{ModelConfig, SparModel};
use spar::profiler::{summarize, PromptSpec, SummaryBackend};
use spar::textprep::Schema;
use spar::trainer::{evaluate, train, Corpus, TrainConfig};

fn small_model() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder = EncoderConfig {
        layers: 2,
        heads: 2,
        model_dim: 32,
        ffn_dim: 64,
        max_session_tokens: 256,
        vocab_size: 0,
        dropout: 0.1,
    };
    c.summary_tokens = 24;
    c.history_cap = 12;
    c.session_size = 4;
    c.uhs_codes = 12;
    c.interest_codes = 4;
    c.candidate_codes = 2;
    c.code_dim = 16;
    c.repr_dim = 32;
    c.window = 16;
    c
}

pub fn run_example() -> spar::Result<()> {
    let data = generate_synthetic(&SynthConfig::new(40, 100, 4, 12, 8, 3))?;
    let mut catalog = Catalog::new(Schema::News);
    for item in &data.catalog {
        catalog.insert(item.clone())?;
    }
    let mut corpus = Corpus::new(catalog);
    let spec = PromptSpec::new(Schema::News);
    for r in &data.train {
        let history = UserHistory::from_log(&r.impression.user_id, &r.history, usize::MAX);
        let items = history
            .engaged
            .iter()
            .map(|id| corpus.catalog.get(id).cloned())
            .collect::<spar::Result<Vec<_>>>()?;
        let text = summarize(&items, &spec, &SummaryBackend::Stub)?;
        corpus.summaries.insert(r.impression.user_id.clone(), text);
    }

    let model = SparModel::new(small_model(), corpus.vocabulary(2000), 1)?;
    let before = evaluate(&model, &corpus, &data.test, 1, 0)?.report;
    let config = TrainConfig {
        epochs: 5,
        batch_size: 16,
        base_lr: 3e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    let outcome = train(&config, model, &corpus, &data.train, &data.dev, Some(&mut log))?;
    print!("step auc mrr ndcg5 ndcg10\n{}", String::from_utf8_lossy(&log));
    println!("loss: first step {:.4}, last step {:.4}", outcome.losses[0], outcome.losses[outcome.steps - 1]);

    let after = evaluate(&outcome.model, &corpus, &data.test, 1, 0)?.report;
    println!("test before training: {}", before.log_line());
    println!("test after training:  {}", after.log_line());

    let dir = tempfile::tempdir().map_err(|e| spar::Error::Config(e.to_string()))?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&outcome.model, config.seed, &path)?;
    let restored = load_checkpoint(&path, Some(outcome.model.config()))?;
    let again = evaluate(&restored.model, &corpus, &data.test, 1, 0)?.report;
    assert_eq!(again.auc, after.auc);
    println!("checkpoint restores identical scores");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
