#![allow(dead_code)]

use spar::dataio::{generate_synthetic, Catalog, SynthConfig, SyntheticData};
use spar::encoder::EncoderConfig;
use spar::model::ModelConfig;
use spar::textprep::Schema;
use spar::trainer::Corpus;

/// A model small enough for a few quick training steps.
pub fn small_model() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder = EncoderConfig {
        layers: 1,
        heads: 2,
        model_dim: 16,
        ffn_dim: 32,
        max_session_tokens: 256,
        vocab_size: 0,
        dropout: 0.1,
    };
    c.summary_tokens = 16;
    c.history_cap = 8;
    c.session_size = 4;
    c.uhs_codes = 8;
    c.interest_codes = 4;
    c.candidate_codes = 2;
    c.code_dim = 8;
    c.repr_dim = 16;
    c.window = 12;
    c
}

pub fn synthetic(config: &SynthConfig) -> (SyntheticData, Corpus) {
    let data = generate_synthetic(config).expect("synthetic data");
    let mut catalog = Catalog::new(Schema::News);
    for item in &data.catalog {
        catalog.insert(item.clone()).expect("unique ids");
    }
    (data, Corpus::new(catalog))
}
