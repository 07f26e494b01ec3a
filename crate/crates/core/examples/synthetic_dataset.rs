// Generates a planted-preference dataset, writes it in the behaviors/catalog
// TSV layout, reads it back and draws training examples from it.

use spar::dataio::{
    bayes_auc, generate_synthetic, make_sessions, parse_behaviors, parse_catalog, sample_negatives, SynthConfig, UserHistory,
};
use spar::textprep::Schema;

pub fn run_example() -> spar::Result<()> {
    let config = SynthConfig::new(20, 60, 4, 10, 6, 7);
    let data = generate_synthetic(&config)?;
    let dir = tempfile::tempdir().map_err(|e| spar::Error::Config(e.to_string()))?;
    data.write(dir.path())?;

    let catalog = parse_catalog(dir.path().join("catalog.tsv"), Schema::News)?;
    let train = parse_behaviors(dir.path().join("train").join("behaviors.tsv"))?;
    assert_eq!(train, data.train);
    println!("{} items, {} training impressions", catalog.len(), train.len());
    if let Some((user, categories)) = data.preferred.iter().next() {
        println!("user {user} prefers {categories:?}");
    }
    println!("best achievable auc of the planted scorer: {:.3}", bayes_auc(config.preferred_candidate_rate, config.label_noise));

    let first = &train[0];
    let history = UserHistory::from_log(&first.impression.user_id, &first.history, 8);
    println!("most recent engagements: {:?}", &history.engaged[..3]);
    println!("sessions of 3: {:?}", make_sessions(history.engaged.len(), 3, true)?);
    for example in sample_negatives(&first.impression, 2, 42) {
        println!("positive {} against {:?}", example.positive, example.negatives);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
