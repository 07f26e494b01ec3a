mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spar::dataio::SynthConfig;
use spar::diagnostics::{grad_check_config, toy_loss, toy_setup};
use spar::metrics::evaluate_rankings;
use spar::model::SparModel;
use spar::numerics::Graph;
use spar::trainer::{evaluate, train, Adam, TrainConfig};

fn quick_train_config(threads: usize) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 8,
        base_lr: 2e-3,
        seed: 5,
        threads,
        ..TrainConfig::default()
    }
}

#[test]
fn training_repeats_exactly_for_a_fixed_seed() {
    let (data, corpus) = common::synthetic(&SynthConfig::new(16, 40, 4, 8, 6, 2));
    let run = |threads| {
        let model = SparModel::new(common::small_model(), corpus.vocabulary(500), 5).unwrap();
        train(&quick_train_config(threads), model, &corpus, &data.train, &data.dev, None).unwrap()
    };
    let a = run(1);
    let b = run(1);
    let c = run(2);
    assert!(a.steps > 3);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.losses, c.losses);
    assert_eq!(a.history, b.history);
}

#[test]
fn one_adam_step_lowers_a_fixed_batch_loss() {
    let (mut model, input, candidates) = toy_setup(grad_check_config(), 11, 4).unwrap();
    let loss_and_grads = |model: &SparModel| {
        let mut g = Graph::<f32>::new(&model.store);
        let loss = toy_loss(&model.net, &mut g, &input, &candidates, 11).unwrap();
        (g.scalar(loss), g.backward(loss).unwrap())
    };
    let (before, grads) = loss_and_grads(&model);
    let mut adam = Adam::new(&model.store, 5.0);
    adam.step(&mut model.store, &grads, 1e-4);
    let (after, _) = loss_and_grads(&model);
    assert!(after < before, "loss went from {before} to {after}");
}

#[test]
fn random_scores_give_chance_auc() {
    let data = spar::dataio::generate_synthetic(&SynthConfig::new(500, 500, 8, 30, 10, 3)).unwrap();
    assert!(data.test.len() >= 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scores: Vec<Vec<f64>> = data
        .test
        .iter()
        .map(|r| r.impression.candidates.iter().map(|_| rng.gen::<f64>()).collect())
        .collect();
    let labels: Vec<Vec<u8>> = data.test.iter().map(|r| r.impression.labels()).collect();
    let report = evaluate_rankings(scores.iter().zip(&labels).map(|(s, l)| (s.as_slice(), l.as_slice()))).unwrap();
    assert!((report.auc - 0.5).abs() <= 0.03, "auc {}", report.auc);
}

#[test]
fn oracle_scores_are_perfect_on_single_positive_impressions() {
    let data = spar::dataio::generate_synthetic(&SynthConfig::new(40, 80, 4, 8, 6, 4)).unwrap();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in &data.test {
        let mut seen = false;
        let l: Vec<u8> = r
            .impression
            .labels()
            .into_iter()
            .filter(|&x| x == 0 || !std::mem::replace(&mut seen, true))
            .collect();
        scores.push(l.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
        labels.push(l);
    }
    let report = evaluate_rankings(scores.iter().zip(&labels).map(|(s, l)| (s.as_slice(), l.as_slice()))).unwrap();
    assert_eq!((report.auc, report.mrr, report.ndcg5, report.ndcg10), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn parallel_evaluation_matches_serial() {
    let (data, corpus) = common::synthetic(&SynthConfig::new(20, 50, 4, 8, 6, 6));
    let model = SparModel::new(common::small_model(), corpus.vocabulary(500), 1).unwrap();
    let serial = evaluate(&model, &corpus, &data.test, 3, 1).unwrap();
    let parallel = evaluate(&model, &corpus, &data.test, 3, 4).unwrap();
    assert_eq!(serial.scores, parallel.scores);
    assert_eq!(serial.report, parallel.report);
}

#[test]
fn dropping_the_summary_removes_one_prepended_session() {
    let with = common::small_model();
    let mut without = with.clone();
    without.ablation.no_summary = true;
    let (data, mut corpus) = common::synthetic(&SynthConfig::new(6, 30, 3, 8, 4, 8));
    corpus.summaries.insert("U1".into(), "This user is interested in sports.".into());
    let vocab = corpus.vocabulary(500);
    let record = data.train.iter().find(|r| r.impression.user_id == "U1").unwrap();

    let inputs: Vec<_> = [with, without]
        .into_iter()
        .map(|config| {
            let model = SparModel::new(config, vocab.clone(), 2).unwrap();
            let cache = spar::trainer::TokenCache::new(&model, &corpus);
            spar::trainer::user_input(&model, &corpus, &cache, record).unwrap()
        })
        .collect();
    let summary_len = inputs[0].summary.as_ref().unwrap().len();
    assert!(inputs[1].summary.is_none());
    assert_eq!(inputs[0].sessions.num_sessions(), inputs[1].sessions.num_sessions());
    assert_eq!(inputs[0].total_tokens(), inputs[1].total_tokens() + summary_len);
    assert_eq!(inputs[0].sos_positions().len(), inputs[1].sos_positions().len() + 1);

    let mut config = common::small_model();
    config.ablation.no_summary = true;
    let model = SparModel::new(config, vocab, 2).unwrap();
    train(&quick_train_config(1), model, &corpus, &data.train, &[], None).unwrap();
}

#[test]
fn bundled_configs_build_valid_settings() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let mut settings = spar::settings::Settings::default();
        settings.load_file(entry.unwrap().path()).unwrap();
        let model = settings.model_config().unwrap();
        let train = settings.train_config().unwrap();
        assert_eq!((model.history_cap, model.repr_dim, train.batch_size), (60, 200, 128));
        seen += 1;
    }
    assert_eq!(seen, 2);
}
