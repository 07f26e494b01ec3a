//! The `spar` command line: one subcommand per pipeline stage, all sharing
//! the flat settings of [`crate::settings`].

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::dataio::{
    generate_synthetic, load_checkpoint, parse_behaviors, parse_catalog, read_text, save_checkpoint, write_text, bayes_auc,
    Behavior, Checkpoint, UserHistory,
};
use crate::diagnostics::{benchmark_encoder, grad_check_config, model_grad_check, uhs_entropy};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_rankings, EvalReport};
use crate::model::SparModel;
use crate::profiler::{summarize_all, HttpBackend, SummaryBackend, SummaryCache};
use crate::settings::{keys_help, Settings};
use crate::textprep::Schema;
use crate::trainer::{
    evaluate, precompute_items, precompute_users, score_from_stores, train, user_input, Corpus, EmbeddingStore, TokenCache,
};

const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "spar", version, about = "Sparse poly-attention content recommendation")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config key of the same name.
#[derive(Args, Debug)]
struct Flags {
    /// Config file of `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<String>,
    #[arg(long, global = true)]
    split: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    no_uhs: bool,
    #[arg(long, global = true)]
    full_attention: bool,
    #[arg(long, global = true)]
    no_sessions: bool,
    #[arg(long, global = true)]
    no_summary: bool,
    /// User-interest codes
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Candidate codes
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    random_ratio: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-preference dataset to `data_dir`
    Synth,
    /// Build or refresh the per-user interest summary cache
    Summarize,
    /// Train a model and write the best checkpoint plus `progress.log` under `out`
    Train,
    /// Report AUC, MRR and nDCG of a checkpoint (or of a `--scores` file) on a split
    Eval {
        #[arg(long, value_name = "FILE")]
        scores: Option<String>,
    },
    /// Store standalone user and content embeddings under `out`
    Precompute,
    /// Score a split's impressions from the stored embeddings into `out/scores.tsv`
    Score,
    /// Finite-difference check of every parameter of a tiny model
    Gradcheck,
    /// Time session-split against single-sequence encoding
    Benchmark,
    /// Mean UHS attention entropy per code, sparse mask against full attention
    Entropy,
}

impl Flags {
    fn apply(&self, s: &mut Settings) -> Result<()> {
        if let Some(path) = &self.config {
            s.load_file(path)?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            s.set(k.trim(), v.trim())?;
        }
        let values: [(&str, Option<String>); 11] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("out", self.out.clone()),
            ("data_dir", self.data_dir.clone()),
            ("checkpoint", self.checkpoint.clone()),
            ("split", self.split.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("n", self.n.map(|v| v.to_string())),
            ("window", self.window.map(|v| v.to_string())),
            ("random_ratio", self.random_ratio.map(|v| v.to_string())),
        ];
        let toggles = [
            ("no_uhs", self.no_uhs),
            ("full_attention", self.full_attention),
            ("no_sessions", self.no_sessions),
            ("no_summary", self.no_summary),
        ];
        for (k, v) in values {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        for (k, on) in toggles {
            if on {
                s.set(k, "true")?;
            }
        }
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 1 usage, 2 data error, 3 numerical failure.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let command = Cli::command().after_help(keys_help());
    let cli = match command.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut settings = Settings::default();
    let result = cli.flags.apply(&mut settings).and_then(|()| dispatch(&cli.command, &mut settings));
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: &Command, s: &mut Settings) -> Result<String> {
    match command {
        Command::Synth => synth(s),
        Command::Summarize => summarize(s),
        Command::Train => train_cmd(s),
        Command::Eval { scores } => {
            if let Some(path) = scores {
                s.set("scores", path.clone())?;
            }
            eval(s)
        }
        Command::Precompute => precompute(s),
        Command::Score => score(s),
        Command::Gradcheck => gradcheck(s),
        Command::Benchmark => benchmark(s),
        Command::Entropy => entropy(s),
    }
}

fn split_name(s: &Settings, auto: &str) -> Result<String> {
    let split = match s.get("split") {
        "auto" => auto,
        other => other,
    };
    match split {
        "train" | "dev" | "test" => Ok(split.to_string()),
        other => Err(Error::Config(format!("unknown split `{other}` (train|dev|test)"))),
    }
}

fn behaviors_path(s: &Settings, split: &str) -> PathBuf {
    s.path("data_dir").join(split).join("behaviors.tsv")
}

fn load_split(s: &Settings, split: &str) -> Result<Vec<Behavior>> {
    parse_behaviors(behaviors_path(s, split))
}

fn load_corpus(s: &Settings, schema: Schema) -> Result<Corpus> {
    let mut corpus = Corpus::new(parse_catalog(s.path("data_dir").join("catalog.tsv"), schema)?);
    let (path, explicit) = s.summaries_path();
    if explicit || path.exists() {
        let cache = SummaryCache::load(&path)?;
        corpus.summaries = cache.iter().map(|(u, _, text)| (u.to_string(), text.to_string())).collect();
    }
    Ok(corpus)
}

fn load_model(s: &Settings) -> Result<Checkpoint> {
    load_checkpoint(s.checkpoint_path(), None)
}

fn report_text(label: &str, r: &EvalReport) -> String {
    let mut out = format!(
        "{label}: auc {:.4}  mrr {:.4}  ndcg@5 {:.4}  ndcg@10 {:.4}  ({} impressions",
        r.auc, r.mrr, r.ndcg5, r.ndcg10, r.n_impressions
    );
    if r.skipped_auc + r.skipped_ranking > 0 {
        write!(out, "; {} skipped for auc, {} for ranking", r.skipped_auc, r.skipped_ranking).unwrap();
    }
    out.push_str(")\n");
    out
}

fn synth(s: &Settings) -> Result<String> {
    let cfg = s.synth_config()?;
    let data = generate_synthetic(&cfg)?;
    let dir = s.path("data_dir");
    data.write(&dir)?;
    Ok(format!(
        "wrote {} items and {}/{}/{} train/dev/test impressions to {}\nbayes-optimal auc of the planted scorer: {:.4}\n",
        data.catalog.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        dir.display(),
        bayes_auc(cfg.preferred_candidate_rate, cfg.label_noise)
    ))
}

fn summarize(s: &Settings) -> Result<String> {
    let spec = s.prompt_spec()?;
    let catalog = parse_catalog(s.path("data_dir").join("catalog.tsv"), spec.schema)?;
    let (path, _) = s.summaries_path();
    let mut cache = if path.exists() { SummaryCache::load(&path)? } else { SummaryCache::default() };
    let backend = match s.get("profiler_backend") {
        "stub" => SummaryBackend::Stub,
        "external" => SummaryBackend::External(HttpBackend::from_env()?),
        other => return Err(Error::Config(format!("unknown profiler_backend `{other}` (stub|external)"))),
    };

    // The most recent record of each user defines the history to summarize.
    let mut latest: BTreeMap<String, UserHistory> = BTreeMap::new();
    for split in ["train", "dev", "test"] {
        if !behaviors_path(s, split).exists() {
            continue;
        }
        for r in load_split(s, split)? {
            let h = UserHistory::from_log(&r.impression.user_id, &r.history, usize::MAX);
            latest.insert(r.impression.user_id.clone(), h);
        }
    }
    let mut pending = Vec::new();
    let mut histories = Vec::new();
    for (user, h) in &latest {
        if cache.get(user, h.hash()).is_some() || h.engaged.is_empty() {
            continue;
        }
        let items = h
            .engaged
            .iter()
            .map(|id| catalog.get(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        pending.push((user.clone(), h.hash()));
        histories.push(items);
    }
    let summaries = summarize_all(&histories, &spec, &backend, s.parse("profiler_in_flight")?)?;
    for ((user, hash), text) in pending.iter().zip(summaries) {
        cache.insert(user.clone(), *hash, text);
    }
    cache.save(&path)?;
    Ok(format!(
        "{} users: {} summarized, {} reused from {}\n",
        latest.len(),
        pending.len(),
        cache.len() - pending.len(),
        path.display()
    ))
}

fn train_cmd(s: &Settings) -> Result<String> {
    let model_config = s.model_config()?;
    let train_config = s.train_config()?;
    let corpus = load_corpus(s, model_config.schema)?;
    let train_records = load_split(s, "train")?;
    let dev_records = if behaviors_path(s, "dev").exists() { load_split(s, "dev")? } else { Vec::new() };
    let vocab = corpus.vocabulary(s.parse("vocab_max_tokens")?);
    let model = SparModel::new(model_config, vocab, train_config.seed)?;

    let out = s.out_dir();
    let log_path = out.join("progress.log");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train(&train_config, model, &corpus, &train_records, &dev_records, Some(&mut log))?;
    let ckpt = s.checkpoint_path();
    save_checkpoint(&outcome.model, train_config.seed, &ckpt)?;

    let mut text = format!(
        "{} steps, final loss {:.4}, checkpoint {}\n",
        outcome.steps,
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    if outcome.skipped_impressions > 0 {
        writeln!(text, "{} training impressions had no negative and were skipped", outcome.skipped_impressions).unwrap();
    }
    if let Some(best) = &outcome.best {
        text.push_str(&report_text(&format!("best dev (step {})", best.step), best));
    }
    Ok(text)
}

/// Reads `impression_id \t candidate_id \t score` lines.
fn parse_scores(path: &Path) -> Result<HashMap<(String, String), f64>> {
    let mut scores = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let value = match cols.as_slice() {
            [imp, cand, v] => v.trim().parse::<f64>().ok().map(|v| ((imp.to_string(), cand.to_string()), v)),
            _ => None,
        };
        let (key, v) = value.ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: "expected impression_id, candidate_id and a numeric score".into(),
        })?;
        scores.insert(key, v);
    }
    Ok(scores)
}

fn eval(s: &Settings) -> Result<String> {
    let split = split_name(s, "test")?;
    let records = load_split(s, &split)?;
    let report = match s.get("scores") {
        "none" => {
            let ckpt = load_model(s)?;
            let corpus = load_corpus(s, ckpt.model.config().schema)?;
            evaluate(&ckpt.model, &corpus, &records, ckpt.seed, s.parse("threads")?)?.report
        }
        file => {
            let table = parse_scores(Path::new(file))?;
            let mut scores = Vec::with_capacity(records.len());
            for r in &records {
                let imp = &r.impression.impression_id;
                let row = r
                    .impression
                    .candidates
                    .iter()
                    .map(|(c, _)| {
                        table.get(&(imp.clone(), c.clone())).copied().ok_or_else(|| Error::UnknownId {
                            kind: "scored candidate",
                            id: format!("{imp}/{c}"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                scores.push(row);
            }
            let labels: Vec<Vec<u8>> = records.iter().map(|r| r.impression.labels()).collect();
            evaluate_rankings(scores.iter().zip(&labels).map(|(s, l)| (s.as_slice(), l.as_slice())))?
        }
    };
    Ok(report_text(&split, &report))
}

fn precompute(s: &Settings) -> Result<String> {
    let split = split_name(s, "test")?;
    let ckpt = load_model(s)?;
    let corpus = load_corpus(s, ckpt.model.config().schema)?;
    let records = load_split(s, &split)?;
    let threads = s.parse("threads")?;
    let users = precompute_users(&ckpt.model, &corpus, &records, ckpt.seed, threads)?;
    let items = precompute_items(&ckpt.model, &corpus, corpus.catalog.items.keys().map(String::as_str), threads)?;
    let out = s.out_dir();
    users.save(out.join("users.emb"))?;
    items.save(out.join("items.emb"))?;
    Ok(format!(
        "{} users ({} floats) and {} items ({} floats) stored in {}\n",
        users.len(),
        users.num_values(),
        items.len(),
        items.num_values(),
        out.display()
    ))
}

fn score(s: &Settings) -> Result<String> {
    let split = split_name(s, "test")?;
    let ckpt = load_model(s)?;
    let out = s.out_dir();
    let users = EmbeddingStore::load(out.join("users.emb"), "user")?;
    let items = EmbeddingStore::load(out.join("items.emb"), "content")?;
    let records = load_split(s, &split)?;
    let mut text = String::new();
    let mut n = 0usize;
    for r in &records {
        let ids: Vec<&str> = r.impression.candidates.iter().map(|(c, _)| c.as_str()).collect();
        let scores = score_from_stores(&users, &items, ckpt.model.score_weight(), &r.impression.user_id, &ids)?;
        for (id, v) in ids.iter().zip(scores) {
            writeln!(text, "{}\t{id}\t{v}", r.impression.impression_id).unwrap();
            n += 1;
        }
    }
    let path = out.join("scores.tsv");
    write_text(&path, &text)?;
    Ok(format!("{n} scores for {} impressions written to {}\n", records.len(), path.display()))
}

fn gradcheck(s: &Settings) -> Result<String> {
    let report = model_grad_check(grad_check_config(), s.parse("gradcheck_seed")?)?;
    let (name, worst) = report.worst().map(|(n, e)| (n.to_string(), e)).unwrap_or_default();
    let mut text = String::from("parameter\tmax_relative_error\n");
    for (p, e) in &report.per_param {
        writeln!(text, "{p}\t{e:.3e}").unwrap();
    }
    if worst >= GRAD_TOLERANCE {
        print!("{text}");
        return Err(Error::GradCheck { name, error: worst });
    }
    writeln!(
        text,
        "max relative error {worst:.3e} ({name}) over {} parameters, {} coordinates",
        report.per_param.len(),
        report.coords_checked
    )
    .unwrap();
    Ok(text)
}

fn benchmark(s: &Settings) -> Result<String> {
    let encoder = s.model_config()?.encoder;
    let report = benchmark_encoder(
        encoder,
        s.parse("bench_tokens")?,
        s.parse("bench_sessions")?,
        s.parse("bench_repetitions")?,
        s.parse("seed")?,
    )?;
    Ok(report.table())
}

fn entropy(s: &Settings) -> Result<String> {
    let split = split_name(s, "dev")?;
    let ckpt = load_model(s)?;
    let model = &ckpt.model;
    let corpus = load_corpus(s, model.config().schema)?;
    let records = load_split(s, &split)?;
    let samples: usize = s.parse("entropy_samples")?;
    let cache = TokenCache::new(model, &corpus);

    let mut seen = std::collections::BTreeSet::new();
    let k = model.config().uhs_codes;
    let (mut sparse_sum, mut full_sum) = (vec![0.0; k], vec![0.0; k]);
    let (mut users, mut lower) = (0usize, 0usize);
    for r in &records {
        if users == samples {
            break;
        }
        if !seen.insert(r.impression.user_id.as_str()) {
            continue;
        }
        let input = user_input(model, &corpus, &cache, r)?;
        let mask = model
            .net
            .uhs_mask(&input, ckpt.seed)?
            .ok_or_else(|| Error::Config("the entropy probe needs a checkpoint with the sparse UHS mask".into()))?;
        let (sparse_mean, sparse) = uhs_entropy(model, &input, Some(&mask))?;
        let (full_mean, full) = uhs_entropy(model, &input, None)?;
        for c in 0..k {
            sparse_sum[c] += sparse[c];
            full_sum[c] += full[c];
        }
        users += 1;
        lower += usize::from(sparse_mean < full_mean);
    }
    if users == 0 {
        return Err(Error::EmptyImpressions);
    }
    let u = users as f64;
    let mut text = String::from("code\tsparse\tfull\n");
    for c in 0..k {
        writeln!(text, "{c}\t{:.4}\t{:.4}", sparse_sum[c] / u, full_sum[c] / u).unwrap();
    }
    writeln!(
        text,
        "mean\t{:.4}\t{:.4}\n{lower} of {users} users have lower entropy under the sparse mask",
        sparse_sum.iter().sum::<f64>() / (u * k as f64),
        full_sum.iter().sum::<f64>() / (u * k as f64)
    )
    .unwrap();
    Ok(text)
}
