//! Flat `key = value` settings shared by the config file and command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dataio::{read_text, SynthConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::profiler::PromptSpec;
use crate::textprep::{FieldCaps, Schema};
use crate::trainer::TrainConfig;

/// Every accepted key with its default and description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "seed for initialization, sampling, masks and synthetic data"),
    ("threads", "0", "worker threads (0 = all cores)"),
    ("out", "runs", "output directory for checkpoints, logs, stores and scores"),
    ("data_dir", "data", "dataset directory holding catalog.tsv and {train,dev,test}/behaviors.tsv"),
    ("schema", "news", "content schema: news or book"),
    ("checkpoint", "auto", "checkpoint path (auto = <out>/model.ckpt)"),
    ("summaries", "auto", "summary cache TSV (auto = <data_dir>/summaries.tsv when it exists)"),
    ("split", "auto", "split read by eval, precompute, score and entropy: train, dev or test (auto = dev for entropy, test otherwise)"),
    ("scores", "none", "eval: score an external `impression_id \\t candidate_id \\t score` file instead of a checkpoint"),
    ("vocab_max_tokens", "8192", "vocabulary size cap, excluding the four reserved tokens"),
    ("layers", "2", "encoder layers"),
    ("heads", "4", "attention heads"),
    ("model_dim", "64", "encoder width d"),
    ("ffn_dim", "128", "feed-forward width"),
    ("max_session_tokens", "1280", "longest session the encoder accepts"),
    ("dropout", "0.1", "dropout rate during training"),
    ("init_std", "0.02", "standard deviation of the normal weight initialization"),
    ("title_cap", "auto", "title token cap (auto = 32 news, 24 book)"),
    ("abstract_cap", "auto", "abstract token cap (auto = 72 news, 85 book)"),
    ("category_cap", "auto", "category token cap (auto = 4)"),
    ("summary_tokens", "64", "token cap of the prepended interest summary"),
    ("history_cap", "60", "most recent history items kept per user"),
    ("session_size", "10", "history items per session"),
    ("k", "auto", "UHS codes (auto = history_cap)"),
    ("m", "16", "user-interest codes"),
    ("n", "4", "candidate codes"),
    ("code_dim", "auto", "code width p (auto = model_dim / 2)"),
    ("repr_dim", "auto", "width of user and candidate vectors (auto = model_dim)"),
    ("window", "64", "UHS local attention window"),
    ("random_ratio", "0.1", "share of remaining tokens each UHS code sees at random"),
    ("no_uhs", "false", "ablation: SOS states instead of the UHS layer"),
    ("full_attention", "false", "ablation: UHS codes see every token"),
    ("no_sessions", "false", "ablation: one item per session"),
    ("no_summary", "false", "ablation: drop the interest summary"),
    ("epochs", "20", "training epochs"),
    ("batch_size", "32", "minimum examples per step (whole impressions are packed)"),
    ("base_lr", "0.001", "peak learning rate of the encoder"),
    ("new_layer_lr_multiplier", "5", "learning-rate multiplier of codebooks, projection and score head"),
    ("warmup_fraction", "0.1", "share of steps spent warming up"),
    ("eval_every_steps", "0", "Dev evaluation period (0 = once per epoch)"),
    ("negatives", "4", "sampled negatives per positive"),
    ("synth_users", "200", "synthetic users"),
    ("synth_items", "500", "synthetic items"),
    ("synth_categories", "8", "synthetic categories"),
    ("synth_history", "30", "synthetic history length"),
    ("synth_candidates", "10", "synthetic candidates per impression"),
    ("profiler_backend", "stub", "summary backend: stub or external (endpoint and token from the environment)"),
    ("prompt_max_items", "30", "history items listed in the profiler prompt"),
    ("prompt_max_words", "100", "abstract words kept per prompt item"),
    ("prompt_sentences", "3", "sentences requested from the profiler"),
    ("profiler_in_flight", "4", "concurrent external profiler requests"),
    ("bench_tokens", "4096", "benchmark token count"),
    ("bench_sessions", "8", "benchmark session count"),
    ("bench_repetitions", "10", "benchmark repetitions"),
    ("gradcheck_seed", "3", "seed of the gradient-check toy model"),
    ("entropy_samples", "100", "users probed by the entropy command"),
];

/// Help text listing every key, for the CLI.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (file lines `key = value`; flags override the file):\n");
    for (k, d, h) in KEYS {
        s.push_str(&format!("  {k:<24} {h} [default: {d}]\n"));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key `{key}` (see --help)"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", origin.display(), i + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = read_text(path).map_err(|e| Error::Config(e.to_string()))?;
        self.apply_text(&text, path)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undocumented key `{key}`"))
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("config key `{key}` has invalid value `{raw}`")))
    }

    fn auto_or<V: std::str::FromStr>(&self, key: &str, auto: V) -> Result<V> {
        if self.get(key) == "auto" {
            Ok(auto)
        } else {
            self.parse(key)
        }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.get(key))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.get("checkpoint") {
            "auto" => self.out_dir().join("model.ckpt"),
            p => PathBuf::from(p),
        }
    }

    /// The summary cache path, and whether it was set explicitly.
    pub fn summaries_path(&self) -> (PathBuf, bool) {
        match self.get("summaries") {
            "auto" => (self.path("data_dir").join("summaries.tsv"), false),
            p => (PathBuf::from(p), true),
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::parse(self.get("schema"))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let schema = self.schema()?;
        let caps = FieldCaps::for_schema(schema);
        let model_dim: usize = self.parse("model_dim")?;
        let history_cap: usize = self.parse("history_cap")?;
        let config = ModelConfig {
            encoder: EncoderConfig {
                layers: self.parse("layers")?,
                heads: self.parse("heads")?,
                model_dim,
                ffn_dim: self.parse("ffn_dim")?,
                max_session_tokens: self.parse("max_session_tokens")?,
                vocab_size: self.parse::<usize>("vocab_max_tokens")? + 4,
                dropout: self.parse("dropout")?,
            },
            schema,
            caps: FieldCaps {
                title: self.auto_or("title_cap", caps.title)?,
                abstract_text: self.auto_or("abstract_cap", caps.abstract_text)?,
                category: self.auto_or("category_cap", caps.category)?,
            },
            summary_tokens: self.parse("summary_tokens")?,
            history_cap,
            session_size: self.parse("session_size")?,
            uhs_codes: self.auto_or("k", history_cap)?,
            interest_codes: self.parse("m")?,
            candidate_codes: self.parse("n")?,
            code_dim: self.auto_or("code_dim", model_dim / 2)?,
            repr_dim: self.auto_or("repr_dim", model_dim)?,
            window: self.parse("window")?,
            random_ratio: self.parse("random_ratio")?,
            init_std: self.parse("init_std")?,
            ablation: Ablation {
                no_uhs: self.parse("no_uhs")?,
                full_attention: self.parse("full_attention")?,
                no_sessions: self.parse("no_sessions")?,
                no_summary: self.parse("no_summary")?,
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            base_lr: self.parse("base_lr")?,
            new_layer_lr_multiplier: self.parse("new_layer_lr_multiplier")?,
            warmup_fraction: self.parse("warmup_fraction")?,
            eval_every_steps: self.parse("eval_every_steps")?,
            negatives: self.parse("negatives")?,
            seed: self.parse("seed")?,
            threads: self.parse("threads")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig::new(
            self.parse("synth_users")?,
            self.parse("synth_items")?,
            self.parse("synth_categories")?,
            self.parse("synth_history")?,
            self.parse("synth_candidates")?,
            self.parse("seed")?,
        ))
    }

    pub fn prompt_spec(&self) -> Result<PromptSpec> {
        let spec = PromptSpec {
            max_items: self.parse("prompt_max_items")?,
            max_words_per_abstract: self.parse("prompt_max_words")?,
            sentence_budget: self.parse("prompt_sentences")?,
            schema: self.schema()?,
        };
        if spec.max_items == 0 || spec.max_words_per_abstract == 0 || spec.sentence_budget == 0 {
            return Err(Error::Config("prompt limits must be positive".into()));
        }
        Ok(spec)
    }
}
