//! User-interest summaries: prompt construction, a deterministic offline
//! profiler, an HTTP text-completion backend and a TSV cache.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use crate::dataio::{read_text, write_text};
use crate::error::{Error, Result};
use crate::textprep::{split_words, ContentItem, Schema};

pub const ENDPOINT_VAR: &str = "SPAR_PROFILER_ENDPOINT";
pub const TOKEN_VAR: &str = "SPAR_PROFILER_TOKEN";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptSpec {
    pub max_items: usize,
    pub max_words_per_abstract: usize,
    pub sentence_budget: usize,
    pub schema: Schema,
}

impl PromptSpec {
    pub fn new(schema: Schema) -> Self {
        Self {
            max_items: 30,
            max_words_per_abstract: 100,
            sentence_budget: 3,
            schema,
        }
    }
}

/// Whitespace-delimited truncation, keeping the original words.
fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Prompt listing the most recent `max_items` items (most recent first).
pub fn build_prompt(history: &[ContentItem], spec: &PromptSpec) -> Result<String> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let (noun, body) = match spec.schema {
        Schema::News => ("news articles", "Abstract"),
        Schema::Book => ("books", "Description"),
    };
    let mut p = String::new();
    writeln!(
        p,
        "<<SYS>>\nYou are a helpful assistant that profiles reader interests. \
         Answer with a short plain-text summary only.\n<</SYS>>\n"
    )
    .unwrap();
    writeln!(p, "[INST] A user engaged with the following {noun}, listed from the most recent to the oldest:\n").unwrap();
    for (i, item) in history.iter().take(spec.max_items).enumerate() {
        writeln!(p, "{}. Title: {}", i + 1, one_line(&item.title)).unwrap();
        writeln!(p, "   {body}: {}", first_words(&item.abstract_text, spec.max_words_per_abstract)).unwrap();
        writeln!(p, "   Category: {}", one_line(&item.category)).unwrap();
    }
    let s = spec.sentence_budget;
    let noun_s = if s == 1 { "sentence" } else { "sentences" };
    write!(p, "\nSummarize this user's interests in {s} {noun_s}. [/INST]").unwrap();
    Ok(p)
}

/// The `n` most frequent keys, ties by lexicographic order.
fn top_counts(counts: HashMap<String, usize>, n: usize) -> Vec<String> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(n).map(|(k, _)| k).collect()
}

/// Deterministic heuristic profile built from category and title-word counts.
pub fn stub_summary(history: &[ContentItem]) -> Result<String> {
    let recent = history.first().ok_or(Error::EmptyHistory)?;
    let mut categories = HashMap::new();
    let mut words = HashMap::new();
    for item in history {
        *categories.entry(one_line(&item.category)).or_insert(0) += 1;
        for w in split_words(&item.title) {
            *words.entry(w).or_insert(0) += 1;
        }
    }
    Ok(format!(
        "This user is interested in {}. They frequently read about {}. Recent activity emphasizes {}.",
        top_counts(categories, 3).join(", "),
        top_counts(words, 3).join(", "),
        one_line(&recent.category)
    ))
}

/// Text-completion service speaking `{prompt, max_tokens}` → `{text}` JSON.
#[derive(Clone, Debug)]
pub struct HttpBackend {
    pub endpoint: String,
    pub token: Option<String>,
    pub max_tokens: usize,
    pub timeout: Duration,
    pub attempts: usize,
    pub initial_backoff: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token,
            max_tokens: 256,
            timeout: Duration::from_secs(60),
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }

    /// Reads the endpoint and bearer token from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(TOKEN_VAR).ok()))
    }

    fn request_once(&self, agent: &ureq::Agent, prompt: &str) -> std::result::Result<String, String> {
        let mut req = agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let body = serde_json::json!({ "prompt": prompt, "max_tokens": self.max_tokens });
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        match value.get("text").and_then(|t| t.as_str()) {
            Some(t) if !t.trim().is_empty() => Ok(t.to_string()),
            _ => Err("response has no non-empty `text` field".into()),
        }
    }

    /// Sends the prompt, retrying with exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut delay = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts.max(1) {
            match self.request_once(&agent, prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("profiler request {attempt} failed: {e}");
                    last = e;
                }
            }
            if attempt < self.attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(Error::Profiler {
            attempts: self.attempts.max(1),
            message: last,
        })
    }
}

#[derive(Clone, Debug)]
pub enum SummaryBackend {
    Stub,
    External(HttpBackend),
}

/// A summary of `history` (most recent first) from the chosen backend.
pub fn summarize(history: &[ContentItem], spec: &PromptSpec, backend: &SummaryBackend) -> Result<String> {
    match backend {
        SummaryBackend::Stub => stub_summary(&history[..history.len().min(spec.max_items)]),
        SummaryBackend::External(http) => http.complete(&build_prompt(history, spec)?),
    }
}

/// Summaries of many histories in input order, with at most `in_flight`
/// backend calls running at once.
pub fn summarize_all(histories: &[Vec<ContentItem>], spec: &PromptSpec, backend: &SummaryBackend, in_flight: usize) -> Result<Vec<String>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| histories.par_iter().map(|h| summarize(h, spec, backend)).collect())
}

/// Summaries keyed by user, valid only for the history they were built from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SummaryCache {
    entries: BTreeMap<String, (u64, String)>,
}

impl SummaryCache {
    /// Reads `user_id \t history_hash \t summary` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cache = Self::default();
        for (i, line) in read_text(path)?.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let parsed = match (cols.next(), cols.next(), cols.next()) {
                (Some(u), Some(h), Some(s)) => u64::from_str_radix(h, 16).ok().map(|h| (u, h, s)),
                _ => None,
            };
            let Some((user, hash, summary)) = parsed else {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "expected user_id, history hash and summary".into(),
                });
            };
            cache.entries.insert(user.to_string(), (hash, summary.to_string()));
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (user, (hash, summary)) in &self.entries {
            writeln!(out, "{user}\t{hash:016x}\t{}", one_line(summary)).unwrap();
        }
        write_text(path.as_ref(), &out)
    }

    /// The cached summary, if it was built from a history with this hash.
    pub fn get(&self, user: &str, history_hash: u64) -> Option<&str> {
        self.entries
            .get(user)
            .filter(|(h, _)| *h == history_hash)
            .map(|(_, s)| s.as_str())
    }

    pub fn insert(&mut self, user: impl Into<String>, history_hash: u64, summary: impl Into<String>) {
        self.entries.insert(user.into(), (history_hash, summary.into()));
    }

    /// `(user, history_hash, summary)` in user order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64, &str)> {
        self.entries.iter().map(|(u, (h, s))| (u.as_str(), *h, s.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn item(i: usize, cat: &str) -> ContentItem {
        ContentItem::new(format!("N{i}"), format!("title {i}"), "some words", cat)
    }

    #[test]
    fn prompt_caps_items_at_thirty() {
        let history: Vec<ContentItem> = (0..40).map(|i| item(i, "sports")).collect();
        let p = build_prompt(&history, &PromptSpec::new(Schema::News)).unwrap();
        assert!(p.contains("\n30. Title: title 29\n"));
        assert!(!p.contains("\n31. "));
        assert!(p.contains("1. Title: title 0\n"));
    }

    #[test]
    fn prompt_truncates_abstracts() {
        let long: Vec<String> = (0..120).map(|i| format!("w{i}")).collect();
        let it = ContentItem::new("N1", "t", long.join(" "), "c");
        let p = build_prompt(&[it], &PromptSpec::new(Schema::Book)).unwrap();
        let line = p.lines().find(|l| l.trim_start().starts_with("Description:")).unwrap();
        assert_eq!(line.split_whitespace().count() - 1, 100);
        assert!(line.ends_with(" w99"));
    }

    #[test]
    fn single_item_prompt_still_asks_for_three_sentences() {
        let p = build_prompt(&[item(0, "tech")], &PromptSpec::new(Schema::News)).unwrap();
        assert_eq!(p.matches("Title:").count(), 1);
        assert!(p.contains("in 3 sentences"));
        assert!(build_prompt(&[], &PromptSpec::new(Schema::News)).is_err());
    }

    #[test]
    fn stub_examples() {
        let all_sports: Vec<ContentItem> = (0..4).map(|i| item(i, "sports")).collect();
        let spec = PromptSpec::new(Schema::News);
        let s = summarize(&all_sports, &spec, &SummaryBackend::Stub).unwrap();
        assert!(s.contains("sports"));
        assert_eq!(s, summarize(&all_sports, &spec, &SummaryBackend::Stub).unwrap());

        let tied = vec![item(0, "tech"), item(1, "sports")];
        let s = stub_summary(&tied).unwrap();
        assert!(s.starts_with("This user is interested in sports, tech."), "{s}");
        assert!(s.ends_with("Recent activity emphasizes tech."));
        assert!(s.contains("They frequently read about title, 0, 1."), "{s}");
    }

    #[test]
    fn batch_summaries_keep_input_order() {
        let histories: Vec<Vec<ContentItem>> = ["sports", "tech", "music"].iter().map(|c| vec![item(0, c)]).collect();
        let spec = PromptSpec::new(Schema::News);
        let all = summarize_all(&histories, &spec, &SummaryBackend::Stub, 2).unwrap();
        for (h, s) in histories.iter().zip(&all) {
            assert_eq!(s, &summarize(h, &spec, &SummaryBackend::Stub).unwrap());
        }
    }

    #[test]
    fn cache_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summaries.tsv");
        let mut cache = SummaryCache::default();
        cache.insert("U1", 42, "Likes\tsports.\nAnd tech.");
        cache.save(&path).unwrap();
        let loaded = SummaryCache::load(&path).unwrap();
        assert_eq!(loaded.get("U1", 42), Some("Likes sports. And tech."));
        assert_eq!(loaded.get("U1", 43), None);
        assert_eq!(loaded.get("U2", 42), None);
    }

    /// Serves the given `(status, body)` responses, one per connection.
    fn serve(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/complete", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    #[test]
    fn http_backend_retries_then_succeeds() {
        let (url, server) = serve(vec![(500, "{}"), (200, r#"{"text":"Enjoys sports."}"#)]);
        let mut http = HttpBackend::new(url, Some("secret".into()));
        http.initial_backoff = Duration::from_millis(1);
        let out = summarize(&[item(0, "sports")], &PromptSpec::new(Schema::News), &SummaryBackend::External(http)).unwrap();
        assert_eq!(out, "Enjoys sports.");
        let bodies = server.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["max_tokens"], 256);
        assert!(sent["prompt"].as_str().unwrap().contains("Category: sports"));
    }

    #[test]
    fn http_backend_reports_attempts() {
        let (url, server) = serve(vec![(200, r#"{"text":""}"#), (503, "{}"), (200, "{}")]);
        let mut http = HttpBackend::new(url, None);
        http.initial_backoff = Duration::from_millis(1);
        let err = http.complete("hi").unwrap_err();
        assert!(matches!(err, Error::Profiler { attempts: 3, .. }));
        server.join().unwrap();
    }
}
