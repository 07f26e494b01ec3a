// Builds the user-interest prompt for a text-completion service, produces
// the offline summary and caches it keyed by the history it describes.
//
// Setting `SPAR_PROFILER_ENDPOINT` (and optionally `SPAR_PROFILER_TOKEN`)
// additionally sends the prompt to that endpoint.

use spar::dataio::UserHistory;
use spar::profiler::{build_prompt, summarize, HttpBackend, PromptSpec, SummaryBackend, SummaryCache, ENDPOINT_VAR};
use spar::textprep::{ContentItem, Schema};

pub fn run_example() -> spar::Result<()> {
    let history = vec![
        ContentItem::new("N3", "Late goal seals the derby", "A stoppage-time header decided the match.", "sports"),
        ContentItem::new("N2", "Markets rally on rate news", "Stocks climbed after the announcement.", "finance"),
        ContentItem::new("N1", "Cup final preview", "Both teams arrive unbeaten this season.", "sports"),
    ];
    let spec = PromptSpec::new(Schema::News);
    println!("{}\n", build_prompt(&history, &spec)?);

    let summary = summarize(&history, &spec, &SummaryBackend::Stub)?;
    println!("offline summary: {summary}");
    if std::env::var(ENDPOINT_VAR).is_ok() {
        let backend = SummaryBackend::External(HttpBackend::from_env()?);
        println!("service summary: {}", summarize(&history, &spec, &backend)?);
    }

    let ids: Vec<String> = history.iter().rev().map(|it| it.id.clone()).collect();
    let key = UserHistory::from_log("U1", &ids, usize::MAX).hash();
    let mut cache = SummaryCache::default();
    cache.insert("U1", key, summary.clone());
    let dir = tempfile::tempdir().map_err(|e| spar::Error::Config(e.to_string()))?;
    let path = dir.path().join("summaries.tsv");
    cache.save(&path)?;
    let reloaded = SummaryCache::load(&path)?;
    assert_eq!(reloaded.get("U1", key), Some(summary.as_str()));
    assert_eq!(reloaded.get("U1", key ^ 1), None);
    println!("cache entry is reused only for the same history");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
