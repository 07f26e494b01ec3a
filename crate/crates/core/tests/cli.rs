use std::path::Path;
use std::process::{Command, Output};

use spar::dataio::{parse_behaviors, write_behaviors};

const SMALL_DATA: [&str; 8] = [
    "--set", "synth_users=16", "--set", "synth_items=40", "--set", "synth_history=8", "--set", "synth_candidates=6",
];

const SMALL_MODEL: [&str; 18] = [
    "--set", "layers=1", "--set", "heads=2", "--set", "model_dim=16", "--set", "ffn_dim=32", "--set", "history_cap=8",
    "--set", "session_size=4", "--set", "m=4", "--set", "n=2", "--set", "window=12",
];

fn spar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spar"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spar binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["synth", "--seed", "7", "--data-dir", "a"];
    args.extend(SMALL_DATA);
    assert_eq!(spar(dir.path(), &args).status.code(), Some(0));
    args[4] = "b";
    assert_eq!(spar(dir.path(), &args).status.code(), Some(0));
    for f in ["catalog.tsv", "train/behaviors.tsv", "dev/behaviors.tsv", "test/behaviors.tsv"] {
        assert_eq!(read(dir.path(), &format!("a/{f}")), read(dir.path(), &format!("b/{f}")));
    }
}

#[test]
fn gradcheck_passes_on_the_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = spar(dir.path(), &["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let line = text.lines().find(|l| l.starts_with("max relative error")).unwrap();
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(value < 1e-3, "{line}");
}

#[test]
fn eval_of_oracle_scores_reports_perfect_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["synth", "--data-dir", "d"];
    args.extend(SMALL_DATA);
    assert_eq!(spar(dir.path(), &args).status.code(), Some(0));

    let path = dir.path().join("d/test/behaviors.tsv");
    let mut records = parse_behaviors(&path).unwrap();
    let mut oracle = String::new();
    for r in &mut records {
        let mut seen = false;
        r.impression.candidates.retain(|&(_, l)| l == 0 || !std::mem::replace(&mut seen, true));
        for (id, l) in &r.impression.candidates {
            oracle.push_str(&format!("{}\t{id}\t{l}\n", r.impression.impression_id));
        }
    }
    write_behaviors(&path, &records).unwrap();
    std::fs::write(dir.path().join("oracle.tsv"), oracle).unwrap();

    let out = spar(dir.path(), &["eval", "--data-dir", "d", "--scores", "oracle.tsv"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("test: auc 1.0000  mrr 1.0000  ndcg@5 1.0000  ndcg@10 1.0000"), "{}", stdout(&out));
}

#[test]
fn help_lists_every_key_and_unknown_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let help = spar(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = stdout(&help);
    for (key, _, _) in spar::settings::KEYS {
        assert!(text.contains(key), "--help misses {key}");
    }
    assert_eq!(spar(dir.path(), &["synth", "--set", "colour=red"]).status.code(), Some(1));
    assert_eq!(spar(dir.path(), &["frobnicate"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.conf"), "colour = red\n").unwrap();
    assert_eq!(spar(dir.path(), &["synth", "--config", "bad.conf"]).status.code(), Some(1));
    assert_eq!(spar(dir.path(), &["eval", "--data-dir", "missing"]).status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "synth_users = 5\nsynth_items = 30\ndata_dir = from_file\n").unwrap();
    let out = spar(dir.path(), &["synth", "--config", "run.conf"]);
    assert!(stdout(&out).contains("20/5/10"), "{}", stdout(&out));
    assert!(dir.path().join("from_file/catalog.tsv").exists());
    let out = spar(dir.path(), &["synth", "--config", "run.conf", "--set", "synth_users=6", "--data-dir", "from_flag"]);
    assert!(stdout(&out).contains("24/6/12"), "{}", stdout(&out));
    assert!(dir.path().join("from_flag/catalog.tsv").exists());
}

#[test]
fn full_pipeline_scores_from_stores_like_the_live_model() {
    let dir = tempfile::tempdir().unwrap();
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--data-dir", "d", "--out", "o", "--threads", "1"];
        args.extend(SMALL_DATA);
        args.extend(SMALL_MODEL);
        args.extend(extra);
        let out = spar(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        stdout(&out)
    };
    run("synth", &[]);
    assert!(run("summarize", &[]).contains("16 users: 16 summarized"));
    assert!(run("summarize", &[]).contains("0 summarized, 16 reused"));
    run("train", &["--epochs", "1", "--set", "batch_size=16"]);
    assert_eq!(read(dir.path(), "o/progress.log").lines().count(), 1);
    let live = run("eval", &[]);
    run("precompute", &[]);
    run("score", &[]);
    let stored = run("eval", &["--scores", "o/scores.tsv"]);
    assert_eq!(live, stored);
    let entropy = run("entropy", &["--set", "entropy_samples=5"]);
    assert!(entropy.contains("of 5 users have lower entropy"), "{entropy}");
}
