// Drives the `spar` command line in-process: generate data, evaluate an
// oracle score file, and run the numerical self-checks.

use std::fmt::Write as _;

use spar::dataio::{parse_behaviors, write_behaviors};

pub fn run_example() -> spar::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| spar::Error::Config(e.to_string()))?;
    let data = dir.path().join("data");
    let data_flag = data.to_str().unwrap_or_default().to_string();
    let cli = |args: &[&str]| -> spar::Result<()> {
        let argv = std::iter::once("spar").chain(args.iter().copied()).chain(["--data-dir", data_flag.as_str()]);
        match spar::cli::run(argv) {
            0 => Ok(()),
            code => Err(spar::Error::Config(format!("`spar {}` exited with {code}", args.join(" ")))),
        }
    };

    cli(&["synth", "--seed", "7", "--set", "synth_users=20", "--set", "synth_items=60"])?;

    // Keep one positive per impression: scoring every candidate by its own
    // label then gives perfect metrics.
    let test_path = data.join("test").join("behaviors.tsv");
    let mut records = parse_behaviors(&test_path)?;
    for r in &mut records {
        let mut seen = false;
        r.impression.candidates.retain(|&(_, label)| label == 0 || !std::mem::replace(&mut seen, true));
    }
    write_behaviors(&test_path, &records)?;
    let mut oracle = String::new();
    for r in &records {
        for (id, label) in &r.impression.candidates {
            writeln!(oracle, "{}\t{id}\t{label}", r.impression.impression_id).unwrap();
        }
    }
    let scores = dir.path().join("oracle.tsv");
    std::fs::write(&scores, oracle).map_err(|e| spar::Error::Config(e.to_string()))?;
    cli(&["eval", "--scores", scores.to_str().unwrap_or_default()])?;

    cli(&["benchmark", "--set", "bench_tokens=256", "--set", "bench_sessions=4", "--set", "bench_repetitions=2"])?;
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
