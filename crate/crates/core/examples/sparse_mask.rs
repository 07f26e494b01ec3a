// Builds the per-code visibility mask of the history summarizing layer and
// prints which tokens each code may attend to.
//
// Run with `cargo run --example sparse_mask`.

use spar::polyattn::{build_sparse_mask, window_span};

pub fn run_example() -> spar::Result<()> {
    // Ten history tokens, two items starting at 0 and 5, two codes, window 2.
    let mask = build_sparse_mask(10, &[0, 5], 2, 2, 0.0, 1)?;
    for code in 0..2 {
        let visible: Vec<usize> = (0..10).filter(|&j| mask.allowed.get(code, j)).collect();
        println!("code {code}: window {:?}, visible {visible:?}", window_span(10, 2, code, 2));
    }
    assert_eq!(mask.allowed.row(0), &[true, false, true, true, false, true, false, false, false, false]);

    // A random share of the remaining tokens joins each code independently.
    let wider = build_sparse_mask(200, &[0, 50, 100, 150], 8, 16, 0.1, 7)?;
    for code in 0..8 {
        println!("code {code}: {} of 200 tokens visible", wider.allowed.count_row(code));
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
