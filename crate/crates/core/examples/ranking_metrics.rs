// Per-impression AUC, MRR and nDCG, and their macro average.

use spar::metrics::{auc, evaluate_rankings, mrr, ndcg_at_k};

pub fn run_example() -> spar::Result<()> {
    let scores = [0.9, 0.8, 0.7, 0.6, 0.1];
    let labels = [1, 0, 0, 1, 0];
    println!("auc {:.4}", auc(&scores, &labels)?);
    println!("mrr {:.4}", mrr(&scores, &labels)?);
    println!("ndcg@5 {:.4}", ndcg_at_k(&scores, &labels, 5)?);

    // Tied scores earn half credit in AUC.
    println!("all tied: auc {}", auc(&[0.3; 4], &[1, 0, 1, 0])?);

    let impressions: Vec<(Vec<f64>, Vec<u8>)> = vec![
        (vec![0.2, 0.9, 0.4], vec![0, 1, 0]),
        (vec![0.5, 0.1, 0.3, 0.8], vec![0, 0, 1, 0]),
        (vec![0.4, 0.6], vec![1, 1]),
    ];
    let report = evaluate_rankings(impressions.iter().map(|(s, l)| (s.as_slice(), l.as_slice())))?;
    println!("macro average over {} impressions: {}", report.n_impressions, report.log_line());
    println!("skipped for auc: {}", report.skipped_auc);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
