//! Per-impression ranking metrics and their macro average.
//!
//! AUC gives half credit to tied scores. MRR and nDCG rank candidates by
//! descending score and break ties by original position.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "metric inputs",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("auc needs both a positive and a negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U from mid-ranks of tied groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// 1-based ranks of every candidate: descending score, ties by index.
fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut rank = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

fn require_positive(labels: &[u8], name: &'static str) -> Result<()> {
    if labels.iter().all(|&l| l == 0) {
        return Err(Error::UndefinedMetric(name));
    }
    Ok(())
}

/// Mean reciprocal rank over all positives.
pub fn mrr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    require_positive(labels, "mrr needs a positive")?;
    let rank = ranks(scores);
    let (mut total, mut count) = (0.0, 0usize);
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            total += 1.0 / rank[i] as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// DCG@k with binary gains, normalized by the ideal DCG@k.
pub fn ndcg_at_k(scores: &[f64], labels: &[u8], k: usize) -> Result<f64> {
    check(scores, labels)?;
    require_positive(labels, "ndcg needs a positive")?;
    let rank = ranks(scores);
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| l != 0 && rank[i] <= k)
        .map(|(i, _)| discount(rank[i]))
        .sum();
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let ideal: f64 = (1..=positives.min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

/// Macro-averaged metrics over a set of impressions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    /// Impressions left out of the AUC average because they hold one class only.
    pub skipped_auc: usize,
    /// Impressions left out of the ranking averages because they have no positive.
    pub skipped_ranking: usize,
    pub step: usize,
}

impl EvalReport {
    /// Progress-log line: `step auc mrr ndcg5 ndcg10`.
    pub fn log_line(&self) -> String {
        format!(
            "{} {:.4} {:.4} {:.4} {:.4}",
            self.step, self.auc, self.mrr, self.ndcg5, self.ndcg10
        )
    }
}

/// Averages per-impression metrics in input order.
pub fn evaluate_rankings<'a>(impressions: impl IntoIterator<Item = (&'a [f64], &'a [u8])>) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let (mut auc_n, mut rank_n) = (0usize, 0usize);
    for (scores, labels) in impressions {
        report.n_impressions += 1;
        match auc(scores, labels) {
            Ok(a) => {
                report.auc += a;
                auc_n += 1;
            }
            Err(Error::UndefinedMetric(_)) => report.skipped_auc += 1,
            Err(e) => return Err(e),
        }
        match mrr(scores, labels) {
            Ok(m) => {
                report.mrr += m;
                report.ndcg5 += ndcg_at_k(scores, labels, 5)?;
                report.ndcg10 += ndcg_at_k(scores, labels, 10)?;
                rank_n += 1;
            }
            Err(Error::UndefinedMetric(_)) => report.skipped_ranking += 1,
            Err(e) => return Err(e),
        }
    }
    if report.n_impressions == 0 {
        return Err(Error::EmptyImpressions);
    }
    if auc_n == 0 {
        return Err(Error::UndefinedMetric("no impression has both classes"));
    }
    report.auc /= auc_n as f64;
    if rank_n > 0 {
        report.mrr /= rank_n as f64;
        report.ndcg5 /= rank_n as f64;
        report.ndcg10 /= rank_n as f64;
    }
    Ok(report)
}
