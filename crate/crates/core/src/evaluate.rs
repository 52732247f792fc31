//! Exact inner-product retrieval and top-`p` metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::EvalSet;
use crate::error::{Error, Result};
use crate::model::{infer_interests, ModelParams};
use crate::numerics::{dot, Matrix};

/// Cutoffs reported by [`MetricsReport`].
pub const REPORT_CUTOFFS: [usize; 2] = [20, 50];

/// Descending by score, ascending by index on ties.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn top_n(mut scored: Vec<(usize, f64)>, n: usize) -> Vec<(usize, f64)> {
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, rank_order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Top-`n` items for an interest matrix.
///
/// Each interest row takes its own top `n` over `items[..num_items]`; the
/// union is re-ranked by each item's best score over all interests.
pub fn retrieve_top_n(interests: &Matrix, items: &Matrix, num_items: usize, n: usize) -> Vec<usize> {
    assert!(n >= 1, "retrieval depth must be at least 1");
    assert!(num_items <= items.rows(), "{num_items} items but {} embedding rows", items.rows());
    let c = interests.rows();
    let scores: Vec<Vec<f64>> = (0..c)
        .map(|k| (0..num_items).map(|i| dot(interests.row(k), items.row(i))).collect())
        .collect();
    let mut in_union = vec![false; num_items];
    for row in &scores {
        let scored = row.iter().copied().enumerate().collect();
        for (i, _) in top_n(scored, n) {
            in_union[i] = true;
        }
    }
    let union: Vec<(usize, f64)> = (0..num_items)
        .filter(|&i| in_union[i])
        .map(|i| (i, scores.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    top_n(union, n).into_iter().map(|(i, _)| i).collect()
}

fn hits<'a>(recommended: &'a [usize], relevant: &'a [usize], p: usize) -> impl Iterator<Item = usize> + 'a {
    recommended
        .iter()
        .take(p)
        .enumerate()
        .filter(move |(_, i)| relevant.contains(i))
        .map(|(rank, _)| rank)
}

/// `|top-p ∩ relevant| / |relevant|`.
pub fn recall_at_p(recommended: &[usize], relevant: &[usize], p: usize) -> f64 {
    assert!(!relevant.is_empty(), "relevant set is empty");
    hits(recommended, relevant, p).count() as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with a `log₂(rank + 1)` discount, ranks from 1.
pub fn ndcg_at_p(recommended: &[usize], relevant: &[usize], p: usize) -> f64 {
    assert!(!relevant.is_empty(), "relevant set is empty");
    let gain = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg: f64 = hits(recommended, relevant, p).map(gain).sum();
    let idcg: f64 = (0..p.min(relevant.len())).map(gain).sum();
    dcg / idcg
}

/// 1 when any relevant item is in the top `p`.
pub fn hr_at_p(recommended: &[usize], relevant: &[usize], p: usize) -> f64 {
    assert!(!relevant.is_empty(), "relevant set is empty");
    if hits(recommended, relevant, p).next().is_some() {
        1.0
    } else {
        0.0
    }
}

/// Metrics at one cutoff, as fractions averaged over users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffMetrics {
    pub cutoff: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

/// Averages the three metrics over users with nonempty targets, at each
/// cutoff. `ranked[k]` is the recommendation list for `relevant[k]`.
pub fn aggregate(ranked: &[Vec<usize>], relevant: &[Vec<usize>], cutoffs: &[usize]) -> Result<(Vec<CutoffMetrics>, usize)> {
    assert_eq!(ranked.len(), relevant.len());
    let mut out: Vec<CutoffMetrics> = cutoffs
        .iter()
        .map(|&cutoff| CutoffMetrics {
            cutoff,
            recall: 0.0,
            ndcg: 0.0,
            hr: 0.0,
        })
        .collect();
    let mut users = 0;
    for (rec, rel) in ranked.iter().zip(relevant) {
        if rel.is_empty() {
            continue;
        }
        users += 1;
        for m in &mut out {
            m.recall += recall_at_p(rec, rel, m.cutoff);
            m.ndcg += ndcg_at_p(rec, rel, m.cutoff);
            m.hr += hr_at_p(rec, rel, m.cutoff);
        }
    }
    if users == 0 {
        return Err(Error::InvalidArgument("evaluation set has no user with targets".into()));
    }
    for m in &mut out {
        m.recall /= users as f64;
        m.ndcg /= users as f64;
        m.hr /= users as f64;
    }
    Ok((out, users))
}

/// Metrics at each cutoff for a model on an evaluation set.
pub fn evaluate_at(params: &ModelParams, set: &EvalSet, cutoffs: &[usize]) -> Result<(Vec<CutoffMetrics>, usize)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let depth = cutoffs
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::InvalidArgument("no cutoffs requested".into()))?;
    if depth == 0 {
        return Err(Error::InvalidArgument("cutoffs must be at least 1".into()));
    }
    let num_items = params.num_items();
    let mut ranked = Vec::with_capacity(set.len());
    let mut relevant = Vec::with_capacity(set.len());
    for case in &set.cases {
        if case.targets.is_empty() || case.history.is_empty() {
            continue;
        }
        let m = infer_interests(params, &case.history)?;
        ranked.push(retrieve_top_n(&m, &params.items, num_items, depth));
        relevant.push(case.targets.clone());
    }
    aggregate(&ranked, &relevant, cutoffs)
}

/// Validation Recall@50 as a fraction.
pub fn recall50(params: &ModelParams, set: &EvalSet) -> Result<f64> {
    Ok(evaluate_at(params, set, &[50])?.0[0].recall)
}

/// Percentages at cutoffs 20 and 50.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall20: f64,
    pub recall50: f64,
    pub ndcg20: f64,
    pub ndcg50: f64,
    pub hr20: f64,
    pub hr50: f64,
    pub users: usize,
}

impl MetricsReport {
    pub fn from_metrics(metrics: &[CutoffMetrics], users: usize) -> Result<Self> {
        let at = |p: usize| {
            metrics
                .iter()
                .find(|m| m.cutoff == p)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("no metrics at cutoff {p}")))
        };
        let (a, b) = (at(20)?, at(50)?);
        Ok(Self {
            recall20: 100.0 * a.recall,
            recall50: 100.0 * b.recall,
            ndcg20: 100.0 * a.ndcg,
            ndcg50: 100.0 * b.ndcg,
            hr20: 100.0 * a.hr,
            hr50: 100.0 * b.hr,
            users,
        })
    }

    /// Single-line JSON in field order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    /// Field-wise mean; `users` is the mean rounded down.
    pub fn mean(reports: &[MetricsReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(Self {
            recall20: avg(|r| r.recall20),
            recall50: avg(|r| r.recall50),
            ndcg20: avg(|r| r.ndcg20),
            ndcg50: avg(|r| r.ndcg50),
            hr20: avg(|r| r.hr20),
            hr50: avg(|r| r.hr50),
            users: reports.iter().map(|r| r.users).sum::<usize>() / reports.len(),
        })
    }
}

/// Full report at cutoffs 20 and 50.
pub fn evaluate_model(params: &ModelParams, set: &EvalSet) -> Result<MetricsReport> {
    let (metrics, users) = evaluate_at(params, set, &REPORT_CUTOFFS)?;
    MetricsReport::from_metrics(&metrics, users)
}
