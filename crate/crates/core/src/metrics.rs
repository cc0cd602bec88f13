//! nDCG@k and per-instance gate performance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmbeddingSet, GateId, Qrels, QueryRecord, SimilarityMetric};
use crate::retrieval::{top_k, RetrievalRun, ScoredDoc};

pub const DEFAULT_K: usize = 10;

/// Parses a metric token such as `ndcg@10` (or bare `ndcg`) into its cutoff.
pub fn parse_metric(token: &str) -> Result<usize> {
    let lower = token.to_ascii_lowercase();
    match lower.split_once('@') {
        None if lower == "ndcg" => Ok(DEFAULT_K),
        Some(("ndcg", k)) => match k.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k),
            _ => Err(Error::invalid("metric", format!("bad cutoff in {token:?}"))),
        },
        _ => Err(Error::invalid(
            "metric",
            format!("{token:?} (only ndcg@k is supported)"),
        )),
    }
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

/// nDCG@k with exponential gain `2^rel - 1`. Zero when no judged doc is
/// relevant.
pub fn ndcg_at_k(ranking: &[ScoredDoc], judged: Option<&BTreeMap<String, u32>>, k: usize) -> f64 {
    let Some(judged) = judged else { return 0.0 };
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&r| r > 0).collect();
    if ideal.is_empty() {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain(r) / discount(i + 1))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(&d.doc_id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    dcg / idcg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerInstanceScore {
    pub query_id: String,
    pub gate: GateId,
    pub score: f64,
}

/// nDCG@10 of `gate`'s embedding for `query` when retrieving from `corpus`.
pub fn per_instance_performance(
    query: &QueryRecord,
    gate: &GateId,
    gate_query_embs: &EmbeddingSet,
    corpus: &EmbeddingSet,
    qrels: &Qrels,
    metric: SimilarityMetric,
) -> Result<PerInstanceScore> {
    let emb = gate_query_embs
        .get(&query.query_id)
        .ok_or_else(|| Error::missing("gate embedding", &query.query_id))?;
    let judged = qrels
        .get(&query.query_id)
        .ok_or_else(|| Error::missing("qrels entry", &query.query_id))?;
    let ranking = top_k(emb, corpus, DEFAULT_K, metric)?;
    Ok(PerInstanceScore {
        query_id: query.query_id.clone(),
        gate: gate.clone(),
        score: ndcg_at_k(&ranking, Some(judged), DEFAULT_K),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunEvaluation {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Run queries absent from the qrels.
    pub skipped: usize,
}

pub fn evaluate_run(run: &RetrievalRun, qrels: &Qrels, k: usize) -> Result<RunEvaluation> {
    let mut per_query = BTreeMap::new();
    let mut skipped = 0;
    for (q, ranking) in &run.rankings {
        match qrels.get(q) {
            Some(judged) => {
                per_query.insert(q.clone(), ndcg_at_k(ranking, Some(judged), k));
            }
            None => skipped += 1,
        }
    }
    if per_query.is_empty() {
        return Err(Error::Empty("intersection of run and qrels"));
    }
    if skipped > 0 {
        log::warn!("{skipped} run queries have no qrels and were skipped");
    }
    let mean = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(RunEvaluation {
        per_query,
        mean,
        skipped,
    })
}
