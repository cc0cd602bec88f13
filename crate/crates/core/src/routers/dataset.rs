//! Nearest-sample routing using original dataset labels.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{similarity, Embedding, EmbeddingSet, GateId, GateSet, QueryRecord, SimilarityMetric};
use crate::rng::keyed_rng;

use super::{RouterKind, RoutingDecision};

pub const DEFAULT_SAMPLES_PER_DATASET: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub query_id: String,
    pub source_dataset: String,
    pub gate: GateId,
    pub embedding: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSampleIndex {
    pub gates: GateSet,
    pub per_dataset_count: usize,
    pub samples: Vec<DatasetSample>,
}

/// Samples up to `n` training instances per dataset (seeded, without
/// replacement) and tags each with the gate trained on its dataset.
pub fn build_dataset_sample_index(
    train: &[QueryRecord],
    base_embs: &EmbeddingSet,
    dataset_to_gate: &BTreeMap<String, GateId>,
    gate_set: &GateSet,
    n: usize,
    seed: u64,
) -> Result<DatasetSampleIndex> {
    let mut by_dataset: BTreeMap<&str, Vec<&QueryRecord>> = BTreeMap::new();
    for rec in train {
        by_dataset.entry(&rec.source_dataset).or_default().push(rec);
    }
    for ds in dataset_to_gate.keys() {
        if !by_dataset.contains_key(ds.as_str()) {
            return Err(Error::invalid(
                "dataset router",
                format!("dataset {ds} has no training instances"),
            ));
        }
    }

    let mut samples = Vec::new();
    for (ds, recs) in by_dataset {
        let gate = dataset_to_gate
            .get(ds)
            .ok_or_else(|| Error::invalid("dataset router", format!("dataset {ds} maps to no gate")))?;
        if !gate_set.contains(gate) {
            return Err(Error::invalid(
                "dataset router",
                format!("gate {gate} of {ds} not in gate set"),
            ));
        }
        let mut rng = keyed_rng(seed, &["dataset-router", ds]);
        let take = n.min(recs.len());
        let mut picked = sample(&mut rng, recs.len(), take).into_vec();
        picked.sort_unstable();
        for i in picked {
            let rec = recs[i];
            let emb = base_embs
                .get(&rec.query_id)
                .ok_or_else(|| Error::missing("base embedding", &rec.query_id))?;
            samples.push(DatasetSample {
                query_id: rec.query_id.clone(),
                source_dataset: ds.to_string(),
                gate: gate.clone(),
                embedding: emb.to_vec(),
            });
        }
    }
    Ok(DatasetSampleIndex {
        gates: gate_set.clone(),
        per_dataset_count: n,
        samples,
    })
}

/// Gate of the single most similar sample. Per-gate scores are the best
/// sample similarity for each gate present in the index.
pub fn route_dataset(
    query: &Embedding,
    index: &DatasetSampleIndex,
    metric: SimilarityMetric,
) -> Result<RoutingDecision> {
    if index.samples.is_empty() {
        return Err(Error::Empty("dataset sample index"));
    }
    let mut best: Vec<Option<f64>> = vec![None; index.gates.len()];
    for s in &index.samples {
        let g = index
            .gates
            .position(&s.gate)
            .ok_or_else(|| Error::invalid("dataset sample index", format!("unknown gate {}", s.gate)))?;
        let sim = similarity(&query.vec, &s.embedding, metric)?;
        best[g] = Some(best[g].map_or(sim, |b: f64| b.max(sim)));
    }
    let scores = index
        .gates
        .iter()
        .zip(best)
        .filter_map(|(g, s)| s.map(|s| (g.clone(), s)))
        .collect();
    RoutingDecision::from_scores(&query.id, scores, RouterKind::Dataset)
}
