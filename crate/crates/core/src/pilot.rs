//! Pilot embedding library construction.
//!
//! 1. For every training instance, score each gate by the nDCG@10 its own
//!    query embedding achieves, and record the best gate (`g_max`).
//! 2. Within each source dataset, group instances by `g_max`.
//! 3. Cluster each non-empty group's *base-encoder* embeddings (k = 1 gives
//!    the mean) and store every centroid as a pilot keyed by the gate.
//!
//! With `T` datasets and `T` gates and k = 1 this yields at most `T²` pilots.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetManifest;
use crate::error::{Error, Result};
use crate::io;
use crate::kmeans::kmeans_clusters;
use crate::metrics::per_instance_performance;
use crate::model::{argmax_canonical, EmbeddingSet, GateId, GateSet, Qrels, QueryRecord, SimilarityMetric};
use crate::rng::derive_seed;

/// Scores within this distance of the best count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusScope {
    /// Retrieve from the whole shared corpus.
    Full,
    /// Retrieve only from the docs owned by the instance's source dataset.
    #[default]
    SourceDataset,
}

/// Resolves which corpus an instance is scored against.
pub struct ScopedCorpus<'a> {
    full: &'a EmbeddingSet,
    per_dataset: HashMap<String, EmbeddingSet>,
}

impl<'a> ScopedCorpus<'a> {
    pub fn full(corpus: &'a EmbeddingSet) -> Self {
        ScopedCorpus {
            full: corpus,
            per_dataset: HashMap::new(),
        }
    }

    /// Datasets that list no docs fall back to the full corpus.
    pub fn new(corpus: &'a EmbeddingSet, datasets: &DatasetManifest, scope: CorpusScope) -> Self {
        let per_dataset = match scope {
            CorpusScope::Full => HashMap::new(),
            CorpusScope::SourceDataset => datasets
                .datasets
                .iter()
                .filter(|d| !d.docs.is_empty())
                .map(|d| {
                    let owned: std::collections::HashSet<&str> = d.docs.iter().map(String::as_str).collect();
                    (d.name.clone(), corpus.filter(|id| owned.contains(id)))
                })
                .collect(),
        };
        ScopedCorpus {
            full: corpus,
            per_dataset,
        }
    }

    pub fn for_dataset(&self, dataset: &str) -> &EmbeddingSet {
        self.per_dataset.get(dataset).unwrap_or(self.full)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxGateAssignment {
    pub query_id: String,
    pub source_dataset: String,
    /// One score per gate, in canonical gate order.
    pub per_gate_scores: Vec<(GateId, f64)>,
    pub max_gate: GateId,
    pub tied: bool,
}

impl MaxGateAssignment {
    pub fn score(&self, gate: &GateId) -> Option<f64> {
        self.per_gate_scores.iter().find(|(g, _)| g == gate).map(|(_, s)| *s)
    }
}

/// Best gate per training instance by per-instance nDCG@10. Ties resolve to
/// the earliest gate in canonical order and are flagged.
pub fn assign_max_gates(
    train: &[QueryRecord],
    gate_set: &GateSet,
    gate_query_embs: &BTreeMap<GateId, EmbeddingSet>,
    corpus: &ScopedCorpus<'_>,
    qrels: &Qrels,
    metric: SimilarityMetric,
) -> Result<Vec<MaxGateAssignment>> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let providers: Vec<&EmbeddingSet> = gate_set
        .iter()
        .map(|g| {
            gate_query_embs
                .get(g)
                .ok_or_else(|| Error::invalid("gate embeddings", format!("no query embeddings for gate {g}")))
        })
        .collect::<Result<_>>()?;

    train
        .par_iter()
        .map(|rec| {
            let docs = corpus.for_dataset(&rec.source_dataset);
            let scores = gate_set
                .iter()
                .zip(&providers)
                .map(|(g, embs)| {
                    Ok((
                        g.clone(),
                        per_instance_performance(rec, g, embs, docs, qrels, metric)?.score,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let opt: Vec<Option<f64>> = scores.iter().map(|(_, s)| Some(*s)).collect();
            let (best, tied) = argmax_canonical(&opt, TIE_TOLERANCE).expect("non-empty gate set");
            Ok(MaxGateAssignment {
                query_id: rec.query_id.clone(),
                source_dataset: rec.source_dataset.clone(),
                max_gate: scores[best].0.clone(),
                per_gate_scores: scores,
                tied,
            })
        })
        .collect()
}

pub fn assignments_csv(assignments: &[MaxGateAssignment], gate_set: &GateSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "query_id".to_string(),
        "source_dataset".into(),
        "max_gate".into(),
        "tied".into(),
    ];
    header.extend(gate_set.iter().map(|g| g.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for a in assignments {
        let mut row = vec![
            a.query_id.clone(),
            a.source_dataset.clone(),
            a.max_gate.to_string(),
            a.tied.to_string(),
        ];
        for g in gate_set {
            row.push(a.score(g).map(|s| s.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?)
        .map_err(|e| Error::invalid("csv", e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::invalid("csv", e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotEntry {
    pub gate: GateId,
    pub source_dataset: String,
    pub member_count: usize,
    pub centroid: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotLibrary {
    pub gates: GateSet,
    pub metric: SimilarityMetric,
    pub k: usize,
    pub seed: u64,
    pub entries: Vec<PilotEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LibraryOptions {
    /// Clusters per (dataset, gate) group.
    pub k: usize,
    pub seed: u64,
    pub metric: SimilarityMetric,
    /// Leave out instances whose best gate was tied.
    pub exclude_tied: bool,
}

impl Default for LibraryOptions {
    fn default() -> Self {
        LibraryOptions {
            k: 1,
            seed: 10,
            metric: SimilarityMetric::Ip,
            exclude_tied: false,
        }
    }
}

pub fn build_pilot_library(
    assignments: &[MaxGateAssignment],
    base_query_embs: &EmbeddingSet,
    gate_set: &GateSet,
    opts: LibraryOptions,
) -> Result<PilotLibrary> {
    if opts.k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    // datasets in order of first appearance, groups in canonical gate order
    let mut dataset_order: Vec<&str> = Vec::new();
    let mut groups: HashMap<(&str, usize), Vec<&[f32]>> = HashMap::new();
    for a in assignments {
        if opts.exclude_tied && a.tied {
            continue;
        }
        let g = gate_set
            .position(&a.max_gate)
            .ok_or_else(|| Error::invalid("assignment", format!("gate {} not in gate set", a.max_gate)))?;
        let emb = base_query_embs
            .get(&a.query_id)
            .ok_or_else(|| Error::missing("base embedding", &a.query_id))?;
        if !dataset_order.contains(&a.source_dataset.as_str()) {
            dataset_order.push(&a.source_dataset);
        }
        groups.entry((&a.source_dataset, g)).or_default().push(emb);
    }

    let mut entries = Vec::new();
    for ds in dataset_order {
        for (g, gate) in gate_set.iter().enumerate() {
            let Some(members) = groups.get(&(ds, g)) else { continue };
            let seed = derive_seed(opts.seed, &["kmeans", ds, gate.as_str()]);
            for cluster in kmeans_clusters(members, opts.k, seed)? {
                entries.push(PilotEntry {
                    gate: gate.clone(),
                    source_dataset: ds.to_string(),
                    member_count: cluster.members,
                    centroid: cluster.centroid,
                });
            }
        }
    }
    Ok(PilotLibrary {
        gates: gate_set.clone(),
        metric: opts.metric,
        k: opts.k,
        seed: opts.seed,
        entries,
    })
}

impl PilotLibrary {
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.centroid.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Schema {
                field: "k".into(),
                msg: "must be at least 1".into(),
            });
        }
        let dim = self.dim();
        for (i, e) in self.entries.iter().enumerate() {
            let field = |f: &str| format!("entries[{i}].{f}");
            if !self.gates.contains(&e.gate) {
                return Err(Error::Schema {
                    field: field("gate"),
                    msg: format!("unknown gate {}", e.gate),
                });
            }
            if e.member_count == 0 {
                return Err(Error::Schema {
                    field: field("member_count"),
                    msg: "must be at least 1".into(),
                });
            }
            if Some(e.centroid.len()) != dim || e.centroid.is_empty() {
                return Err(Error::Schema {
                    field: field("centroid"),
                    msg: format!("dimension {} differs from {:?}", e.centroid.len(), dim),
                });
            }
            if e.centroid.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema {
                    field: field("centroid"),
                    msg: "non-finite value".into(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lib: PilotLibrary = serde_json::from_str(text).map_err(|e| Error::Schema {
            field: format!("line {} column {}", e.line(), e.column()),
            msg: e.to_string(),
        })?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_string(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&io::read_string(path.as_ref())?)
    }
}
