//! Query routers. Every router maps a base-encoder query embedding to one
//! gate and reports a score for each gate it considered.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_canonical, Embedding, GateId, GateSet, SimilarityMetric};

pub mod dataset;
pub mod linear;
pub mod oracle;
pub mod pilot;

pub use dataset::{build_dataset_sample_index, route_dataset, DatasetSampleIndex};
pub use linear::{
    route_expert_classifier, route_head, train_expert_classifiers, train_head_router, ExpertClassifiers,
    LinearClassifier, TrainParams,
};
pub use oracle::{best_individual, route_oracle};
pub use pilot::route_pilot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Pilot,
    Dataset,
    Head,
    Expert,
    Oracle,
    BestIndividual,
}

impl RouterKind {
    pub const ALL: [RouterKind; 6] = [
        RouterKind::Pilot,
        RouterKind::Dataset,
        RouterKind::Head,
        RouterKind::Expert,
        RouterKind::Oracle,
        RouterKind::BestIndividual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RouterKind::Pilot => "pilot",
            RouterKind::Dataset => "dataset",
            RouterKind::Head => "head",
            RouterKind::Expert => "expert",
            RouterKind::Oracle => "oracle",
            RouterKind::BestIndividual => "best_individual",
        }
    }
}

impl fmt::Display for RouterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RouterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RouterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid("router", format!("unknown router {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub query_id: String,
    /// Scores of the gates the router could choose from, canonical order.
    pub per_gate_score: Vec<(GateId, f64)>,
    pub selected: GateId,
    pub router_kind: RouterKind,
}

impl RoutingDecision {
    /// Picks the best of `scores` (canonical order, exact ties to the first).
    pub(crate) fn from_scores(
        query_id: &str,
        scores: Vec<(GateId, f64)>,
        router_kind: RouterKind,
    ) -> Result<RoutingDecision> {
        let opt: Vec<Option<f64>> = scores.iter().map(|(_, s)| Some(*s)).collect();
        let (best, _) = argmax_canonical(&opt, 0.0).ok_or(Error::Empty("gate scores"))?;
        Ok(RoutingDecision {
            query_id: query_id.to_string(),
            selected: scores[best].0.clone(),
            per_gate_score: scores,
            router_kind,
        })
    }

    pub fn score(&self, gate: &GateId) -> Option<f64> {
        self.per_gate_score.iter().find(|(g, _)| g == gate).map(|(_, s)| *s)
    }
}

/// A trained router persisted as JSON, tagged by `"router"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "router", rename_all = "snake_case")]
pub enum SavedRouter {
    Head(LinearClassifier),
    Expert(ExpertClassifiers),
    Dataset {
        metric: SimilarityMetric,
        index: DatasetSampleIndex,
    },
}

impl SavedRouter {
    pub fn kind(&self) -> RouterKind {
        match self {
            SavedRouter::Head(_) => RouterKind::Head,
            SavedRouter::Expert(_) => RouterKind::Expert,
            SavedRouter::Dataset { .. } => RouterKind::Dataset,
        }
    }

    /// Gates this router can select, canonical order.
    pub fn gates(&self) -> Result<GateSet> {
        match self {
            SavedRouter::Head(c) => GateSet::new(c.class_labels.clone()),
            SavedRouter::Expert(e) => Ok(e.gates.clone()),
            SavedRouter::Dataset { index, .. } => Ok(index.gates.clone()),
        }
    }

    pub fn route(&self, query: &Embedding) -> Result<RoutingDecision> {
        match self {
            SavedRouter::Head(c) => route_head(query, c),
            SavedRouter::Expert(e) => route_expert_classifier(query, e),
            SavedRouter::Dataset { metric, index } => route_dataset(query, index, *metric),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("router serializes");
        crate::io::write_string(path.as_ref(), &(text + "\n"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = crate::io::read_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saved_router_round_trip() {
        let clf = LinearClassifier {
            kind: linear::ClassifierKind::Multinomial,
            weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            bias: vec![0.0, 0.0],
            class_labels: vec![GateId::new("A").unwrap(), GateId::new("B").unwrap()],
            training_meta: linear::TrainingMeta {
                lr: 0.1,
                epochs: 200,
                l2: 1e-4,
                seed: 10,
                samples_per_class: 3,
            },
        };
        let saved = SavedRouter::Head(clf);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        saved.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"router\": \"head\""));
        let back = SavedRouter::load(&path).unwrap();
        assert_eq!(back, saved);
        let d = back.route(&Embedding::new("q", vec![0.0, 2.0])).unwrap();
        assert_eq!(d.selected.as_str(), "B");
        assert_eq!(back.kind(), RouterKind::Head);
    }

    #[test]
    fn kinds_round_trip_through_tokens() {
        for k in RouterKind::ALL {
            assert_eq!(k.as_str().parse::<RouterKind>().unwrap(), k);
        }
        assert!("nope".parse::<RouterKind>().is_err());
    }
}
