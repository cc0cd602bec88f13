//! Reference routers that peek at per-query retrieval quality.

use crate::error::{Error, Result};
use crate::model::{argmax_canonical, GateId};

use super::{RouterKind, RoutingDecision};

/// Instance-level oracle: the gate with the best per-query nDCG@10.
/// `scores` must be in canonical gate order.
pub fn route_oracle(query_id: &str, scores: &[(GateId, f64)]) -> Result<RoutingDecision> {
    if scores.is_empty() {
        return Err(Error::Empty("oracle scores"));
    }
    RoutingDecision::from_scores(query_id, scores.to_vec(), RouterKind::Oracle)
}

/// Dataset-level oracle: the gate with the best dataset-mean nDCG@10.
pub fn best_individual(per_gate_dataset_means: &[(GateId, f64)]) -> Result<GateId> {
    let opt: Vec<Option<f64>> = per_gate_dataset_means.iter().map(|(_, s)| Some(*s)).collect();
    let (best, _) = argmax_canonical(&opt, 0.0).ok_or(Error::Empty("gate means"))?;
    Ok(per_gate_dataset_means[best].0.clone())
}
