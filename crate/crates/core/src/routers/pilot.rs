use crate::error::{Error, Result};
use crate::model::{similarity, Embedding};
use crate::pilot::PilotLibrary;

use super::{RouterKind, RoutingDecision};

/// Routes to the gate whose pilots have the highest mean similarity to the
/// query. Gates without pilots are not candidates.
pub fn route_pilot(query: &Embedding, library: &PilotLibrary) -> Result<RoutingDecision> {
    let dim = library.dim().ok_or(Error::Empty("pilot library"))?;
    if query.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: query.dim(),
        });
    }
    let mut sums = vec![0.0f64; library.gates.len()];
    let mut counts = vec![0usize; library.gates.len()];
    for e in &library.entries {
        let g = library
            .gates
            .position(&e.gate)
            .ok_or_else(|| Error::invalid("pilot library", format!("unknown gate {}", e.gate)))?;
        sums[g] += similarity(&query.vec, &e.centroid, library.metric)?;
        counts[g] += 1;
    }
    let scores = library
        .gates
        .iter()
        .zip(sums.iter().zip(&counts))
        .filter(|(_, (_, &n))| n > 0)
        .map(|(g, (&s, &n))| (g.clone(), s / n as f64))
        .collect();
    RoutingDecision::from_scores(&query.id, scores, RouterKind::Pilot)
}
