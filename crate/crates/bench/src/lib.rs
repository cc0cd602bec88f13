//! Seeded fixtures for the benchmarks.

use pilotroute::pilot::{PilotEntry, PilotLibrary};
use pilotroute::rng::{gaussian_vec, keyed_rng};
use pilotroute::{Embedding, EmbeddingSet, GateSet, SimilarityMetric};

pub fn random_vec(seed: u64, label: &str, dim: usize) -> Vec<f32> {
    gaussian_vec(&mut keyed_rng(seed, &["bench", label]), dim)
        .into_iter()
        .map(|x| x as f32)
        .collect()
}

pub fn random_set(seed: u64, n: usize, dim: usize) -> EmbeddingSet {
    let recs = (0..n)
        .map(|i| {
            let id = format!("d{i:07}");
            let v = random_vec(seed, &id, dim);
            Embedding::new(id, v)
        })
        .collect();
    EmbeddingSet::new("bench", SimilarityMetric::Ip, dim, recs).expect("valid fixture")
}

/// `t` gates with `t` entries each, as a k=1 library over `t` datasets.
pub fn random_library(seed: u64, t: usize, dim: usize, metric: SimilarityMetric) -> PilotLibrary {
    let names: Vec<String> = (0..t).map(|i| format!("G{i}")).collect();
    let gates = GateSet::parse(&names).expect("valid gates");
    let entries = (0..t * t)
        .map(|i| PilotEntry {
            gate: gates.gates()[i % t].clone(),
            source_dataset: format!("D{}", i / t),
            member_count: 1,
            centroid: random_vec(seed, &format!("pilot{i}"), dim),
        })
        .collect();
    PilotLibrary {
        gates,
        metric,
        k: 1,
        seed,
        entries,
    }
}
