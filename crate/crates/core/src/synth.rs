//! Deterministic multi-domain retrieval world.
//!
//! Each domain has a unit center; centers are orthonormal. Documents are
//! noisy copies of their domain center, and every query is a noisy copy of
//! its single relevant document. The base provider perturbs queries with
//! `sigma_base`; gate `i` perturbs with `sigma_in` on its own domain and
//! `sigma_out` elsewhere. The corpus is produced once and shared by all
//! providers.
//!
//! Noise vectors are `N(0, I / dim)`, so a noise scale of `s` has expected
//! norm `s` whatever the dimension. Every vector draws from its own keyed
//! stream (seed, entity, provider), so adding domains or gates leaves the
//! existing ones bit-identical.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetEntry, DatasetManifest};
use crate::error::{Error, Result};
use crate::io::{self, EmbeddingFormat};
use crate::model::{Embedding, EmbeddingSet, GateId, GateSet, Qrels, SimilarityMetric};
use crate::rng::{gaussian_vec, keyed_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_domains: usize,
    pub dim: usize,
    pub docs_per_domain: usize,
    pub train_queries_per_domain: usize,
    pub test_queries_per_domain: usize,
    pub sigma_in: f64,
    pub sigma_base: f64,
    pub sigma_out: f64,
    pub center_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 10,
            num_domains: 4,
            dim: 64,
            docs_per_domain: 500,
            train_queries_per_domain: 200,
            test_queries_per_domain: 100,
            sigma_in: 0.1,
            sigma_base: 0.35,
            sigma_out: 0.8,
            center_spread: DEFAULT_CENTER_SPREAD,
        }
    }
}

pub const DEFAULT_CENTER_SPREAD: f64 = 0.2;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("synth config", msg));
        if self.num_domains < 1 {
            return bad("num_domains must be >= 1".into());
        }
        if self.dim < 2 {
            return bad("dim must be >= 2".into());
        }
        if self.num_domains > self.dim {
            return bad(format!(
                "num_domains ({}) cannot exceed dim ({}) with orthonormal centers",
                self.num_domains, self.dim
            ));
        }
        if !(0.0 < self.sigma_in && self.sigma_in < self.sigma_base && self.sigma_base < self.sigma_out) {
            return bad(format!(
                "need 0 < sigma_in < sigma_base < sigma_out, got {} / {} / {}",
                self.sigma_in, self.sigma_base, self.sigma_out
            ));
        }
        if !(self.center_spread.is_finite() && self.center_spread >= 0.0) {
            return bad("center_spread must be finite and non-negative".into());
        }
        if self.docs_per_domain < 1 {
            return bad("docs_per_domain must be >= 1".into());
        }
        if self.train_queries_per_domain + self.test_queries_per_domain < 1 {
            return bad("need at least one query per domain".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = io::read_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

pub fn domain_name(i: usize) -> String {
    format!("D{i}")
}

pub fn gate_name(i: usize) -> GateId {
    GateId::new(format!("G{i}")).expect("valid gate id")
}

pub fn doc_id(domain: usize, j: usize) -> String {
    format!("d{domain}_{j:05}")
}

pub fn query_id(domain: usize, j: usize) -> String {
    format!("q{domain}_{j:05}")
}

#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub gate_set: GateSet,
    pub corpus: EmbeddingSet,
    pub base_queries: EmbeddingSet,
    pub gate_queries: BTreeMap<GateId, EmbeddingSet>,
    pub qrels: Qrels,
    pub datasets: DatasetManifest,
    /// Domain centers, one per domain, orthonormal.
    pub centers: Vec<Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// `base + scale * eta` with `eta ~ N(0, I/dim)`, normalized.
fn perturb(base: &[f64], scale: f64, seed: u64, labels: &[&str]) -> Vec<f64> {
    let dim = base.len();
    let mut rng = keyed_rng(seed, labels);
    let eta = gaussian_vec(&mut rng, dim);
    let s = scale / (dim as f64).sqrt();
    let mut v: Vec<f64> = base.iter().zip(&eta).map(|(b, e)| b + s * e).collect();
    normalize(&mut v);
    v
}

/// Gram-Schmidt over seeded Gaussian rows; row `i` depends only on rows `< i`.
fn orthonormal_centers(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let mut attempt = 0u32;
        loop {
            let mut rng = keyed_rng(seed, &["center", &i.to_string(), &attempt.to_string()]);
            let mut v = gaussian_vec(&mut rng, dim);
            for c in &centers {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                centers.push(v);
                break;
            }
            attempt += 1;
        }
    }
    centers
}

pub fn generate_world(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let seed = config.seed;
    let t = config.num_domains;
    let dim = config.dim;
    let centers = orthonormal_centers(seed, t, dim);
    let gates: Vec<GateId> = (0..t).map(gate_name).collect();
    let gate_set = GateSet::new(gates.clone())?;

    let mut corpus = Vec::with_capacity(t * config.docs_per_domain);
    let mut doc_vecs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(t);
    for (d, center) in centers.iter().enumerate() {
        let mut vecs = Vec::with_capacity(config.docs_per_domain);
        for j in 0..config.docs_per_domain {
            let id = doc_id(d, j);
            let v = perturb(center, config.center_spread, seed, &["doc", &id]);
            corpus.push(Embedding::new(id, to_f32(&v)));
            vecs.push(v);
        }
        doc_vecs.push(vecs);
    }

    let per_domain = config.train_queries_per_domain + config.test_queries_per_domain;
    let mut base = Vec::with_capacity(t * per_domain);
    let mut per_gate: Vec<Vec<Embedding>> = vec![Vec::with_capacity(t * per_domain); t];
    let mut qrels = BTreeMap::new();
    let mut datasets = Vec::with_capacity(t);
    for (d, docs) in doc_vecs.iter().enumerate() {
        let mut entry = DatasetEntry {
            name: domain_name(d),
            gate: Some(gates[d].clone()),
            train: Vec::with_capacity(config.train_queries_per_domain),
            test: Vec::with_capacity(config.test_queries_per_domain),
            docs: (0..config.docs_per_domain).map(|j| doc_id(d, j)).collect(),
        };
        for j in 0..per_domain {
            let qid = query_id(d, j);
            let rel = keyed_rng(seed, &["relevant", &qid]).random_range(0..docs.len());
            let target = &docs[rel];
            qrels.insert(qid.clone(), BTreeMap::from([(doc_id(d, rel), 1u32)]));

            base.push(Embedding::new(
                qid.clone(),
                to_f32(&perturb(target, config.sigma_base, seed, &["query", &qid, "base"])),
            ));
            for (g, gate) in gates.iter().enumerate() {
                let sigma = if g == d { config.sigma_in } else { config.sigma_out };
                per_gate[g].push(Embedding::new(
                    qid.clone(),
                    to_f32(&perturb(target, sigma, seed, &["query", &qid, gate.as_str()])),
                ));
            }
            if j < config.train_queries_per_domain {
                entry.train.push(qid);
            } else {
                entry.test.push(qid);
            }
        }
        datasets.push(entry);
    }

    let metric = SimilarityMetric::Ip;
    let gate_queries = gates
        .iter()
        .zip(per_gate)
        .map(|(g, recs)| Ok((g.clone(), EmbeddingSet::new(format!("gate_{g}"), metric, dim, recs)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    Ok(SynthWorld {
        config: config.clone(),
        gate_set,
        corpus: EmbeddingSet::new("corpus", metric, dim, corpus)?,
        base_queries: EmbeddingSet::new("base", metric, dim, base)?,
        gate_queries,
        qrels: Qrels::new(qrels)?,
        datasets: DatasetManifest::new(datasets)?,
        centers,
    })
}

pub const CORPUS_FILE: &str = "corpus.emb";
pub const BASE_QUERIES_FILE: &str = "base_queries.emb";
pub const QRELS_FILE: &str = "qrels.txt";
pub const DATASETS_FILE: &str = "datasets.json";
pub const CONFIG_FILE: &str = "synth.json";

pub fn gate_queries_file(gate: &GateId) -> String {
    format!("gate_{gate}_queries.emb")
}

impl SynthWorld {
    /// Writes the standard world layout into `dir` (created if missing).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::save_embedding_set(&self.corpus, dir.join(CORPUS_FILE), EmbeddingFormat::Bin)?;
        io::save_embedding_set(&self.base_queries, dir.join(BASE_QUERIES_FILE), EmbeddingFormat::Bin)?;
        for g in &self.gate_set {
            io::save_embedding_set(
                &self.gate_queries[g],
                dir.join(gate_queries_file(g)),
                EmbeddingFormat::Bin,
            )?;
        }
        io::save_qrels(&self.qrels, dir.join(QRELS_FILE))?;
        self.datasets.save(dir.join(DATASETS_FILE))?;
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        io::write_string(&dir.join(CONFIG_FILE), &(json + "\n"))
    }
}
