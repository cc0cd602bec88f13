//! Shared domain types and the similarity kernel.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a gate (expert). Non-empty and free of whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GateId(String);

impl GateId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("gate id", "empty"));
        }
        if id.chars().any(char::is_whitespace) {
            return Err(Error::invalid("gate id", format!("{id:?} contains whitespace")));
        }
        Ok(GateId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for GateId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        GateId::new(value)
    }
}

impl From<GateId> for String {
    fn from(g: GateId) -> String {
        g.0
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for GateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GateId::new(s)
    }
}

/// An ordered, duplicate-free set of gates. The order is canonical: it breaks
/// every arg-max tie and fixes column order in all outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GateId>", into = "Vec<GateId>")]
pub struct GateSet {
    gates: Vec<GateId>,
}

impl GateSet {
    pub fn new(gates: Vec<GateId>) -> Result<Self> {
        if gates.is_empty() {
            return Err(Error::Empty("gate set"));
        }
        let mut seen = HashSet::new();
        for g in &gates {
            if !seen.insert(g) {
                return Err(Error::invalid("gate set", format!("duplicate gate {g}")));
            }
        }
        Ok(GateSet { gates })
    }

    pub fn parse<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        let gates = ids
            .iter()
            .map(|s| GateId::new(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        GateSet::new(gates)
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn gates(&self) -> &[GateId] {
        &self.gates
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GateId> {
        self.gates.iter()
    }

    pub fn contains(&self, gate: &GateId) -> bool {
        self.gates.contains(gate)
    }

    /// Canonical position of `gate`, if it belongs to the set.
    pub fn position(&self, gate: &GateId) -> Option<usize> {
        self.gates.iter().position(|g| g == gate)
    }

    /// The sub-set of gates in `keep`, in canonical order.
    pub fn restrict(&self, keep: &[GateId]) -> Result<GateSet> {
        for g in keep {
            if !self.contains(g) {
                return Err(Error::invalid("gate subset", format!("unknown gate {g}")));
            }
        }
        GateSet::new(self.gates.iter().filter(|g| keep.contains(g)).cloned().collect())
    }
}

impl TryFrom<Vec<GateId>> for GateSet {
    type Error = Error;

    fn try_from(value: Vec<GateId>) -> Result<Self> {
        GateSet::new(value)
    }
}

impl From<GateSet> for Vec<GateId> {
    fn from(g: GateSet) -> Self {
        g.gates
    }
}

impl<'a> IntoIterator for &'a GateSet {
    type Item = &'a GateId;
    type IntoIter = std::slice::Iter<'a, GateId>;

    fn into_iter(self) -> Self::IntoIter {
        self.gates.iter()
    }
}

/// Arg-max over `scores` aligned with canonical gate order. The earliest
/// index wins among entries within `tol` of the maximum. `None` entries are
/// not eligible. Returns the winning index and whether it was tied.
pub fn argmax_canonical(scores: &[Option<f64>], tol: f64) -> Option<(usize, bool)> {
    let best = scores
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))?;
    let mut winners = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.filter(|s| best - s <= tol).map(|_| i));
    let first = winners.next()?;
    Some((first, winners.next().is_some()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMetric {
    /// Inner product.
    #[default]
    Ip,
    /// Cosine.
    Cos,
}

impl SimilarityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMetric::Ip => "ip",
            SimilarityMetric::Cos => "cos",
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ip" => Ok(SimilarityMetric::Ip),
            "cos" => Ok(SimilarityMetric::Cos),
            other => Err(Error::invalid("metric", format!("{other:?} (expected ip|cos)"))),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Similarity of two vectors; accumulation is done in f64.
pub fn similarity(a: &[f32], b: &[f32], metric: SimilarityMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let ip = dot(a, b);
    match metric {
        SimilarityMetric::Ip => Ok(ip),
        SimilarityMetric::Cos => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(ip / (na * nb))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub vec: Vec<f32>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, vec: Vec<f32>) -> Self {
        Embedding { id: id.into(), vec }
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub count: usize,
    pub provider: String,
    pub metric_hint: SimilarityMetric,
}

/// An id-indexed collection of equal-dimension vectors.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    manifest: Manifest,
    records: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.records == other.records
    }
}

impl EmbeddingSet {
    /// Validates dims, finiteness and id uniqueness.
    pub fn new(
        provider: impl Into<String>,
        metric_hint: SimilarityMetric,
        dim: usize,
        records: Vec<Embedding>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vec.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.vec.len(),
                });
            }
            if r.vec.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("embedding", format!("non-finite value in {}", r.id)));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::invalid("embedding set", format!("duplicate id {}", r.id)));
            }
        }
        Ok(EmbeddingSet {
            manifest: Manifest {
                dim,
                count: records.len(),
                provider: provider.into(),
                metric_hint,
            },
            records,
            index,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn provider(&self) -> &str {
        &self.manifest.provider
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Embedding] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.records[i].vec.as_slice())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// A new set holding only the records whose id satisfies `keep`, in order.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> EmbeddingSet {
        let records: Vec<Embedding> = self.records.iter().filter(|r| keep(&r.id)).cloned().collect();
        let index = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        EmbeddingSet {
            manifest: Manifest {
                count: records.len(),
                ..self.manifest.clone()
            },
            records,
            index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub source_dataset: String,
}

/// Relevance judgments: query id to (doc id to graded relevance).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    /// Every query present must have at least one doc with relevance > 0.
    pub fn new(judgments: BTreeMap<String, BTreeMap<String, u32>>) -> Result<Self> {
        for (q, docs) in &judgments {
            if !docs.values().any(|&r| r > 0) {
                return Err(Error::invalid("qrels", format!("query {q} has no relevant doc")));
            }
        }
        Ok(Qrels { judgments })
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn contains(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u32>)> {
        self.judgments.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        let ip = SimilarityMetric::Ip;
        let cos = SimilarityMetric::Cos;
        assert_eq!(similarity(&[1.0, 0.0], &[1.0, 0.0], ip).unwrap(), 1.0);
        assert_eq!(similarity(&[1.0, 2.0], &[3.0, 4.0], ip).unwrap(), 11.0);
        assert_eq!(similarity(&[2.0, 0.0], &[1.0, 0.0], cos).unwrap(), 1.0);
    }

    #[test]
    fn similarity_errors() {
        assert!(matches!(
            similarity(&[1.0], &[1.0, 2.0], SimilarityMetric::Ip),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            similarity(&[0.0, 0.0], &[1.0, 2.0], SimilarityMetric::Cos),
            Err(Error::ZeroVector)
        ));
        // inner product tolerates zero vectors
        assert_eq!(similarity(&[0.0, 0.0], &[1.0, 2.0], SimilarityMetric::Ip).unwrap(), 0.0);
    }

    #[test]
    fn gate_id_rules() {
        assert!(GateId::new("AR").is_ok());
        assert!(GateId::new("").is_err());
        assert!(GateId::new("A R").is_err());
        assert!(GateSet::parse(&["A", "B", "A"]).is_err());
        assert!(GateSet::parse::<&str>(&[]).is_err());
        let gs = GateSet::parse(&["A", "B", "C"]).unwrap();
        let sub = gs
            .restrict(&[GateId::new("C").unwrap(), GateId::new("A").unwrap()])
            .unwrap();
        assert_eq!(sub.gates()[0].as_str(), "A");
        assert_eq!(gs.position(&GateId::new("C").unwrap()), Some(2));
    }

    #[test]
    fn argmax_prefers_first_within_tolerance() {
        assert_eq!(argmax_canonical(&[Some(0.5), Some(0.9)], 1e-9), Some((1, false)));
        assert_eq!(argmax_canonical(&[Some(0.9), Some(0.9)], 1e-9), Some((0, true)));
        assert_eq!(argmax_canonical(&[None, Some(0.1)], 1e-9), Some((1, false)));
        assert_eq!(argmax_canonical(&[None, None], 1e-9), None);
        assert_eq!(argmax_canonical(&[Some(1.0 - 1e-12), Some(1.0)], 1e-9), Some((0, true)));
    }

    #[test]
    fn embedding_set_invariants() {
        let ok = EmbeddingSet::new(
            "p",
            SimilarityMetric::Ip,
            2,
            vec![Embedding::new("a", vec![1.0, 0.0]), Embedding::new("b", vec![0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(ok.get("b"), Some(&[0.0f32, 1.0][..]));
        assert_eq!(ok.manifest().count, 2);
        let dup = EmbeddingSet::new(
            "p",
            SimilarityMetric::Ip,
            1,
            vec![Embedding::new("a", vec![1.0]), Embedding::new("a", vec![2.0])],
        );
        assert!(dup.is_err());
        let nan = EmbeddingSet::new("p", SimilarityMetric::Ip, 1, vec![Embedding::new("a", vec![f32::NAN])]);
        assert!(nan.is_err());
        let filtered = ok.filter(|id| id == "b");
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered.get("b").unwrap(), &[0.0, 1.0]);
        assert!(filtered.get("a").is_none());
    }

    #[test]
    fn qrels_require_a_relevant_doc() {
        let mut m = BTreeMap::new();
        m.insert("q".to_string(), BTreeMap::from([("d".to_string(), 0u32)]));
        assert!(Qrels::new(m).is_err());
    }
}
