//! Brute-force dense retrieval and TREC run files.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::model::{dot, norm, EmbeddingSet, SimilarityMetric};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

struct Candidate<'a> {
    score: f64,
    doc_id: &'a str,
}

// Greater means ranked earlier: higher score, then smaller doc id.
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.doc_id.cmp(self.doc_id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// The `k` most similar corpus entries, best first. Ties are broken by
/// ascending doc id.
pub fn top_k(query: &[f32], corpus: &EmbeddingSet, k: usize, metric: SimilarityMetric) -> Result<Vec<ScoredDoc>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if query.len() != corpus.dim() {
        return Err(Error::DimMismatch {
            expected: corpus.dim(),
            actual: query.len(),
        });
    }
    let qnorm = match metric {
        SimilarityMetric::Ip => 1.0,
        SimilarityMetric::Cos => {
            let n = norm(query);
            if n == 0.0 {
                return Err(Error::ZeroVector);
            }
            n
        }
    };

    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
    for rec in corpus.records() {
        let ip = dot(query, &rec.vec);
        let score = match metric {
            SimilarityMetric::Ip => ip,
            SimilarityMetric::Cos => {
                let n = norm(&rec.vec);
                if n == 0.0 {
                    return Err(Error::ZeroVector);
                }
                ip / (qnorm * n)
            }
        };
        let cand = Candidate { score, doc_id: &rec.id };
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if cand > *worst {
                heap.pop();
                heap.push(Reverse(cand));
            }
        }
    }

    let mut best: Vec<Candidate> = heap.into_iter().map(|Reverse(c)| c).collect();
    best.sort_by(|a, b| b.cmp(a));
    Ok(best
        .into_iter()
        .enumerate()
        .map(|(i, c)| ScoredDoc {
            doc_id: c.doc_id.to_string(),
            score: c.score,
            rank: i + 1,
        })
        .collect())
}

/// Ranked document lists per query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalRun {
    pub tag: String,
    pub rankings: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RetrievalRun {
    pub fn new(tag: impl Into<String>) -> Self {
        RetrievalRun {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, ranking: Vec<ScoredDoc>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = HashSet::new();
        for d in &ranking {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::invalid(
                    "run",
                    format!("doc {} repeated for query {query_id}", d.doc_id),
                ));
            }
        }
        self.rankings.insert(query_id, ranking);
        Ok(())
    }

    pub fn to_trec(&self) -> String {
        let tag = if self.tag.is_empty() { "run" } else { &self.tag };
        let mut out = String::new();
        for (q, docs) in &self.rankings {
            for d in docs {
                out.push_str(&format!("{q} Q0 {} {} {:.6} {tag}\n", d.doc_id, d.rank, d.score));
            }
        }
        out
    }

    /// Parses `<qid> Q0 <doc> <rank> <score> <tag>` lines. Rankings are
    /// ordered by the rank column.
    pub fn parse_trec(text: &str, path: &str) -> Result<Self> {
        let mut tag = String::new();
        let mut raw: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg,
            };
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let rank: usize = f[3].parse().map_err(|_| err(format!("bad rank {:?}", f[3])))?;
            let score: f64 = f[4].parse().map_err(|_| err(format!("bad score {:?}", f[4])))?;
            if tag.is_empty() {
                tag = f[5].to_string();
            }
            raw.entry(f[0].to_string()).or_default().push(ScoredDoc {
                doc_id: f[2].to_string(),
                score,
                rank,
            });
        }
        let mut run = RetrievalRun::new(tag);
        for (q, mut docs) in raw {
            docs.sort_by_key(|d| d.rank);
            run.insert(q, docs)?;
        }
        Ok(run)
    }

    pub fn save_trec(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_string(path.as_ref(), &self.to_trec())
    }

    pub fn load_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = io::read_string(path)?;
        Self::parse_trec(&text, &path.display().to_string())
    }
}
