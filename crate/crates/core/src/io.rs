//! Embedding-set and qrels file formats.
//!
//! Two embedding encodings are supported and detected by content:
//!
//! * JSONL: one `{"id": "...", "vec": [...]}` object per line.
//! * Binary: magic `EMB1`, `u32` LE dim, `u64` LE count, then per record a
//!   `u16` LE id length, the UTF-8 id bytes and `dim` little-endian `f32`s.
//!
//! Both are accompanied by a sidecar `<path>.manifest.json` carrying
//! `{dim, count, provider, metric_hint}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Embedding, EmbeddingSet, Manifest, Qrels, SimilarityMetric};

pub const BIN_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Jsonl,
    Bin,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(EmbeddingFormat::Jsonl),
            "bin" => Ok(EmbeddingFormat::Bin),
            other => Err(Error::invalid("format", format!("{other:?} (expected jsonl|bin)"))),
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    vec: Vec<f32>,
}

pub fn load_embedding_set(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();

    let sidecar = manifest_path(path);
    let manifest: Option<Manifest> = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: sidecar.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };

    let (dim, records) = if bytes.starts_with(BIN_MAGIC) {
        decode_bin(&bytes, &display)?
    } else {
        decode_jsonl(&bytes, &display, manifest.as_ref().map(|m| m.dim))?
    };

    let (provider, metric_hint) = match &manifest {
        Some(m) => {
            if m.dim != dim && !records.is_empty() {
                return Err(Error::DimMismatch {
                    expected: m.dim,
                    actual: dim,
                });
            }
            if m.count != records.len() {
                return Err(Error::invalid(
                    "manifest",
                    format!("{}: count {} but file holds {}", display, m.count, records.len()),
                ));
            }
            (m.provider.clone(), m.metric_hint)
        }
        None => (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            SimilarityMetric::Ip,
        ),
    };
    let dim = manifest.as_ref().map_or(dim, |m| m.dim);
    EmbeddingSet::new(provider, metric_hint, dim, records)
}

fn decode_jsonl(bytes: &[u8], path: &str, dim_hint: Option<usize>) -> Result<(usize, Vec<Embedding>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let mut dim = dim_hint;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        match dim {
            None => dim = Some(rec.vec.len()),
            Some(d) if d != rec.vec.len() => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno,
                    msg: format!("record {} has dim {} (expected {d})", rec.id, rec.vec.len()),
                })
            }
            _ => {}
        }
        records.push(Embedding::new(rec.id, rec.vec));
    }
    Ok((dim.unwrap_or(0), records))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, record: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                path: self.path.to_string(),
                line: record,
                msg: "truncated binary record".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

// `line` in binary parse errors is the 1-based record number (0 for the header).
fn decode_bin(bytes: &[u8], path: &str) -> Result<(usize, Vec<Embedding>)> {
    let mut r = Reader {
        buf: bytes,
        pos: 4,
        path,
    };
    let dim = u32::from_le_bytes(r.take(4, 0)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(r.take(8, 0)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for rec in 1..=count {
        let id_len = u16::from_le_bytes(r.take(2, rec)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(r.take(id_len, rec)?)
            .map_err(|e| Error::Parse {
                path: path.to_string(),
                line: rec,
                msg: e.to_string(),
            })?
            .to_string();
        let raw = r.take(4 * dim, rec)?;
        let vec = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Embedding::new(id, vec));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: count + 1,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok((dim, records))
}

pub fn encode_bin(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let dim = set.dim();
    let mut out = Vec::with_capacity(16 + set.len() * (2 + 16 + 4 * dim));
    out.extend_from_slice(BIN_MAGIC);
    let dim32 = u32::try_from(dim).map_err(|_| Error::invalid("embedding set", "dim exceeds u32"))?;
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for r in set.records() {
        let id = r.id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::invalid("embedding id", format!("{} longer than 65535 bytes", r.id)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for x in &r.vec {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_embedding_set(set: &EmbeddingSet, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        EmbeddingFormat::Bin => {
            let bytes = encode_bin(set)?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        }
        EmbeddingFormat::Jsonl => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            for r in set.records() {
                let line = serde_json::to_string(&JsonRecord {
                    id: r.id.clone(),
                    vec: r.vec.clone(),
                })
                .expect("record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    let sidecar = manifest_path(path);
    let json = serde_json::to_string_pretty(set.manifest()).expect("manifest serializes");
    fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))
}

pub fn parse_qrels(text: &str, path: &str) -> Result<Qrels> {
    let mut map: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let rel: u32 = fields[3]
            .parse()
            .map_err(|_| err(format!("bad relevance {:?}", fields[3])))?;
        map.entry(fields[0].to_string())
            .or_default()
            .insert(fields[2].to_string(), rel);
    }
    Qrels::new(map)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, &path.display().to_string())
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in qrels.iter() {
        for (d, rel) in docs {
            out.push_str(&format!("{q} 0 {d} {rel}\n"));
        }
    }
    out
}

pub fn save_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_qrels(qrels)).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingSet {
        EmbeddingSet::new(
            "base",
            SimilarityMetric::Ip,
            3,
            vec![
                Embedding::new("a", vec![0.1, -2.5, 3.0e-7]),
                Embedding::new("b", vec![1.0 / 3.0, f32::MAX, f32::MIN_POSITIVE]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        save_embedding_set(&sample(), &p, EmbeddingFormat::Jsonl).unwrap();
        let back = load_embedding_set(&p).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.manifest().dim, 3);
        assert_eq!(back.manifest().count, 2);
    }

    #[test]
    fn jsonl_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "{\"id\":\"x\",\"vec\":[1,2,3]}\n{\"id\":\"y\",\"vec\":[4,5,6]}\n").unwrap();
        let set = load_embedding_set(&p).unwrap();
        assert_eq!(set.dim(), 3);
        assert_eq!(set.len(), 2);
        assert_eq!(set.provider(), "e");
    }

    #[test]
    fn jsonl_dim_violation_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "{\"id\":\"x\",\"vec\":[1,2,3]}\n{\"id\":\"y\",\"vec\":[4,5,6,7]}\n").unwrap();
        match load_embedding_set(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "{\"id\":\"x\",\"vec\":[1,2,3]}\nnot json\n").unwrap();
        match load_embedding_set(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bin_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        save_embedding_set(&sample(), &p, EmbeddingFormat::Bin).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        let back = load_embedding_set(&p).unwrap();
        for (x, y) in back.records().iter().zip(sample().records()) {
            let xb: Vec<u32> = x.vec.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.vec.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let empty = EmbeddingSet::new("p", SimilarityMetric::Ip, 4, vec![]).unwrap();
        for (name, fmt) in [("e.emb", EmbeddingFormat::Bin), ("e.jsonl", EmbeddingFormat::Jsonl)] {
            let p = dir.path().join(name);
            save_embedding_set(&empty, &p, fmt).unwrap();
            let back = load_embedding_set(&p).unwrap();
            assert_eq!(back.manifest().count, 0);
            assert_eq!(back.dim(), 4);
        }
    }

    #[test]
    fn truncated_bin_is_rejected() {
        let bytes = encode_bin(&sample()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.emb");
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_embedding_set(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = save_embedding_set(&sample(), "/nonexistent-dir/x.emb", EmbeddingFormat::Bin).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn qrels_parse_and_format() {
        let q = parse_qrels("q1 0 d1 1\nq1 0 d2 0\n\nq2 0 d3 2\n", "mem").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.get("q1").unwrap()["d2"], 0);
        let again = parse_qrels(&format_qrels(&q), "mem").unwrap();
        assert_eq!(q, again);
        assert!(parse_qrels("q1 0 d1\n", "mem").is_err());
        assert!(parse_qrels("q1 0 d1 x\n", "mem").is_err());
    }

    proptest! {
        #[test]
        fn bin_load_save_identity(
            vecs in proptest::collection::vec(proptest::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 5), 0..20)
        ) {
            let recs = vecs.into_iter().enumerate().map(|(i, v)| Embedding::new(format!("id{i}"), v)).collect();
            let set = EmbeddingSet::new("p", SimilarityMetric::Cos, 5, recs).unwrap();
            let dir = tempfile::tempdir().unwrap();
            for (name, fmt) in [("x.emb", EmbeddingFormat::Bin), ("x.jsonl", EmbeddingFormat::Jsonl)] {
                let p = dir.path().join(name);
                save_embedding_set(&set, &p, fmt).unwrap();
                let back = load_embedding_set(&p).unwrap();
                prop_assert_eq!(&back, &set);
            }
        }
    }
}
