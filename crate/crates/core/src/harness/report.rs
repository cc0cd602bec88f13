//! CSV and JSON artifacts for experiment outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::GateSet;
use crate::pilot::{assignments_csv, csv_err};
use crate::rng::derive_seed;
use crate::routers::RoutingDecision;

use super::config::ExperimentSettings;
use super::experiment::{ExperimentOutput, RowKind};

pub const RESULTS_FILE: &str = "results.csv";
pub const ROUTES_FILE: &str = "routes.csv";
pub const SELECTION_FILE: &str = "selection_matrix.csv";
pub const MAX_GATE_FILE: &str = "max_gate_matrix.csv";
pub const PILOTS_FILE: &str = "pilots.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const ABLATE_GATES_FILE: &str = "ablate_gates.csv";
pub const ABLATE_PILOTS_FILE: &str = "ablate_pilots.csv";

/// Seed purposes expanded from the top-level seed.
pub const SEED_PURPOSES: [&str; 3] = ["dataset-router", "head-router", "expert-router"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of settings, gates and k.
    pub config_hash: String,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub gates: GateSet,
    pub k: usize,
}

impl Provenance {
    pub fn new(settings: &ExperimentSettings, gates: &GateSet, k: usize) -> Self {
        let canonical = serde_json::json!({ "settings": settings, "gates": gates, "k": k });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        Provenance {
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: settings.seed,
            derived_seeds: SEED_PURPOSES
                .iter()
                .map(|p| (p.to_string(), derive_seed(settings.seed, &[p])))
                .collect(),
            gates: gates.clone(),
            k,
        }
    }
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("csv", e.to_string()))
}

/// `router,<datasets>,average`
pub fn results_csv(out: &ExperimentOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["router".to_string()];
    header.extend(out.datasets.iter().cloned());
    header.push("average".into());
    w.write_record(&header).map_err(csv_err)?;
    for row in &out.rows {
        let mut rec = vec![row.kind.name()];
        rec.extend(row.dataset_means.iter().map(|(_, m)| m.to_string()));
        rec.push(row.average.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

/// `query_id,router,selected_gate,<score per gate>`. Baseline rows carry the
/// provider name in `selected_gate` and no gate scores; gates a router did
/// not score are left blank.
pub fn routes_csv(out: &ExperimentOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["query_id".to_string(), "router".into(), "selected_gate".into()];
    header.extend(out.gate_set.iter().map(|g| g.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for row in &out.rows {
        let name = row.kind.name();
        for r in &row.routes {
            let selected = match (&r.selected, &row.kind) {
                (Some(g), _) => g.to_string(),
                (None, RowKind::Baseline(b)) => b.clone(),
                (None, RowKind::Router(_)) => String::new(),
            };
            let mut rec = vec![r.query_id.clone(), name.clone(), selected];
            rec.extend(out.gate_set.iter().map(|g| {
                r.per_gate_score
                    .iter()
                    .find(|(h, _)| h == g)
                    .map(|(_, s)| s.to_string())
                    .unwrap_or_default()
            }));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `router,dataset,<gates>`
pub fn selection_csv(out: &ExperimentOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["router".to_string(), "dataset".into()];
    header.extend(out.gate_set.iter().map(|g| g.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for m in &out.selection {
        for (ds, rates) in &m.rows {
            let mut rec = vec![m.router.to_string(), ds.clone()];
            rec.extend(rates.iter().map(|r| r.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `dataset,<gates>,ties,untied`
pub fn max_gate_csv(out: &ExperimentOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset".to_string()];
    header.extend(out.max_gate.gates.iter().map(|g| g.to_string()));
    header.push("ties".into());
    header.push("untied".into());
    w.write_record(&header).map_err(csv_err)?;
    for row in &out.max_gate.rows {
        let mut rec = vec![row.dataset.clone()];
        rec.extend(row.rates.iter().map(|r| r.to_string()));
        rec.push(row.ties.to_string());
        rec.push(row.untied.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes every artifact of `out` into `dir`, creating it if needed.
pub fn write_outputs(out: &ExperimentOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir, RESULTS_FILE, &results_csv(out)?)?;
    write_file(dir, ROUTES_FILE, &routes_csv(out)?)?;
    write_file(dir, SELECTION_FILE, &selection_csv(out)?)?;
    write_file(dir, MAX_GATE_FILE, &max_gate_csv(out)?)?;
    write_file(dir, PILOTS_FILE, &out.library.to_json())?;
    write_file(
        dir,
        ASSIGNMENTS_FILE,
        &assignments_csv(&out.assignments, &out.gate_set)?,
    )?;
    let prov = serde_json::to_string_pretty(&out.provenance).expect("provenance serializes");
    write_file(dir, PROVENANCE_FILE, &(prov + "\n"))
}

/// `routes.csv` rows for standalone routing decisions (no evaluation).
pub fn decisions_csv(decisions: &[RoutingDecision], gates: &GateSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["query_id".to_string(), "router".into(), "selected_gate".into()];
    header.extend(gates.iter().map(|g| g.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for d in decisions {
        let mut rec = vec![d.query_id.clone(), d.router_kind.to_string(), d.selected.to_string()];
        rec.extend(
            gates
                .iter()
                .map(|g| d.score(g).map(|s| s.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteRow {
    pub query_id: String,
    pub router: String,
    pub selected_gate: String,
}

/// The first three columns of a `routes.csv` file.
pub fn load_routes(path: impl AsRef<Path>) -> Result<Vec<RouteRow>> {
    let path = path.as_ref();
    let text = crate::io::read_string(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        if rec.len() < 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                msg: "expected query_id,router,selected_gate".into(),
            });
        }
        rows.push(RouteRow {
            query_id: rec[0].to_string(),
            router: rec[1].to_string(),
            selected_gate: rec[2].to_string(),
        });
    }
    Ok(rows)
}
