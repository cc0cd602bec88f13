//! Gate-count and pilot-count ablations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GateId, GateSet};
use crate::pilot::csv_err;
use crate::routers::RouterKind;

use super::experiment::Experiment;
use super::report::finish;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateCurvePoint {
    pub gate_count: usize,
    /// The prefix of the order, as given.
    pub prefix: Vec<GateId>,
    /// Macro-average nDCG@10 per router, in the configured router order.
    pub means: Vec<(RouterKind, f64)>,
}

impl GateCurvePoint {
    pub fn mean(&self, kind: RouterKind) -> Option<f64> {
        self.means.iter().find(|(k, _)| *k == kind).map(|(_, m)| *m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PilotCurvePoint {
    pub k: usize,
    pub pilot: f64,
    pub library_entries: usize,
}

/// Evaluates every prefix of `order`, rebuilding the library and routers on
/// the prefix each time.
pub fn ablate_gates(exp: &Experiment<'_>, order: &[GateId]) -> Result<Vec<GateCurvePoint>> {
    if order.is_empty() {
        return Err(Error::Empty("gate order"));
    }
    GateSet::new(order.to_vec())?;
    let mut kinds = exp.settings.routers.clone();
    if !kinds.contains(&RouterKind::Oracle) {
        kinds.push(RouterKind::Oracle);
    }
    (1..=order.len())
        .map(|n| {
            let prefix = &order[..n];
            let gates = exp.inputs.gate_set.restrict(prefix)?;
            let out = exp.evaluate_with(&gates, exp.settings.k, &kinds, false)?;
            Ok(GateCurvePoint {
                gate_count: n,
                prefix: prefix.to_vec(),
                means: kinds
                    .iter()
                    .filter_map(|&k| out.router(k).map(|r| (k, r.average)))
                    .collect(),
            })
        })
        .collect()
}

/// Pilot-router macro average per pilot count `k`.
pub fn ablate_pilots(exp: &Experiment<'_>, ks: &[usize]) -> Result<Vec<PilotCurvePoint>> {
    if ks.is_empty() {
        return Err(Error::Empty("pilot counts"));
    }
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::invalid("pilot counts", "k must be at least 1"));
            }
            let out = exp.evaluate_with(&exp.inputs.gate_set, k, &[RouterKind::Pilot], false)?;
            Ok(PilotCurvePoint {
                k,
                pilot: out.router(RouterKind::Pilot).expect("pilot row requested").average,
                library_entries: out.library.entries.len(),
            })
        })
        .collect()
}

/// `order,gate_count,gates,<router columns>`; several orders may share one
/// file, told apart by the `order` label.
pub fn ablate_gates_csv(curves: &[(String, Vec<GateCurvePoint>)]) -> Result<String> {
    let mut kinds: Vec<RouterKind> = Vec::new();
    for p in curves.iter().flat_map(|(_, c)| c) {
        for (k, _) in &p.means {
            if !kinds.contains(k) {
                kinds.push(*k);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["order".to_string(), "gate_count".into(), "gates".into()];
    header.extend(kinds.iter().map(|k| k.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (label, curve) in curves {
        for p in curve {
            let gates: Vec<&str> = p.prefix.iter().map(|g| g.as_str()).collect();
            let mut rec = vec![label.clone(), p.gate_count.to_string(), gates.join(" ")];
            rec.extend(
                kinds
                    .iter()
                    .map(|&k| p.mean(k).map(|m| m.to_string()).unwrap_or_default()),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `k,pilot,library_entries`
pub fn ablate_pilots_csv(curve: &[PilotCurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "pilot", "library_entries"]).map_err(csv_err)?;
    for p in curve {
        w.write_record([p.k.to_string(), p.pilot.to_string(), p.library_entries.to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}
