//! End-to-end experiment: build the pilot library, train baseline routers,
//! route every test query, retrieve with the selected gate and score.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::Split;
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, per_instance_performance, DEFAULT_K};
use crate::model::{argmax_canonical, Embedding, EmbeddingSet, GateId, GateSet, Qrels, QueryRecord, SimilarityMetric};
use crate::pilot::{
    assign_max_gates, build_pilot_library, LibraryOptions, MaxGateAssignment, PilotLibrary, ScopedCorpus, TIE_TOLERANCE,
};
use crate::retrieval::top_k;
use crate::rng::derive_seed;
use crate::routers::{
    best_individual, build_dataset_sample_index, route_dataset, route_expert_classifier, route_head, route_oracle,
    route_pilot, train_expert_classifiers, train_head_router, DatasetSampleIndex, ExpertClassifiers, LinearClassifier,
    RouterKind, RoutingDecision, TrainParams,
};

use super::config::{ExperimentInputs, ExperimentSettings};
use super::report::Provenance;

/// A row of the results table.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum RowKind {
    Router(RouterKind),
    /// Fixed single-provider run (e.g. the base encoder alone).
    Baseline(String),
}

impl RowKind {
    pub fn name(&self) -> String {
        match self {
            RowKind::Router(r) => r.as_str().to_string(),
            RowKind::Baseline(b) => b.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoutedQuery {
    pub query_id: String,
    pub dataset: String,
    /// Selected gate; `None` for baseline rows.
    pub selected: Option<GateId>,
    pub per_gate_score: Vec<(GateId, f64)>,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowResult {
    pub kind: RowKind,
    pub routes: Vec<RoutedQuery>,
    /// Mean nDCG@10 per dataset, in manifest order.
    pub dataset_means: Vec<(String, f64)>,
    /// Macro average over datasets.
    pub average: f64,
}

impl RowResult {
    pub fn dataset_mean(&self, dataset: &str) -> Option<f64> {
        self.dataset_means.iter().find(|(d, _)| d == dataset).map(|(_, m)| *m)
    }
}

/// Per dataset, the rate at which each gate is selected.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionMatrix {
    pub router: RouterKind,
    pub gates: GateSet,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Per dataset, the rate at which each gate is the (untied) best gate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaxGateMatrix {
    pub gates: GateSet,
    pub rows: Vec<MaxGateRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaxGateRow {
    pub dataset: String,
    pub rates: Vec<f64>,
    pub untied: usize,
    pub ties: usize,
}

/// Encoder-pass accounting for routed queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub routed_queries: usize,
    /// Base-encoder embeddings consumed by routing.
    pub base_passes: usize,
    /// Selected-gate embeddings consumed by retrieval.
    pub expert_passes: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub gate_set: GateSet,
    pub datasets: Vec<String>,
    pub assignments: Vec<MaxGateAssignment>,
    pub library: PilotLibrary,
    pub rows: Vec<RowResult>,
    pub selection: Vec<SelectionMatrix>,
    pub max_gate: MaxGateMatrix,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

impl ExperimentOutput {
    pub fn row(&self, kind: &RowKind) -> Option<&RowResult> {
        self.rows.iter().find(|r| &r.kind == kind)
    }

    pub fn router(&self, kind: RouterKind) -> Option<&RowResult> {
        self.row(&RowKind::Router(kind))
    }
}

/// Head or expert router, or a constant fallback when fewer than two labels
/// were available to train on.
#[derive(Clone, Debug)]
pub enum ClassifierRouter<T> {
    Trained(T),
    Constant(GateId),
}

impl<T> ClassifierRouter<T> {
    /// The trained model, or `None` for the constant fallback.
    pub fn trained(self) -> Option<T> {
        match self {
            ClassifierRouter::Trained(m) => Some(m),
            ClassifierRouter::Constant(_) => None,
        }
    }

    fn route(
        &self,
        query: &Embedding,
        kind: RouterKind,
        trained: impl Fn(&Embedding, &T) -> Result<RoutingDecision>,
    ) -> Result<RoutingDecision> {
        match self {
            ClassifierRouter::Trained(m) => trained(query, m),
            ClassifierRouter::Constant(g) => RoutingDecision::from_scores(&query.id, vec![(g.clone(), 1.0)], kind),
        }
    }
}

/// Trained routers for one gate set.
pub struct TrainedRouters {
    pub library: PilotLibrary,
    pub dataset_index: Option<DatasetSampleIndex>,
    pub head: ClassifierRouter<LinearClassifier>,
    pub expert: ClassifierRouter<ExpertClassifiers>,
}

/// Precomputed state shared by every gate subset and pilot count:
/// per-instance scores of every configured gate on train and test queries.
pub struct Experiment<'a> {
    pub inputs: &'a ExperimentInputs,
    pub settings: ExperimentSettings,
    train: Vec<QueryRecord>,
    test: Vec<QueryRecord>,
    /// Training-instance scores under all configured gates.
    train_scores: Vec<MaxGateAssignment>,
    /// `test_scores[q][g]`: nDCG@10 of gate `g` (canonical index) on test query `q`
    /// against the shared corpus.
    test_scores: Vec<Vec<f64>>,
}

fn restrict(a: &MaxGateAssignment, gates: &GateSet) -> MaxGateAssignment {
    let scores: Vec<(GateId, f64)> = gates
        .iter()
        .map(|g| (g.clone(), a.score(g).expect("assignment covers all configured gates")))
        .collect();
    let opt: Vec<Option<f64>> = scores.iter().map(|(_, s)| Some(*s)).collect();
    let (best, tied) = argmax_canonical(&opt, TIE_TOLERANCE).expect("non-empty gate set");
    MaxGateAssignment {
        query_id: a.query_id.clone(),
        source_dataset: a.source_dataset.clone(),
        max_gate: scores[best].0.clone(),
        per_gate_scores: scores,
        tied,
    }
}

impl<'a> Experiment<'a> {
    pub fn new(inputs: &'a ExperimentInputs, settings: ExperimentSettings) -> Result<Self> {
        settings.validate()?;
        let train = inputs.datasets.records(Split::Train);
        let test = inputs.datasets.records(Split::Test);
        if test.is_empty() {
            return Err(Error::Empty("test split"));
        }
        for rec in train.iter().chain(&test) {
            if !inputs.base_queries.contains(&rec.query_id) {
                return Err(Error::missing("base embedding", &rec.query_id));
            }
        }
        let scoped = ScopedCorpus::new(&inputs.corpus, &inputs.datasets, settings.corpus_scope);
        let train_scores = if train.is_empty() {
            Vec::new()
        } else {
            assign_max_gates(
                &train,
                &inputs.gate_set,
                &inputs.gate_queries,
                &scoped,
                &inputs.qrels,
                settings.metric,
            )?
        };
        let providers: Vec<_> = inputs.gate_set.iter().map(|g| (g, &inputs.gate_queries[g])).collect();
        let test_scores = test
            .par_iter()
            .map(|rec| {
                providers
                    .iter()
                    .map(|(g, embs)| {
                        Ok(
                            per_instance_performance(rec, g, embs, &inputs.corpus, &inputs.qrels, settings.metric)?
                                .score,
                        )
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Experiment {
            inputs,
            settings,
            train,
            test,
            train_scores,
            test_scores,
        })
    }

    pub fn test_queries(&self) -> &[QueryRecord] {
        &self.test
    }

    pub fn train_queries(&self) -> &[QueryRecord] {
        &self.train
    }

    /// Datasets whose training instances feed routers for `gates`: those
    /// trained for a gate in the subset, plus datasets with no gate.
    fn dataset_included(&self, dataset: &str, gates: &GateSet) -> bool {
        match self.inputs.datasets.get(dataset).and_then(|d| d.gate.as_ref()) {
            Some(g) => gates.contains(g),
            None => true,
        }
    }

    /// `g_max` assignments over `gates` for the included training datasets.
    pub fn assignments(&self, gates: &GateSet) -> Vec<MaxGateAssignment> {
        self.train_scores
            .iter()
            .filter(|a| self.dataset_included(&a.source_dataset, gates))
            .map(|a| restrict(a, gates))
            .collect()
    }

    pub fn library(&self, gates: &GateSet, k: usize) -> Result<PilotLibrary> {
        let assignments = self.assignments(gates);
        if assignments.is_empty() {
            return Err(Error::Empty("training set"));
        }
        build_pilot_library(
            &assignments,
            &self.inputs.base_queries,
            gates,
            LibraryOptions {
                k,
                seed: self.settings.seed,
                metric: self.settings.metric,
                exclude_tied: self.settings.exclude_tied,
            },
        )
    }

    fn train_params(&self, purpose: &str) -> TrainParams {
        TrainParams {
            lr: self.settings.train.lr,
            epochs: self.settings.train.epochs,
            l2: self.settings.train.l2,
            seed: derive_seed(self.settings.seed, &[purpose]),
        }
    }

    /// Untied training instances as (base embedding, g_max) pairs.
    fn classifier_data<'s>(&'s self, assignments: &'s [MaxGateAssignment]) -> (Vec<&'s [f32]>, Vec<GateId>) {
        assignments
            .iter()
            .filter(|a| !a.tied)
            .map(|a| {
                (
                    self.inputs
                        .base_queries
                        .get(&a.query_id)
                        .expect("checked at construction"),
                    a.max_gate.clone(),
                )
            })
            .unzip()
    }

    pub fn train_routers(&self, gates: &GateSet, k: usize, routers: &[RouterKind]) -> Result<TrainedRouters> {
        let assignments = self.assignments(gates);
        let library = self.library(gates, k)?;
        let wants = |r: RouterKind| routers.contains(&r);

        let dataset_index = if wants(RouterKind::Dataset) {
            let dataset_to_gate: BTreeMap<String, GateId> = self
                .inputs
                .datasets
                .dataset_gates()
                .into_iter()
                .filter(|(_, g)| gates.contains(g))
                .collect();
            let train: Vec<QueryRecord> = self
                .train
                .iter()
                .filter(|r| dataset_to_gate.contains_key(&r.source_dataset))
                .cloned()
                .collect();
            if dataset_to_gate.is_empty() {
                log::warn!(
                    "no dataset declares a gate in {:?}; dataset router disabled",
                    gates.gates()
                );
                None
            } else {
                Some(build_dataset_sample_index(
                    &train,
                    &self.inputs.base_queries,
                    &dataset_to_gate,
                    gates,
                    self.settings.dataset_router_samples,
                    derive_seed(self.settings.seed, &["dataset-router"]),
                )?)
            }
        } else {
            None
        };

        let (features, labels) = self.classifier_data(&assignments);
        let distinct = {
            let mut l = labels.clone();
            l.sort();
            l.dedup();
            l
        };
        let fallback = || distinct.first().cloned().unwrap_or_else(|| gates.gates()[0].clone());
        let head = if wants(RouterKind::Head) && distinct.len() >= 2 {
            ClassifierRouter::Trained(train_head_router(
                &features,
                &labels,
                gates,
                &self.train_params("head-router"),
            )?)
        } else {
            ClassifierRouter::Constant(fallback())
        };
        let expert = if wants(RouterKind::Expert) && distinct.len() >= 2 {
            ClassifierRouter::Trained(train_expert_classifiers(
                &features,
                &labels,
                gates,
                &self.train_params("expert-router"),
            )?)
        } else {
            ClassifierRouter::Constant(fallback())
        };
        Ok(TrainedRouters {
            library,
            dataset_index,
            head,
            expert,
        })
    }

    /// Full evaluation restricted to `gates` (a subset of the configured
    /// gates) with `k` pilots per group.
    pub fn evaluate(&self, gates: &GateSet, k: usize) -> Result<ExperimentOutput> {
        self.evaluate_with(gates, k, &self.settings.routers, true)
    }

    /// Like [`Experiment::evaluate`] but only for `kinds`, optionally skipping
    /// the single-provider baseline rows.
    pub fn evaluate_with(
        &self,
        gates: &GateSet,
        k: usize,
        kinds: &[RouterKind],
        baselines: bool,
    ) -> Result<ExperimentOutput> {
        let all = &self.inputs.gate_set;
        let idx: Vec<usize> = gates
            .iter()
            .map(|g| {
                all.position(g)
                    .ok_or_else(|| Error::invalid("gate subset", format!("unknown gate {g}")))
            })
            .collect::<Result<_>>()?;
        // keep canonical order of the configured set
        let gates = all.restrict(gates.gates())?;
        let idx: Vec<usize> = {
            let mut v = idx;
            v.sort_unstable();
            v
        };
        let routers = self.train_routers(&gates, k, kinds)?;
        let datasets: Vec<String> = {
            let mut seen: Vec<String> = Vec::new();
            for r in &self.test {
                if !seen.contains(&r.source_dataset) {
                    seen.push(r.source_dataset.clone());
                }
            }
            seen
        };

        let score_of = |q: usize, g: &GateId| -> f64 {
            self.test_scores[q][all.position(g).expect("selected gate is configured")]
        };
        let oracle_row = |q: usize| -> Vec<(GateId, f64)> {
            gates
                .iter()
                .zip(&idx)
                .map(|(g, &i)| (g.clone(), self.test_scores[q][i]))
                .collect()
        };

        // dataset-level gate means over the subset, for Best Individual
        let mut dataset_gate_means: BTreeMap<&str, Vec<(GateId, f64)>> = BTreeMap::new();
        for ds in &datasets {
            let members: Vec<usize> = (0..self.test.len())
                .filter(|&q| &self.test[q].source_dataset == ds)
                .collect();
            let means = gates
                .iter()
                .zip(&idx)
                .map(|(g, &i)| {
                    let s: f64 = members.iter().map(|&q| self.test_scores[q][i]).sum();
                    (g.clone(), s / members.len() as f64)
                })
                .collect();
            dataset_gate_means.insert(ds, means);
        }

        let mut rows = Vec::new();
        let mut diagnostics = Diagnostics::default();
        for &kind in kinds {
            if kind == RouterKind::Dataset && routers.dataset_index.is_none() {
                continue;
            }
            let decisions: Vec<RoutingDecision> = self
                .test
                .par_iter()
                .enumerate()
                .map(|(q, rec)| {
                    let base = Embedding::new(
                        rec.query_id.clone(),
                        self.inputs.base_queries.get(&rec.query_id).expect("checked").to_vec(),
                    );
                    match kind {
                        RouterKind::Pilot => route_pilot(&base, &routers.library),
                        RouterKind::Dataset => route_dataset(
                            &base,
                            routers.dataset_index.as_ref().expect("checked above"),
                            self.settings.metric,
                        ),
                        RouterKind::Head => routers.head.route(&base, kind, route_head),
                        RouterKind::Expert => routers.expert.route(&base, kind, route_expert_classifier),
                        RouterKind::Oracle => route_oracle(&rec.query_id, &oracle_row(q)),
                        RouterKind::BestIndividual => {
                            let means = &dataset_gate_means[rec.source_dataset.as_str()];
                            let g = best_individual(means)?;
                            Ok(RoutingDecision {
                                query_id: rec.query_id.clone(),
                                per_gate_score: means.clone(),
                                selected: g,
                                router_kind: RouterKind::BestIndividual,
                            })
                        }
                    }
                })
                .collect::<Result<_>>()?;
            let routes: Vec<RoutedQuery> = decisions
                .into_iter()
                .enumerate()
                .map(|(q, d)| {
                    if matches!(
                        kind,
                        RouterKind::Pilot | RouterKind::Dataset | RouterKind::Head | RouterKind::Expert
                    ) {
                        diagnostics.routed_queries += 1;
                        diagnostics.base_passes += 1;
                        diagnostics.expert_passes += 1;
                    }
                    RoutedQuery {
                        query_id: d.query_id,
                        dataset: self.test[q].source_dataset.clone(),
                        ndcg: score_of(q, &d.selected),
                        selected: Some(d.selected),
                        per_gate_score: d.per_gate_score,
                    }
                })
                .collect();
            rows.push(summarize(RowKind::Router(kind), routes, &datasets));
        }

        for (name, embs) in self.inputs.baselines.iter().filter(|_| baselines) {
            let routes = self
                .test
                .par_iter()
                .map(|rec| {
                    Ok(RoutedQuery {
                        query_id: rec.query_id.clone(),
                        dataset: rec.source_dataset.clone(),
                        selected: None,
                        per_gate_score: Vec::new(),
                        ndcg: baseline_score(rec, embs, &self.inputs.corpus, &self.inputs.qrels, self.settings.metric)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(summarize(RowKind::Baseline(name.clone()), routes, &datasets));
        }

        let selection = rows
            .iter()
            .filter_map(|r| match r.kind {
                RowKind::Router(kind) => Some(selection_matrix(kind, &r.routes, &gates, &datasets)),
                RowKind::Baseline(_) => None,
            })
            .collect();

        let max_gate = self.max_gate_matrix(&gates, &idx, &datasets);
        Ok(ExperimentOutput {
            gate_set: gates.clone(),
            datasets,
            assignments: self.assignments(&gates),
            library: routers.library,
            rows,
            selection,
            max_gate,
            diagnostics,
            provenance: Provenance::new(&self.settings, &gates, k),
        })
    }

    fn max_gate_matrix(&self, gates: &GateSet, idx: &[usize], datasets: &[String]) -> MaxGateMatrix {
        let rows = datasets
            .iter()
            .map(|ds| {
                let mut counts = vec![0usize; gates.len()];
                let mut ties = 0;
                for (q, rec) in self.test.iter().enumerate() {
                    if &rec.source_dataset != ds {
                        continue;
                    }
                    let opt: Vec<Option<f64>> = idx.iter().map(|&i| Some(self.test_scores[q][i])).collect();
                    let (best, tied) = argmax_canonical(&opt, TIE_TOLERANCE).expect("non-empty");
                    if tied {
                        ties += 1;
                    } else {
                        counts[best] += 1;
                    }
                }
                let untied: usize = counts.iter().sum();
                let rates = counts
                    .iter()
                    .map(|&c| if untied == 0 { 0.0 } else { c as f64 / untied as f64 })
                    .collect();
                MaxGateRow {
                    dataset: ds.clone(),
                    rates,
                    untied,
                    ties,
                }
            })
            .collect();
        MaxGateMatrix {
            gates: gates.clone(),
            rows,
        }
    }

    /// Evaluation with every configured gate and the configured `k`.
    pub fn run(&self) -> Result<ExperimentOutput> {
        self.evaluate(&self.inputs.gate_set, self.settings.k)
    }
}

fn baseline_score(
    rec: &QueryRecord,
    embs: &EmbeddingSet,
    corpus: &EmbeddingSet,
    qrels: &Qrels,
    metric: SimilarityMetric,
) -> Result<f64> {
    let q = embs
        .get(&rec.query_id)
        .ok_or_else(|| Error::missing("baseline embedding", &rec.query_id))?;
    let judged = qrels
        .get(&rec.query_id)
        .ok_or_else(|| Error::missing("qrels entry", &rec.query_id))?;
    Ok(ndcg_at_k(
        &top_k(q, corpus, DEFAULT_K, metric)?,
        Some(judged),
        DEFAULT_K,
    ))
}

fn summarize(kind: RowKind, routes: Vec<RoutedQuery>, datasets: &[String]) -> RowResult {
    let dataset_means: Vec<(String, f64)> = datasets
        .iter()
        .map(|ds| {
            let (sum, n) = routes
                .iter()
                .filter(|r| &r.dataset == ds)
                .fold((0.0, 0usize), |(s, n), r| (s + r.ndcg, n + 1));
            (ds.clone(), sum / n as f64)
        })
        .collect();
    let average = dataset_means.iter().map(|(_, m)| m).sum::<f64>() / dataset_means.len() as f64;
    RowResult {
        kind,
        routes,
        dataset_means,
        average,
    }
}

fn selection_matrix(
    router: RouterKind,
    routes: &[RoutedQuery],
    gates: &GateSet,
    datasets: &[String],
) -> SelectionMatrix {
    let rows = datasets
        .iter()
        .map(|ds| {
            let mut counts = vec![0usize; gates.len()];
            let mut n = 0usize;
            for r in routes.iter().filter(|r| &r.dataset == ds) {
                if let Some(g) = r.selected.as_ref().and_then(|g| gates.position(g)) {
                    counts[g] += 1;
                }
                n += 1;
            }
            (ds.clone(), counts.iter().map(|&c| c as f64 / n as f64).collect())
        })
        .collect();
    SelectionMatrix {
        router,
        gates: gates.clone(),
        rows,
    }
}

/// Runs the configured experiment over all gates.
pub fn run_experiment(inputs: &ExperimentInputs, settings: &ExperimentSettings) -> Result<ExperimentOutput> {
    Experiment::new(inputs, settings.clone())?.run()
}
