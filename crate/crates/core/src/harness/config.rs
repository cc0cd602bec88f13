//! Experiment configuration (`exp.json`) and loaded inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetManifest;
use crate::error::{Error, Result};
use crate::io;
use crate::model::{EmbeddingSet, GateId, GateSet, Qrels, SimilarityMetric};
use crate::pilot::CorpusScope;
use crate::routers::dataset::DEFAULT_SAMPLES_PER_DATASET;
use crate::routers::{RouterKind, TrainParams};
use crate::synth::{self, SynthWorld};

pub const DEFAULT_SEED: u64 = 10;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_k() -> usize {
    1
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_DATASET
}

fn default_routers() -> Vec<RouterKind> {
    RouterKind::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        TrainConfig {
            lr: p.lr,
            epochs: p.epochs,
            l2: p.l2,
        }
    }
}

/// Knobs that control an experiment independently of where inputs live.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    #[serde(default = "default_routers")]
    pub routers: Vec<RouterKind>,
    #[serde(default)]
    pub metric: SimilarityMetric,
    /// Pilot clusters per (dataset, gate) group.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub corpus_scope: CorpusScope,
    #[serde(default)]
    pub exclude_tied: bool,
    #[serde(default = "default_samples")]
    pub dataset_router_samples: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            routers: default_routers(),
            metric: SimilarityMetric::Ip,
            k: 1,
            seed: DEFAULT_SEED,
            corpus_scope: CorpusScope::default(),
            exclude_tied: false,
            dataset_router_samples: DEFAULT_SAMPLES_PER_DATASET,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("settings", "k must be at least 1"));
        }
        if self.dataset_router_samples == 0 {
            return Err(Error::invalid("settings", "dataset_router_samples must be at least 1"));
        }
        if !(self.train.lr > 0.0 && self.train.l2 >= 0.0) {
            return Err(Error::invalid("settings", "train.lr must be > 0 and train.l2 >= 0"));
        }
        Ok(())
    }
}

/// The `exp.json` file: input paths plus settings. Relative paths resolve
/// against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub base_queries: PathBuf,
    pub gate_queries: BTreeMap<GateId, PathBuf>,
    /// Canonical gate order; defaults to the sorted `gate_queries` keys.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<GateId>>,
    pub qrels: PathBuf,
    pub datasets: PathBuf,
    /// Extra single-provider query sets evaluated as fixed rows.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baselines: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: ExperimentSettings,
}

impl ExperimentConfig {
    /// Config for a directory written by [`SynthWorld::write`].
    pub fn for_world_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let datasets = DatasetManifest::load(dir.join(synth::DATASETS_FILE))?;
        let mut gates: Vec<GateId> = datasets.datasets.iter().filter_map(|d| d.gate.clone()).collect();
        gates.dedup();
        let gate_queries = gates
            .iter()
            .map(|g| (g.clone(), dir.join(synth::gate_queries_file(g))))
            .collect();
        Ok(ExperimentConfig {
            corpus: dir.join(synth::CORPUS_FILE),
            base_queries: dir.join(synth::BASE_QUERIES_FILE),
            gate_queries,
            gates: Some(gates),
            qrels: dir.join(synth::QRELS_FILE),
            datasets: dir.join(synth::DATASETS_FILE),
            baselines: BTreeMap::from([("base".to_string(), dir.join(synth::BASE_QUERIES_FILE))]),
            out: None,
            settings: ExperimentSettings::default(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = io::read_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.settings.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.base_queries);
        fix(&mut self.qrels);
        fix(&mut self.datasets);
        self.gate_queries.values_mut().for_each(fix);
        self.baselines.values_mut().for_each(fix);
        if let Some(out) = self.out.as_mut() {
            fix(out);
        }
    }

    pub fn gate_set(&self) -> Result<GateSet> {
        match &self.gates {
            Some(g) => {
                let set = GateSet::new(g.clone())?;
                for g in set.iter() {
                    if !self.gate_queries.contains_key(g) {
                        return Err(Error::invalid("config", format!("gate {g} has no gate_queries path")));
                    }
                }
                Ok(set)
            }
            None => GateSet::new(self.gate_queries.keys().cloned().collect()),
        }
    }
}

/// Everything an experiment reads, loaded and cross-checked.
#[derive(Clone, Debug)]
pub struct ExperimentInputs {
    pub gate_set: GateSet,
    pub corpus: EmbeddingSet,
    pub base_queries: EmbeddingSet,
    pub gate_queries: BTreeMap<GateId, EmbeddingSet>,
    pub qrels: Qrels,
    pub datasets: DatasetManifest,
    pub baselines: Vec<(String, EmbeddingSet)>,
}

impl ExperimentInputs {
    pub fn new(
        gate_set: GateSet,
        corpus: EmbeddingSet,
        base_queries: EmbeddingSet,
        gate_queries: BTreeMap<GateId, EmbeddingSet>,
        qrels: Qrels,
        datasets: DatasetManifest,
        baselines: Vec<(String, EmbeddingSet)>,
    ) -> Result<Self> {
        let inputs = ExperimentInputs {
            gate_set,
            corpus,
            base_queries,
            gate_queries,
            qrels,
            datasets,
            baselines,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let gate_set = config.gate_set()?;
        let gate_queries = gate_set
            .iter()
            .map(|g| Ok((g.clone(), io::load_embedding_set(&config.gate_queries[g])?)))
            .collect::<Result<_>>()?;
        let baselines = config
            .baselines
            .iter()
            .map(|(name, p)| Ok((name.clone(), io::load_embedding_set(p)?)))
            .collect::<Result<_>>()?;
        ExperimentInputs::new(
            gate_set,
            io::load_embedding_set(&config.corpus)?,
            io::load_embedding_set(&config.base_queries)?,
            gate_queries,
            io::load_qrels(&config.qrels)?,
            DatasetManifest::load(&config.datasets)?,
            baselines,
        )
    }

    /// Inputs for an in-memory world; the base provider is included as the
    /// `base` single-provider row.
    pub fn from_world(world: &SynthWorld) -> Result<Self> {
        ExperimentInputs::new(
            world.gate_set.clone(),
            world.corpus.clone(),
            world.base_queries.clone(),
            world.gate_queries.clone(),
            world.qrels.clone(),
            world.datasets.clone(),
            vec![("base".to_string(), world.base_queries.clone())],
        )
    }

    pub fn dim(&self) -> usize {
        self.corpus.dim()
    }

    fn validate(&self) -> Result<()> {
        let dim = self.corpus.dim();
        let check = |set: &EmbeddingSet| {
            if set.dim() != dim {
                Err(Error::invalid(
                    "inputs",
                    format!("provider {} has dim {} but corpus has {dim}", set.provider(), set.dim()),
                ))
            } else {
                Ok(())
            }
        };
        check(&self.base_queries)?;
        for g in &self.gate_set {
            let set = self
                .gate_queries
                .get(g)
                .ok_or_else(|| Error::invalid("inputs", format!("no query embeddings for gate {g}")))?;
            check(set)?;
        }
        for (_, b) in &self.baselines {
            check(b)?;
        }
        for d in &self.datasets.datasets {
            if let Some(g) = &d.gate {
                if !self.gate_set.contains(g) {
                    log::info!("dataset {} names gate {g}, which is not configured", d.name);
                }
            }
        }
        Ok(())
    }
}
