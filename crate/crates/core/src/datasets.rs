//! The `datasets.json` manifest: which queries and docs belong to which
//! source dataset, the train/test split, and the gate trained on each dataset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{GateId, QueryRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    /// Gate trained on this dataset, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateId>,
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
    /// Corpus docs owned by this dataset. Empty means "the whole corpus".
    #[serde(default)]
    pub docs: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub datasets: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn new(datasets: Vec<DatasetEntry>) -> Result<Self> {
        let m = DatasetManifest { datasets };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return Err(Error::Schema {
                    field: "datasets[].name".into(),
                    msg: format!("duplicate dataset {}", d.name),
                });
            }
            let mut ids = HashSet::new();
            for q in d.train.iter().chain(&d.test) {
                if !ids.insert(q.as_str()) {
                    return Err(Error::Schema {
                        field: format!("datasets[{}]", d.name),
                        msg: format!("query {q} listed twice"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = io::read_string(path)?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        io::write_string(path.as_ref(), &(json + "\n"))
    }

    pub fn names(&self) -> Vec<&str> {
        self.datasets.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.name == name)
    }

    /// Query records of one split across all datasets, in manifest order.
    pub fn records(&self, split: Split) -> Vec<QueryRecord> {
        self.datasets
            .iter()
            .flat_map(|d| {
                let ids = match split {
                    Split::Train => &d.train,
                    Split::Test => &d.test,
                };
                ids.iter().map(move |q| QueryRecord {
                    query_id: q.clone(),
                    source_dataset: d.name.clone(),
                })
            })
            .collect()
    }

    /// Dataset name to the gate trained on it, for datasets that declare one.
    pub fn dataset_gates(&self) -> BTreeMap<String, GateId> {
        self.datasets
            .iter()
            .filter_map(|d| d.gate.clone().map(|g| (d.name.clone(), g)))
            .collect()
    }

    /// Doc-ownership lookup: doc id to dataset name.
    pub fn doc_owner(&self) -> HashMap<&str, &str> {
        self.datasets
            .iter()
            .flat_map(|d| d.docs.iter().map(move |doc| (doc.as_str(), d.name.as_str())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_follow_manifest_order() {
        let m = DatasetManifest::new(vec![
            DatasetEntry {
                name: "A".into(),
                gate: Some(GateId::new("GA").unwrap()),
                train: vec!["a1".into(), "a2".into()],
                test: vec!["a3".into()],
                docs: vec![],
            },
            DatasetEntry {
                name: "B".into(),
                gate: None,
                train: vec!["b1".into()],
                test: vec![],
                docs: vec!["db".into()],
            },
        ])
        .unwrap();
        let train = m.records(Split::Train);
        assert_eq!(train.len(), 3);
        assert_eq!(train[2].source_dataset, "B");
        assert_eq!(m.records(Split::Test).len(), 1);
        assert_eq!(m.dataset_gates().len(), 1);
        assert_eq!(m.doc_owner()["db"], "B");
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = DatasetEntry {
            name: "A".into(),
            gate: None,
            train: vec![],
            test: vec![],
            docs: vec![],
        };
        assert!(DatasetManifest::new(vec![e.clone(), e]).is_err());
    }
}
