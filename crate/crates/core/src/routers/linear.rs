//! Logistic-regression routers: a multinomial classification head over all
//! gates, and one binary select/not-select classifier per gate.
//!
//! Both are trained by full-batch gradient descent on cross-entropy with an
//! L2 penalty on the weights, from zero initialization. Training sets are
//! balanced by seeded downsampling to the smallest label count.

use rand::seq::{index::sample, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Embedding, GateId, GateSet};
use crate::rng::keyed_rng;

use super::{RouterKind, RoutingDecision};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lr: 0.1,
            epochs: 200,
            l2: 1e-4,
            seed: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Training instances kept per label after balancing.
    pub samples_per_class: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Softmax over `class_labels`.
    Multinomial,
    /// Sigmoid probability that the single label in `class_labels` applies.
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub kind: ClassifierKind,
    /// One row per output (a single row for binary classifiers).
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub class_labels: Vec<GateId>,
    pub training_meta: TrainingMeta,
}

fn logits(weights: &[Vec<f64>], bias: &[f64], x: &[f32]) -> Vec<f64> {
    weights
        .iter()
        .zip(bias)
        .map(|(w, b)| b + w.iter().zip(x).map(|(w, &x)| w * x as f64).sum::<f64>())
        .collect()
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearClassifier {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Probability per class label (binary: probability of the positive label).
    pub fn predict_proba(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mut z = logits(&self.weights, &self.bias, x);
        match self.kind {
            ClassifierKind::Multinomial => softmax(&mut z),
            ClassifierKind::Binary => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
        Ok(z)
    }

    /// Index of the most probable class (earliest on ties).
    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok(p.iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > p[best] { i } else { best }))
    }
}

/// Full-batch gradient descent. `targets[i]` is the class index for
/// multinomial models, or 0/1 for binary ones.
fn fit(xs: &[&[f32]], targets: &[usize], outputs: usize, binary: bool, hp: &TrainParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = xs[0].len();
    let n = xs.len() as f64;
    let mut w = vec![vec![0.0f64; dim]; outputs];
    let mut b = vec![0.0f64; outputs];
    for _ in 0..hp.epochs {
        let mut gw = vec![vec![0.0f64; dim]; outputs];
        let mut gb = vec![0.0f64; outputs];
        for (x, &t) in xs.iter().zip(targets) {
            let mut z = logits(&w, &b, x);
            if binary {
                z[0] = sigmoid(z[0]) - t as f64;
            } else {
                softmax(&mut z);
                z[t] -= 1.0;
            }
            for (c, err) in z.iter().enumerate() {
                gb[c] += err;
                gw[c]
                    .iter_mut()
                    .zip(x.iter())
                    .for_each(|(g, &xv)| *g += err * xv as f64);
            }
        }
        for c in 0..outputs {
            b[c] -= hp.lr * gb[c] / n;
            for (wv, g) in w[c].iter_mut().zip(&gw[c]) {
                *wv -= hp.lr * (g / n + hp.l2 * *wv);
            }
        }
    }
    (w, b)
}

fn check_features(features: &[&[f32]], labels: &[GateId]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::invalid(
            "training data",
            format!("{} features but {} labels", features.len(), labels.len()),
        ));
    }
    let dim = features.first().ok_or(Error::Empty("training data"))?.len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: f.len(),
        });
    }
    Ok(dim)
}

/// Seeded sample of `m` indices from `pool`, kept in pool order.
fn downsample(pool: &[usize], m: usize, seed: u64, labels: &[&str]) -> Vec<usize> {
    let mut rng = keyed_rng(seed, labels);
    let mut picked = sample(&mut rng, pool.len(), m).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

/// Multinomial head over the gates that occur in `labels`. Each label is
/// downsampled to the count of the rarest one.
pub fn train_head_router(
    features: &[&[f32]],
    labels: &[GateId],
    gate_set: &GateSet,
    hp: &TrainParams,
) -> Result<LinearClassifier> {
    check_features(features, labels)?;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); gate_set.len()];
    for (i, l) in labels.iter().enumerate() {
        let g = gate_set
            .position(l)
            .ok_or_else(|| Error::invalid("training label", format!("gate {l} not in gate set")))?;
        pools[g].push(i);
    }
    let present: Vec<usize> = (0..gate_set.len()).filter(|&g| !pools[g].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::invalid("head router", "need at least two classes"));
    }
    let m = present.iter().map(|&g| pools[g].len()).min().unwrap();

    let mut rows: Vec<(usize, usize)> = Vec::with_capacity(m * present.len());
    for (class, &g) in present.iter().enumerate() {
        let gate = gate_set.gates()[g].as_str();
        rows.extend(
            downsample(&pools[g], m, hp.seed, &["head-balance", gate])
                .into_iter()
                .map(|i| (i, class)),
        );
    }
    rows.shuffle(&mut keyed_rng(hp.seed, &["head-shuffle"]));

    let xs: Vec<&[f32]> = rows.iter().map(|&(i, _)| features[i]).collect();
    let ys: Vec<usize> = rows.iter().map(|&(_, c)| c).collect();
    let (weights, bias) = fit(&xs, &ys, present.len(), false, hp);
    Ok(LinearClassifier {
        kind: ClassifierKind::Multinomial,
        weights,
        bias,
        class_labels: present.iter().map(|&g| gate_set.gates()[g].clone()).collect(),
        training_meta: TrainingMeta {
            lr: hp.lr,
            epochs: hp.epochs,
            l2: hp.l2,
            seed: hp.seed,
            samples_per_class: m,
        },
    })
}

pub fn route_head(query: &Embedding, clf: &LinearClassifier) -> Result<RoutingDecision> {
    let p = clf.predict_proba(&query.vec)?;
    let scores = clf.class_labels.iter().cloned().zip(p).collect();
    RoutingDecision::from_scores(&query.id, scores, RouterKind::Head)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertClassifiers {
    pub gates: GateSet,
    /// Binary classifiers in canonical gate order; gates without one are
    /// never selected.
    pub classifiers: Vec<LinearClassifier>,
}

/// One binary classifier per gate: positives are instances whose best gate
/// it is, negatives an equally sized seeded sample of the rest.
pub fn train_expert_classifiers(
    features: &[&[f32]],
    labels: &[GateId],
    gate_set: &GateSet,
    hp: &TrainParams,
) -> Result<ExpertClassifiers> {
    check_features(features, labels)?;
    for l in labels {
        if !gate_set.contains(l) {
            return Err(Error::invalid("training label", format!("gate {l} not in gate set")));
        }
    }
    let mut classifiers = Vec::new();
    for gate in gate_set {
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| &labels[i] == gate);
        if pos.is_empty() || neg.is_empty() {
            log::warn!(
                "gate {gate}: {} positives and {} negatives, no classifier trained",
                pos.len(),
                neg.len()
            );
            continue;
        }
        let m = pos.len().min(neg.len());
        let g = gate.as_str();
        let mut rows: Vec<(usize, usize)> = downsample(&pos, m, hp.seed, &["expert-pos", g])
            .into_iter()
            .map(|i| (i, 1))
            .chain(
                downsample(&neg, m, hp.seed, &["expert-neg", g])
                    .into_iter()
                    .map(|i| (i, 0)),
            )
            .collect();
        rows.shuffle(&mut keyed_rng(hp.seed, &["expert-shuffle", g]));
        let xs: Vec<&[f32]> = rows.iter().map(|&(i, _)| features[i]).collect();
        let ys: Vec<usize> = rows.iter().map(|&(_, y)| y).collect();
        let (weights, bias) = fit(&xs, &ys, 1, true, hp);
        classifiers.push(LinearClassifier {
            kind: ClassifierKind::Binary,
            weights,
            bias,
            class_labels: vec![gate.clone()],
            training_meta: TrainingMeta {
                lr: hp.lr,
                epochs: hp.epochs,
                l2: hp.l2,
                seed: hp.seed,
                samples_per_class: m,
            },
        });
    }
    if classifiers.is_empty() {
        return Err(Error::invalid(
            "expert router",
            "no gate had both positives and negatives",
        ));
    }
    Ok(ExpertClassifiers {
        gates: gate_set.clone(),
        classifiers,
    })
}

pub fn route_expert_classifier(query: &Embedding, experts: &ExpertClassifiers) -> Result<RoutingDecision> {
    if experts.classifiers.is_empty() {
        return Err(Error::Empty("expert classifiers"));
    }
    let mut scores = Vec::with_capacity(experts.classifiers.len());
    for clf in &experts.classifiers {
        scores.push((clf.class_labels[0].clone(), clf.predict_proba(&query.vec)?[0]));
    }
    RoutingDecision::from_scores(&query.id, scores, RouterKind::Expert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_vec;

    fn gid(s: &str) -> GateId {
        GateId::new(s).unwrap()
    }

    /// `n` points around each center with unit-variance noise scaled by 0.5.
    fn clusters(centers: &[(f32, f32)], n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<GateId>) {
        let mut rng = keyed_rng(seed, &["clusters"]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..n {
                let e = gaussian_vec(&mut rng, 2);
                xs.push(vec![cx + 0.5 * e[0] as f32, cy + 0.5 * e[1] as f32]);
                ys.push(gid(&format!("G{c}")));
            }
        }
        (xs, ys)
    }

    fn accuracy(clf: &LinearClassifier, xs: &[Vec<f32>], ys: &[GateId]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| clf.class_labels[clf.predict(x).unwrap()] == **y)
            .count();
        hits as f64 / xs.len() as f64
    }

    #[test]
    fn separable_two_class_head() {
        let (xs, ys) = clusters(&[(5.0, 0.0), (-5.0, 0.0)], 50, 1);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["G0", "G1"]).unwrap();
        let clf = train_head_router(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        assert_eq!(accuracy(&clf, &xs, &ys), 1.0);
        let d = route_head(&Embedding::new("q", vec![5.0, 0.0]), &clf).unwrap();
        assert_eq!(d.selected, gid("G0"));
        assert!(d.score(&gid("G0")).unwrap() > 0.9);
    }

    #[test]
    fn head_is_deterministic() {
        let (xs, ys) = clusters(&[(5.0, 0.0), (-5.0, 0.0), (0.0, 5.0)], 30, 2);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["G0", "G1", "G2"]).unwrap();
        let a = train_head_router(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        let b = train_head_router(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.training_meta.epochs, 200);
    }

    #[test]
    fn balancing_keeps_minority_count() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..892 {
            xs.push(vec![1.0, i as f32 * 1e-3]);
            ys.push(gid("NF"));
        }
        for i in 0..4252 {
            xs.push(vec![-1.0, i as f32 * 1e-3]);
            ys.push(gid("MS"));
        }
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["MS", "NF"]).unwrap();
        let hp = TrainParams {
            epochs: 1,
            ..TrainParams::default()
        };
        let clf = train_head_router(&refs, &ys, &gs, &hp).unwrap();
        assert_eq!(clf.training_meta.samples_per_class, 892);
        assert_eq!(clf.class_labels, vec![gid("MS"), gid("NF")]);
    }

    #[test]
    fn head_errors() {
        let xs = [vec![1.0f32], vec![2.0]];
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["A", "B"]).unwrap();
        assert!(train_head_router(&refs, &[gid("A"), gid("A")], &gs, &TrainParams::default()).is_err());
        assert!(train_head_router(&refs, &[gid("A")], &gs, &TrainParams::default()).is_err());
        assert!(train_head_router(&refs, &[gid("A"), gid("Z")], &gs, &TrainParams::default()).is_err());
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let clf = LinearClassifier {
            kind: ClassifierKind::Multinomial,
            weights: vec![vec![0.0; 3]; 3],
            bias: vec![0.0; 3],
            class_labels: vec![gid("A"), gid("B"), gid("C")],
            training_meta: TrainingMeta {
                lr: 0.1,
                epochs: 0,
                l2: 0.0,
                seed: 0,
                samples_per_class: 0,
            },
        };
        let d = route_head(&Embedding::new("q", vec![1.0, -2.0, 3.0]), &clf).unwrap();
        assert_eq!(d.selected, gid("A"));
        for (_, p) in &d.per_gate_score {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(route_head(&Embedding::new("q", vec![1.0]), &clf).is_err());

        let binary = |g: &str| LinearClassifier {
            kind: ClassifierKind::Binary,
            weights: vec![vec![0.0; 3]],
            bias: vec![0.0],
            class_labels: vec![gid(g)],
            ..clf.clone()
        };
        let experts = ExpertClassifiers {
            gates: GateSet::parse(&["A", "B"]).unwrap(),
            classifiers: vec![binary("A"), binary("B")],
        };
        let d = route_expert_classifier(&Embedding::new("q", vec![4.0, 0.0, 1.0]), &experts).unwrap();
        assert_eq!(d.selected, gid("A"));
        assert!(d.per_gate_score.iter().all(|(_, p)| *p == 0.5));
        let single = ExpertClassifiers {
            gates: GateSet::parse(&["A", "B"]).unwrap(),
            classifiers: vec![binary("B")],
        };
        assert_eq!(
            route_expert_classifier(&Embedding::new("q", vec![0.0; 3]), &single)
                .unwrap()
                .selected,
            gid("B")
        );
    }

    #[test]
    fn softmax_normalizes() {
        let (xs, ys) = clusters(&[(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)], 20, 3);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["G0", "G1", "G2"]).unwrap();
        let clf = train_head_router(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        let mut rng = keyed_rng(5, &["probe"]);
        for _ in 0..100 {
            let v: Vec<f32> = gaussian_vec(&mut rng, 2).iter().map(|&x| 10.0 * x as f32).collect();
            let s: f64 = clf.predict_proba(&v).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn expert_classifiers_separable() {
        let (xs, ys) = clusters(&[(5.0, 0.0), (-5.0, 0.0), (0.0, 5.0)], 40, 4);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["G0", "G1", "G2"]).unwrap();
        let ex = train_expert_classifiers(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        assert_eq!(ex.classifiers.len(), 3);
        for clf in &ex.classifiers {
            // 40 positives vs 80 candidates for negatives
            assert_eq!(clf.training_meta.samples_per_class, 40);
            let hits = xs
                .iter()
                .zip(&ys)
                .filter(|(x, y)| (clf.predict_proba(x).unwrap()[0] > 0.5) == (**y == clf.class_labels[0]))
                .count();
            assert_eq!(hits, xs.len());
        }
        let d = route_expert_classifier(&Embedding::new("q", vec![-5.0, 0.0]), &ex).unwrap();
        assert_eq!(d.selected, gid("G1"));
        let again = train_expert_classifiers(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        assert_eq!(ex, again);
    }

    #[test]
    fn gate_without_positives_is_omitted() {
        let (xs, ys) = clusters(&[(5.0, 0.0), (-5.0, 0.0)], 10, 5);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["G0", "G1", "G9"]).unwrap();
        let ex = train_expert_classifiers(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        assert_eq!(ex.classifiers.len(), 2);
    }

    #[test]
    fn classifier_json_round_trip() {
        let (xs, ys) = clusters(&[(5.0, 0.0), (-5.0, 0.0)], 10, 6);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let gs = GateSet::parse(&["G0", "G1"]).unwrap();
        let clf = train_head_router(&refs, &ys, &gs, &TrainParams::default()).unwrap();
        let json = serde_json::to_string(&clf).unwrap();
        let back: LinearClassifier = serde_json::from_str(&json).unwrap();
        assert_eq!(back, clf);
    }
}
