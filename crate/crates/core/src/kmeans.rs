//! k-means with k-means++ seeding and Lloyd refinement.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub centroid: Vec<f32>,
    pub members: usize,
}

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| (x - y as f64).powi(2)).sum()
}

fn sq_dist64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn mean(points: &[&[f32]], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; dim];
    for p in points {
        acc.iter_mut().zip(p.iter()).for_each(|(a, &x)| *a += x as f64);
    }
    let n = points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn nearest(point: &[f32], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, point);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn plus_plus_init(points: &[&[f32]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = keyed_rng(seed, &["kmeans++"]);
    let to64 = |p: &[f32]| p.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let mut centroids = vec![to64(points[rng.random_range(0..points.len())])];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(&centroids[0], p)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // every point already coincides with a centroid
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = to64(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(&c, p));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters with their sizes. `k = 1` gives the arithmetic mean; `k >=
/// points.len()` gives the points themselves. Otherwise clusters are ordered
/// by the index of their first member, and clusters that end up empty are
/// dropped.
pub fn kmeans_clusters(points: &[&[f32]], k: usize, seed: u64) -> Result<Vec<Cluster>> {
    if points.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: p.len(),
        });
    }
    if k == 1 {
        return Ok(vec![Cluster {
            centroid: mean(points, dim).iter().map(|&x| x as f32).collect(),
            members: points.len(),
        }]);
    }
    if k >= points.len() {
        return Ok(points
            .iter()
            .map(|p| Cluster {
                centroid: p.to_vec(),
                members: 1,
            })
            .collect());
    }

    let mut centroids = plus_plus_init(points, k, seed);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![0.0f64; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p.iter()).for_each(|(s, &x)| *s += x as f64);
        }
        let mut moved = 0.0f64;
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n == 0 {
                continue;
            }
            let next: Vec<f64> = s.into_iter().map(|x| x / n as f64).collect();
            moved = moved.max(sq_dist64(c, &next).sqrt());
            *c = next;
        }
        assign = points.iter().map(|p| nearest(p, &centroids)).collect();
        if moved < CONVERGENCE_TOL {
            break;
        }
    }

    let mut first_member = vec![usize::MAX; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (i, &a) in assign.iter().enumerate() {
        first_member[a] = first_member[a].min(i);
        counts[a] += 1;
    }
    let mut order: Vec<usize> = (0..centroids.len()).filter(|&c| counts[c] > 0).collect();
    order.sort_by_key(|&c| first_member[c]);
    Ok(order
        .into_iter()
        .map(|c| Cluster {
            centroid: centroids[c].iter().map(|&x| x as f32).collect(),
            members: counts[c],
        })
        .collect())
}

pub fn kmeans(points: &[&[f32]], k: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    Ok(kmeans_clusters(points, k, seed)?
        .into_iter()
        .map(|c| c.centroid)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_point() {
        assert_eq!(kmeans(&[&[2.0, 2.0]], 1, 10).unwrap(), vec![vec![2.0, 2.0]]);
    }

    #[test]
    fn mean_of_two() {
        assert_eq!(
            kmeans(&[&[0.0, 0.0], &[2.0, 0.0]], 1, 10).unwrap(),
            vec![vec![1.0, 0.0]]
        );
    }

    #[test]
    fn separated_fixed_point() {
        let c = kmeans(&[&[0.0, 0.0], &[10.0, 10.0]], 2, 10).unwrap();
        assert_eq!(c, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
    }

    #[test]
    fn two_blobs_ordered_by_first_member() {
        let pts: Vec<[f32; 2]> = vec![
            [10.0, 10.0],
            [0.0, 0.1],
            [10.1, 9.9],
            [0.1, 0.0],
            [9.9, 10.1],
            [-0.1, -0.1],
        ];
        let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
        for seed in 0..20 {
            let cl = kmeans_clusters(&refs, 2, seed).unwrap();
            assert_eq!(cl.len(), 2);
            assert!((cl[0].centroid[0] - 10.0).abs() < 1e-5);
            assert!((cl[1].centroid[0] - 0.0).abs() < 1e-5);
            assert_eq!(cl[0].members, 3);
        }
    }

    #[test]
    fn k_above_count_returns_points() {
        let pts: Vec<&[f32]> = vec![&[1.0], &[5.0], &[3.0]];
        assert_eq!(kmeans(&pts, 7, 1).unwrap(), vec![vec![1.0], vec![5.0], vec![3.0]]);
        assert_eq!(kmeans(&pts, 3, 1).unwrap(), kmeans(&pts, 7, 1).unwrap());
    }

    #[test]
    fn duplicates_collapse() {
        let pts: Vec<&[f32]> = vec![&[1.0], &[1.0], &[1.0], &[1.0]];
        let cl = kmeans_clusters(&pts, 2, 3).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].members, 4);
    }

    #[test]
    fn errors() {
        assert!(kmeans(&[], 1, 0).is_err());
        assert!(kmeans(&[&[1.0]], 0, 0).is_err());
        assert!(kmeans(&[&[1.0], &[1.0, 2.0]], 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn k1_is_the_mean(pts in proptest::collection::vec(proptest::collection::vec(-100f32..100f32, 3), 1..40)) {
            let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
            let c = &kmeans(&refs, 1, 0).unwrap()[0];
            for d in 0..3 {
                let m = pts.iter().map(|p| p[d] as f64).sum::<f64>() / pts.len() as f64;
                prop_assert!((c[d] as f64 - m).abs() <= 1e-6 * m.abs().max(1.0));
            }
        }

        #[test]
        fn deterministic_and_conserving(pts in proptest::collection::vec(proptest::collection::vec(-5f32..5f32, 2), 1..30), k in 1usize..6, seed in 0u64..100) {
            let refs: Vec<&[f32]> = pts.iter().map(|p| p.as_slice()).collect();
            let a = kmeans_clusters(&refs, k, seed).unwrap();
            let b = kmeans_clusters(&refs, k, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.len() <= k.min(pts.len()));
            prop_assert_eq!(a.iter().map(|c| c.members).sum::<usize>(), pts.len());
        }
    }
}
