//! Embedding diagnostics: k-means, silhouette scores and sweeps, anchor
//! based pseudo-labeling and PCA.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y).as_f64().powi(2)).sum()
}

fn check_features<S: Scalar>(features: &[Vec<S>]) -> Result<usize> {
    let d = features.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::invalid("feature set is empty"));
    }
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::shape("features", "rows differ in length"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features contain non-finite values"));
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every update step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(point, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means++ seeding followed by Lloyd iterations. Stops when assignments
/// stop changing or after `max_iter` rounds; an emptied cluster is reseeded
/// with the point farthest from its centroid.
pub fn kmeans<S: Scalar>(features: &[Vec<S>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterResult> {
    let d = check_features(features)?;
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.iter().map(|v| v.as_f64()).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = vec![x[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(x[pick].clone());
        let c = centroids.last().expect("just pushed");
        d2.iter_mut().zip(&x).for_each(|(v, p)| *v = v.min(sq_dist(p, c)));
    }

    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let next: Vec<(usize, f64)> = x.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut changed = next.iter().zip(&assignments).any(|(a, &b)| a.0 != b);
        for (slot, (c, _)) in assignments.iter_mut().zip(&next) {
            *slot = *c;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in x.iter().zip(&assignments) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&i, &j| {
                        sq_dist(&x[i], &centroids[assignments[i]]).total_cmp(&sq_dist(&x[j], &centroids[assignments[j]]))
                    });
                if let Some(i) = far {
                    counts[assignments[i]] -= 1;
                    assignments[i] = c;
                    counts[c] = 1;
                    centroids[c] = x[i].clone();
                    changed = true;
                }
            }
        }
        trace.push(inertia_of(&x, &centroids, &assignments));
        if !changed {
            break;
        }
    }
    let inertia = *trace.last().expect("at least one iteration");
    Ok(ClusterResult {
        k,
        centroids,
        assignments,
        inertia,
        inertia_trace: trace,
        iterations,
    })
}

fn inertia_of(x: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    x.iter().zip(assignments).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}

/// Mean silhouette with Euclidean distances; singleton clusters score 0.
pub fn silhouette_score<S: Scalar>(features: &[Vec<S>], assignments: &[usize]) -> Result<f64> {
    check_features(features)?;
    if assignments.len() != features.len() {
        return Err(Error::shape("silhouette", format!("{} assignments for {} points", assignments.len(), features.len())));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::invalid("silhouette needs at least two non-empty clusters"));
    }
    let n = features.len();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assignments[j]] += sq_dist(&features[i], &features[j]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_k: usize,
    /// `(k, silhouette)` in the order requested.
    pub scores: Vec<(usize, f64)>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,score\n");
        for (k, s) in &self.scores {
            let _ = writeln!(out, "{k},{s}");
        }
        out
    }
}

/// k-means plus silhouette for every `k`; ties go to the smallest `k`.
pub fn silhouette_sweep<S: Scalar>(features: &[Vec<S>], k_list: &[usize], seed: u64, max_iter: usize) -> Result<SweepResult> {
    if k_list.is_empty() {
        return Err(Error::invalid("empty k list"));
    }
    if let Some(&k) = k_list.iter().find(|&&k| k < 2 || k > features.len()) {
        return Err(Error::invalid(format!("k = {k} outside 2..={}", features.len())));
    }
    let mut scores = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let clusters = kmeans(features, k, seed, max_iter)?;
        scores.push((k, silhouette_score(features, &clusters.assignments)?));
    }
    let best_k = scores
        .iter()
        .fold(None::<(usize, f64)>, |best, &(k, s)| match best {
            Some((bk, bs)) if bs > s || (bs == s && bk < k) => Some((bk, bs)),
            _ => Some((k, s)),
        })
        .expect("non-empty")
        .0;
    Ok(SweepResult { best_k, scores })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    /// Label given to each cluster.
    pub cluster_labels: Vec<usize>,
    pub predicted: Vec<usize>,
}

impl PseudoLabels {
    pub fn accuracy(&self, truth: &[usize]) -> Result<f64> {
        if truth.len() != self.predicted.len() || truth.is_empty() {
            return Err(Error::shape("pseudo_label", format!("{} labels for {} predictions", truth.len(), self.predicted.len())));
        }
        let hits = self.predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / truth.len() as f64)
    }
}

/// Propagates one anchor per class (`anchors[c]` is a record of class `c`)
/// to whole clusters.
///
/// Each anchor claims the cluster with the nearest centroid; a cluster
/// claimed twice goes to the closer anchor, and unclaimed clusters copy the
/// label of the nearest claimed centroid.
pub fn pseudo_label<S: Scalar>(
    features: &[Vec<S>],
    anchors: &[usize],
    classes: usize,
    clusters: &ClusterResult,
) -> Result<PseudoLabels> {
    check_features(features)?;
    if anchors.len() != classes {
        return Err(Error::invalid(format!("{} anchors for {classes} classes", anchors.len())));
    }
    if let Some(&a) = anchors.iter().find(|&&a| a >= features.len()) {
        return Err(Error::invalid(format!("anchor {a} outside the feature set")));
    }
    if clusters.assignments.len() != features.len() {
        return Err(Error::shape("pseudo_label", "cluster result belongs to a different feature set"));
    }
    let mut claim: Vec<Option<(usize, f64)>> = vec![None; clusters.k];
    for (class, &a) in anchors.iter().enumerate() {
        let p: Vec<f64> = features[a].iter().map(|v| v.as_f64()).collect();
        let (c, dist) = nearest(&p, &clusters.centroids);
        if claim[c].map_or(true, |(_, best)| dist < best) {
            claim[c] = Some((class, dist));
        }
    }
    let claimed: Vec<usize> = (0..clusters.k).filter(|&c| claim[c].is_some()).collect();
    let cluster_labels: Vec<usize> = (0..clusters.k)
        .map(|c| match claim[c] {
            Some((class, _)) => class,
            None => {
                let owner = claimed
                    .iter()
                    .copied()
                    .min_by(|&i, &j| {
                        sq_dist(&clusters.centroids[c], &clusters.centroids[i])
                            .total_cmp(&sq_dist(&clusters.centroids[c], &clusters.centroids[j]))
                    })
                    .expect("at least one anchor claims a cluster");
                claim[owner].expect("claimed").0
            }
        })
        .collect();
    let predicted = clusters.assignments.iter().map(|&c| cluster_labels[c]).collect();
    Ok(PseudoLabels {
        cluster_labels,
        predicted,
    })
}

/// One seeded random anchor per class.
pub fn choose_anchors(labels: &[usize], classes: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..classes)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            members
                .choose(&mut rng)
                .copied()
                .ok_or_else(|| Error::invalid(format!("class {c} has no members to anchor")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `dims × D`, rows are unit principal directions.
    pub components: Vec<Vec<f64>>,
    /// All covariance eigenvalues (population normalization), descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub coordinates: Vec<Vec<f64>>,
}

impl Pca {
    pub fn to_csv(&self, labels: &[(&str, Vec<i32>)]) -> String {
        let dims = self.components.len();
        let mut out = String::from("index");
        for c in 0..dims {
            let _ = write!(out, ",pc{}", c + 1);
        }
        for (name, _) in labels {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (i, row) in self.coordinates.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            for (_, vals) in labels {
                let _ = write!(out, ",{}", vals[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn variance_csv(&self) -> String {
        let mut out = String::from("component,eigenvalue,explained_variance_ratio\n");
        for (c, r) in self.explained_variance_ratio.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", c + 1, self.eigenvalues[c], r);
        }
        out
    }
}

/// Projects mean-centered features onto the top `dims` covariance eigenvectors.
pub fn pca_project<S: Scalar>(features: &[Vec<S>], dims: usize) -> Result<Pca> {
    let d = check_features(features)?;
    if dims == 0 || dims > d {
        return Err(Error::invalid(format!("dims = {dims} must lie in 1..={d}")));
    }
    let n = features.len();
    let mut mean = vec![0.0; d];
    for f in features {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v.as_f64());
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| features[i][j].as_f64() - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let components: Vec<Vec<f64>> = order[..dims]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let explained_variance_ratio = eigenvalues[..dims]
        .iter()
        .map(|&e| if total > 0.0 { e / total } else { 0.0 })
        .collect();
    let coordinates = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| c.iter().enumerate().map(|(j, v)| v * centered[(i, j)]).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        coordinates,
    })
}

/// Isotropic Gaussian blobs around the given centers.
pub fn gaussian_blobs(centers: &[Vec<f64>], per_blob: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut points = Vec::with_capacity(centers.len() * per_blob);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(center.iter().map(|&m| m + normal.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    (points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_blobs_kmeans() {
        let x = pts(&[0.0, 0.1, 10.0, 10.1]);
        let r = kmeans(&x, 2, 7, 100).unwrap();
        let mut c: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
        assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = pts(&[0.0, 1.0, 3.0, 7.0, 7.5]);
        assert_eq!(kmeans(&x, 5, 1, 50).unwrap().inertia, 0.0);
        assert!(kmeans(&x, 6, 1, 50).is_err());
    }

    #[test]
    fn silhouette_examples() {
        let x = pts(&[0.0, 0.1, 10.0, 10.1]);
        let s = silhouette_score(&x, &[0, 0, 1, 1]).unwrap();
        // Outer points see b = 10.05, inner points b = 9.95; a = 0.1 for all.
        let expected = ((10.05 - 0.1) / 10.05 + (9.95 - 0.1) / 9.95) / 2.0;
        assert!((s - expected).abs() < 1e-12);
        assert!(silhouette_score(&x, &[0, 0, 0, 0]).is_err());
        let same = pts(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(silhouette_score(&same, &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn pseudo_labels_on_pure_clusters() {
        let centers: Vec<Vec<f64>> = (0..4).map(|c| vec![10.0 * c as f64, -5.0 * c as f64]).collect();
        let (x, y) = gaussian_blobs(&centers, 20, 0.3, 2);
        let r = kmeans(&x, 4, 3, 100).unwrap();
        for seed in 0..3 {
            let anchors = choose_anchors(&y, 4, seed).unwrap();
            let p = pseudo_label(&x, &anchors, 4, &r).unwrap();
            assert_eq!(p.accuracy(&y).unwrap(), 1.0);
        }
        assert!(pseudo_label(&x, &[0, 20, 40], 4, &r).is_err());
    }

    #[test]
    fn pca_rank_one() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&x, 2).unwrap();
        assert!(p.explained_variance_ratio[1] < 1e-9);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(pca_project(&x, 4).is_err());
    }
}
