//! k-means with k-means++ seeding over the whitened error set.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub restarts: usize,
    pub max_iters: usize,
}

impl KMeansConfig {
    pub fn new(clusters: usize) -> Self {
        Self {
            clusters,
            restarts: 10,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index of every input row.
    pub assignments: Vec<usize>,
    /// p × m, one centroid per row.
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
}

impl Clustering {
    pub fn clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == cluster).then_some(i))
            .collect()
    }
}

struct Rows<'a> {
    data: &'a [f64],
    dim: usize,
}

impl Rows<'_> {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Run {
    assignments: Vec<usize>,
    centroids: Vec<f64>,
    wcss_trace: Vec<f64>,
}

impl Run {
    fn wcss(&self) -> f64 {
        *self.wcss_trace.last().expect("at least one Lloyd pass")
    }
}

pub fn kmeans(points: &DMatrix<f64>, config: &KMeansConfig, rng: RngSpec) -> Result<Clustering> {
    let count = points.nrows();
    if count == 0 {
        return Err(Error::Empty("k-means needs at least one point".into()));
    }
    if config.clusters == 0 || config.clusters > count {
        return Err(Error::InvalidArgument(format!(
            "cluster count must be in 1..={count}, got {}",
            config.clusters
        )));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let dim = points.ncols();
    let row_major: Vec<f64> = points.transpose().iter().copied().collect();
    let rows = Rows {
        data: &row_major,
        dim,
    };

    let runs: Vec<Run> = (0..config.restarts)
        .into_par_iter()
        .map(|r| lloyd(&rows, config.clusters, config.max_iters, rng.child(r as u64)))
        .collect();

    // lowest WCSS, ties to the lowest restart index
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.wcss() < runs[best].wcss() {
            best = i;
        }
    }
    let run = runs.into_iter().nth(best).expect("restarts >= 1");
    let wcss = run.wcss();
    Ok(Clustering {
        assignments: run.assignments,
        centroids: DMatrix::from_row_slice(config.clusters, dim, &run.centroids),
        wcss,
    })
}

fn seed_plus_plus(rows: &Rows, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = rows.len();
    let mut centroids = Vec::with_capacity(k * rows.dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(rows.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), rows.row(first))).collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;

    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in nearest.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every point coincides with a centre: fall back to an unused index
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = rows.row(pick);
        centroids.extend_from_slice(c);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(rows.row(i), c));
        }
    }
    centroids
}

fn lloyd(rows: &Rows, k: usize, max_iters: usize, rng: RngSpec) -> Run {
    let dim = rows.dim;
    let n = rows.len();
    let mut rng = rng.rng();
    let mut centroids = seed_plus_plus(rows, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for i in 0..n {
            let x = rows.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                changed = true;
                assignments[i] = best;
            }
            dists[i] = best_d;
        }

        // empty clusters take the point farthest from its centroid
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = donor {
                sizes[assignments[i]] -= 1;
                assignments[i] = c;
                sizes[c] = 1;
                dists[i] = 0.0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(rows.row(i));
                changed = true;
            }
        }

        let mut sums = vec![0.0; k * dim];
        for (i, &c) in assignments.iter().enumerate() {
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(rows.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / sizes[c] as f64;
                }
            }
        }
        let wcss = (0..n)
            .map(|i| {
                let c = assignments[i];
                sq_dist(rows.row(i), &centroids[c * dim..(c + 1) * dim])
            })
            .sum();
        trace.push(wcss);
        if !changed {
            break;
        }
    }

    Run {
        assignments,
        centroids,
        wcss_trace: trace,
    }
}

/// For each cluster, the smallest cosine similarity between two of its
/// members. Clusters with fewer than two members report `1.0`.
pub fn positive_correlation_report(clustering: &Clustering, points: &DMatrix<f64>) -> Vec<f64> {
    let unit: Vec<Vec<f64>> = points
        .row_iter()
        .map(|r| {
            let norm = r.norm();
            if norm > 0.0 {
                r.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; r.len()]
            }
        })
        .collect();
    (0..clustering.clusters())
        .map(|c| {
            let members = clustering.members(c);
            let mut beta = 1.0f64;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(x, y)| x * y).sum();
                    beta = beta.min(dot);
                }
            }
            beta
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = RngSpec::new(seed, 0).rng();
        let mut values = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let side = i % 2;
            let cx = if side == 0 { -10.0 } else { 10.0 };
            let r: f64 = rng.random_range(0.0..1.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            values.push(cx + r * t.cos());
            values.push(r * t.sin());
            truth.push(side);
        }
        (DMatrix::from_row_slice(40, 2, &values), truth)
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (pts, truth) = blobs(3);
        let c = kmeans(&pts, &KMeansConfig::new(2), RngSpec::new(1, 0)).unwrap();
        // brute force over both labelings
        let direct = c.assignments.iter().zip(&truth).all(|(a, t)| a == t);
        let swapped = c.assignments.iter().zip(&truth).all(|(a, t)| *a == 1 - t);
        assert!(direct || swapped);
    }

    #[test]
    fn one_cluster_per_point() {
        let (pts, _) = blobs(5);
        let c = kmeans(&pts, &KMeansConfig::new(40), RngSpec::new(2, 0)).unwrap();
        assert_eq!(c.wcss, 0.0);
        let mut seen = c.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 40);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let (pts, _) = blobs(6);
        let c = kmeans(&pts, &KMeansConfig::new(1), RngSpec::new(2, 0)).unwrap();
        let mean = crate::linalg::column_means(&pts);
        assert!((c.centroids.row(0).transpose() - mean).norm() < 1e-10);
    }

    #[test]
    fn centroids_are_member_means() {
        let (pts, _) = blobs(8);
        let c = kmeans(&pts, &KMeansConfig::new(5), RngSpec::new(4, 0)).unwrap();
        for j in 0..5 {
            let m = c.members(j);
            if m.is_empty() {
                continue;
            }
            let mean = crate::linalg::column_means(&pts.select_rows(&m));
            assert!((c.centroids.row(j).transpose() - mean).norm() < 1e-10);
        }
    }

    #[test]
    fn wcss_never_increases_within_a_run() {
        let mut rng = RngSpec::new(12, 0).rng();
        let values: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = Rows { data: &values, dim: 3 };
        for r in 0..5 {
            let run = lloyd(&rows, 7, 300, RngSpec::new(9, r));
            for w in run.wcss_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", run.wcss_trace);
            }
        }
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = DMatrix::from_row_slice(5, 1, &[1.0, 1.0, 1.0, 2.0, 2.0]);
        let c = kmeans(&pts, &KMeansConfig::new(4), RngSpec::new(1, 0)).unwrap();
        for j in 0..4 {
            assert!(!c.members(j).is_empty());
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let (pts, _) = blobs(9);
        let a = kmeans(&pts, &KMeansConfig::new(3), RngSpec::new(5, 0)).unwrap();
        let b = kmeans(&pts, &KMeansConfig::new(3), RngSpec::new(5, 0)).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&pts, &KMeansConfig::new(41), RngSpec::new(5, 0)).is_err());
        assert!(kmeans(&DMatrix::zeros(0, 2), &KMeansConfig::new(1), RngSpec::new(5, 0)).is_err());
    }

    #[test]
    fn correlation_report_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let pts = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, s, s, 3.0, 3.0]);
        let clustering = Clustering {
            assignments: vec![0, 0, 1, 1, 2],
            centroids: DMatrix::zeros(3, 2),
            wcss: 0.0,
        };
        let beta = positive_correlation_report(&clustering, &pts);
        assert!(beta[0].abs() < 1e-15);
        assert!((beta[1] - s).abs() < 1e-12);
        assert_eq!(beta[2], 1.0);
    }
}
