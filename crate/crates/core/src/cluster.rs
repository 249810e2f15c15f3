//! K-means over learner prediction trajectories and cluster-mean aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::ForecastMatrix;
use crate::series::Period;
use crate::stats;

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Cluster id per point (per learner when produced by [`cluster_learners`]).
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after each Lloyd update, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == cluster).then_some(i))
            .collect()
    }

    /// Every point in its own cluster.
    pub fn singletons(n: usize) -> Self {
        Self {
            k: n,
            assignment: (0..n).collect(),
            centroids: Vec::new(),
            seed: 0,
            inertia: 0.0,
            inertia_history: Vec::new(),
        }
    }

    /// `{k, seed, assignment: name -> cluster, inertia}` JSON.
    pub fn to_json(&self, names: &[String]) -> Result<String> {
        if names.len() != self.assignment.len() {
            return Err(Error::LengthMismatch {
                expected: self.assignment.len(),
                actual: names.len(),
            });
        }
        let assignment: serde_json::Map<String, serde_json::Value> = names
            .iter()
            .zip(&self.assignment)
            .map(|(n, c)| (n.clone(), serde_json::Value::from(*c)))
            .collect();
        let doc = serde_json::json!({
            "k": self.k,
            "seed": self.seed,
            "assignment": assignment,
            "inertia": self.inertia,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !seen.iter().any(|q| *q == p) {
            seen.push(p);
        }
    }
    seen.len()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
        for (i, d) in d2.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            if target < *d {
                chosen = i;
                break;
            }
            target -= d;
        }
        let c = points[chosen].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when assignments no longer change or after `max_iters` updates.
/// A cluster that empties is reseeded at the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("points must be finite and share one dimension"));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::invalid(format!("k = {k} exceeds the {distinct} distinct points")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut inertia_history = Vec::new();

    for _ in 0..max_iters.max(1) {
        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assignment[i]])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                counts[assignment[far]] -= 1;
                assignment[far] = j;
                counts[j] = 1;
                centroids[j] = points[far].clone();
            }
        }
        let inertia: f64 = points.iter().zip(&assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
        inertia_history.push(inertia);

        // assignment step
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }

    let inertia = points.iter().zip(&assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
    Ok(ClusterAssignment {
        k,
        assignment,
        centroids,
        seed,
        inertia,
        inertia_history,
    })
}

/// Mean silhouette coefficient; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    let n = points.len();
    if k < 2 || n < 2 {
        return 0.0;
    }
    let mut counts = vec![0usize; k];
    for &c in assignment {
        counts[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let own = assignment[i];
        if counts[own] < 2 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

const MAX_ITERS: usize = 300;

/// Chooses the candidate with the highest mean silhouette; ties go to the smaller k.
pub fn select_k_points(points: &[Vec<f64>], candidates: &[usize], seed: u64) -> Result<usize> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let valid: Vec<usize> = sorted
        .into_iter()
        .filter(|&k| k >= 1 && k <= points.len())
        .collect();
    if valid.len() == 1 {
        kmeans(points, valid[0], seed, MAX_ITERS)?;
        return Ok(valid[0]);
    }
    let mut best: Option<(usize, f64)> = None;
    for k in valid {
        let Ok(fit) = kmeans(points, k, seed, MAX_ITERS) else {
            continue;
        };
        let score = silhouette(points, &fit.assignment, k);
        log::debug!("select_k: k={k} silhouette={score:.4}");
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((k, score));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| Error::invalid(format!("no valid cluster count among {candidates:?}")))
}

/// Learner trajectories over the given rows, imputed and standardized per step.
///
/// Unavailable entries take the row mean of available learners; rows with
/// no available learner are skipped. Each remaining step is then z-scored
/// across learners.
pub fn learner_trajectories(matrix: &ForecastMatrix) -> Vec<Vec<f64>> {
    let n_models = matrix.n_models();
    let mut points = vec![Vec::new(); n_models];
    for row in matrix.rows() {
        let available: Vec<f64> = row.iter().flatten().copied().collect();
        if available.is_empty() {
            continue;
        }
        let fill = stats::mean(&available);
        let column: Vec<f64> = row.iter().map(|e| e.unwrap_or(fill)).collect();
        let m = stats::mean(&column);
        let sd = stats::std_pop(&column);
        for (p, v) in points.iter_mut().zip(&column) {
            p.push(if sd > 0.0 { (v - m) / sd } else { 0.0 });
        }
    }
    points
}

/// Clusters learners by their training-period trajectories.
pub fn cluster_learners(train_matrix: &ForecastMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let points = learner_trajectories(train_matrix);
    if points.first().map_or(true, |p| p.is_empty()) {
        return Err(Error::invalid("training matrix has no step with an available prediction"));
    }
    kmeans(&points, k, seed, MAX_ITERS)
}

pub fn select_k(train_matrix: &ForecastMatrix, candidates: &[usize], seed: u64) -> Result<usize> {
    let points = learner_trajectories(train_matrix);
    if points.first().map_or(true, |p| p.is_empty()) {
        return Err(Error::invalid("training matrix has no step with an available prediction"));
    }
    select_k_points(&points, candidates, seed)
}

/// Cluster-mean predictions per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterForecastMatrix {
    pub periods: Vec<Period>,
    pub k: usize,
    /// `entries[step][cluster]`; `None` only when every member is unavailable.
    pub entries: Vec<Vec<Option<f64>>>,
}

impl ClusterForecastMatrix {
    pub fn column_names(&self) -> Vec<String> {
        (0..self.k).map(|j| format!("cluster_{j}")).collect()
    }
}

pub fn aggregate_clusters(matrix: &ForecastMatrix, assignment: &ClusterAssignment) -> Result<ClusterForecastMatrix> {
    if assignment.assignment.len() != matrix.n_models() {
        return Err(Error::LengthMismatch {
            expected: matrix.n_models(),
            actual: assignment.assignment.len(),
        });
    }
    let k = assignment.k;
    let entries = matrix
        .rows()
        .iter()
        .map(|row| {
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for (cell, &c) in row.iter().zip(&assignment.assignment) {
                if let Some(v) = cell {
                    sums[c] += v;
                    counts[c] += 1;
                }
            }
            sums.iter()
                .zip(&counts)
                .map(|(s, &n)| (n > 0).then(|| s / n as f64))
                .collect()
        })
        .collect();
    Ok(ClusterForecastMatrix {
        periods: matrix.periods().to_vec(),
        k,
        entries,
    })
}
