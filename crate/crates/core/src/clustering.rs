//! K-Means over query vectors: the token grouping that cluster-sparse
//! attention restricts itself to.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, input_err, numeric_err, Result};
use crate::numeric::Tensor;

/// How the first centroid is picked. Every later centroid is the point
/// farthest from those already chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KMeansInit {
    /// Start from the point farthest from the data mean. Independent of the
    /// seed and of row order.
    #[default]
    FarthestFromMean,
    /// Start from a point drawn with the configured seed.
    SeededFarthest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub init: KMeansInit,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 10,
            seed: 0,
            init: KMeansInit::default(),
        }
    }
}

/// Result of clustering `n` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id of every token, in `[0, k)`.
    pub assignment: Vec<usize>,
    /// `k × d` cluster means.
    pub centroids: Tensor,
    /// Tokens per cluster; no zeros.
    pub sizes: Vec<usize>,
    /// Lloyd iterations performed (assignment passes).
    pub iterations: usize,
    /// Within-cluster squared cost after each assignment pass.
    pub cost_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Builds an assignment from explicit labels, e.g. to hold clusters fixed.
    pub fn from_labels(points: &Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, d) = points.as_matrix()?;
        if labels.len() != n {
            return Err(dim_err!("{} labels for {n} points", labels.len()));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        if sizes.contains(&0) {
            return Err(input_err!("cluster labels must be contiguous from 0"));
        }
        let centroids = means(points.data(), d, &labels, &sizes);
        Ok(Self {
            assignment: labels,
            centroids: Tensor::new(vec![k, d], centroids)?,
            sizes,
            iterations: 0,
            cost_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Token indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Sum of squared distances from every point to its centroid.
    pub fn cost(&self, points: &Tensor) -> f64 {
        let d = points.cols();
        self.assignment
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(points.row(i), &self.centroids.data()[c * d..(c + 1) * d]))
            .sum()
    }
}

/// `max(1, ceil(log2 n))`, never above `n`.
pub fn choose_cluster_count(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(input_err!("cannot cluster zero tokens"));
    }
    let ceil_log2 = if n == 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    };
    Ok(ceil_log2.clamp(1, n))
}

/// Lloyd's algorithm with farthest-point seeding and empty-cluster repair.
///
/// Nearest-centroid ties go to the lowest cluster index; farthest-point ties
/// go to the lexicographically smallest point, so results do not depend on
/// row order for distinct points.
pub fn kmeans_fit(points: &Tensor, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    let (n, d) = points.as_matrix()?;
    let k = cfg.k;
    if k == 0 {
        return Err(input_err!("k must be at least 1"));
    }
    if n < k {
        return Err(input_err!("cannot form {k} clusters from {n} points"));
    }
    if !points.is_finite() {
        return Err(numeric_err!("k-means input contains non-finite values"));
    }
    let data = points.data();
    let row = |i: usize| &data[i * d..(i + 1) * d];

    let mut centroids = init_centroids(data, n, d, cfg);
    let mut assignment = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut cost_history = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters.max(1) {
        let mut changed = false;
        let mut cost = 0.0;
        for i in 0..n {
            let (c, dd) = nearest(row(i), &centroids, k, d);
            changed |= assignment[i] != c;
            assignment[i] = c;
            dist[i] = dd;
            cost += dd;
        }
        iterations += 1;
        cost_history.push(cost);
        if !changed {
            break;
        }

        let mut sizes = vec![0usize; k];
        for &c in &assignment {
            sizes[c] += 1;
        }
        centroids = means(data, d, &assignment, &sizes);
        let mut taken = vec![false; n];
        for j in (0..k).filter(|&j| sizes[j] == 0) {
            for i in 0..n {
                let c = assignment[i];
                dist[i] = sq_dist(row(i), &centroids[c * d..(c + 1) * d]);
            }
            if let Some(far) = farthest(data, d, &dist, |i| !taken[i]) {
                taken[far] = true;
                centroids[j * d..(j + 1) * d].copy_from_slice(row(far));
            }
        }
    }

    // Final repair: every cluster keeps at least one member.
    let mut sizes = vec![0usize; k];
    for &c in &assignment {
        sizes[c] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        for i in 0..n {
            let c = assignment[i];
            dist[i] = sq_dist(row(i), &centroids[c * d..(c + 1) * d]);
        }
        let far = farthest(data, d, &dist, |i| sizes[assignment[i]] > 1)
            .expect("n >= k guarantees a cluster with a spare member");
        sizes[assignment[far]] -= 1;
        assignment[far] = j;
        sizes[j] = 1;
        centroids[j * d..(j + 1) * d].copy_from_slice(row(far));
    }
    let centroids = means(data, d, &assignment, &sizes);

    Ok(ClusterAssignment {
        assignment,
        centroids: Tensor::new(vec![k, d], centroids)?,
        sizes,
        iterations,
        cost_history,
    })
}

fn init_centroids(data: &[f64], n: usize, d: usize, cfg: &KMeansConfig) -> Vec<f64> {
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let first = match cfg.init {
        KMeansInit::SeededFarthest => ChaCha8Rng::seed_from_u64(cfg.seed).random_range(0..n),
        KMeansInit::FarthestFromMean => {
            let mut mean = vec![0.0; d];
            for i in 0..n {
                for (m, v) in mean.iter_mut().zip(row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let dist: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &mean)).collect();
            farthest(data, d, &dist, |_| true).expect("n >= 1")
        }
    };
    let mut centroids = Vec::with_capacity(cfg.k * d);
    centroids.extend_from_slice(row(first));
    let mut min_dist: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..cfg.k {
        let next = farthest(data, d, &min_dist, |_| true).expect("n >= 1");
        centroids.extend_from_slice(row(next));
        for (i, md) in min_dist.iter_mut().enumerate() {
            *md = md.min(sq_dist(row(i), row(next)));
        }
    }
    centroids
}

/// Index with the largest `dist` among eligible points; ties resolved to the
/// lexicographically smallest point.
fn farthest(
    data: &[f64],
    d: usize,
    dist: &[f64],
    eligible: impl Fn(usize) -> bool,
) -> Option<usize> {
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut best: Option<usize> = None;
    for i in (0..dist.len()).filter(|&i| eligible(i)) {
        best = match best {
            None => Some(i),
            Some(b) => match dist[i].partial_cmp(&dist[b]).unwrap_or(Ordering::Equal) {
                Ordering::Greater => Some(i),
                Ordering::Equal if lex_less(row(i), row(b)) => Some(i),
                _ => Some(b),
            },
        };
    }
    best
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn nearest(p: &[f64], centroids: &[f64], k: usize, d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..k {
        let dd = sq_dist(p, &centroids[j * d..(j + 1) * d]);
        if dd < best.1 {
            best = (j, dd);
        }
    }
    best
}

fn means(data: &[f64], d: usize, assignment: &[usize], sizes: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; sizes.len() * d];
    for (i, &c) in assignment.iter().enumerate() {
        for (o, v) in out[c * d..(c + 1) * d].iter_mut().zip(&data[i * d..(i + 1) * d]) {
            *o += v;
        }
    }
    for (j, &s) in sizes.iter().enumerate() {
        if s > 0 {
            let inv = 1.0 / s as f64;
            out[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= inv);
        }
    }
    out
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
