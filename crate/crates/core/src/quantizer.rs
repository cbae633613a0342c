//! Action prototypes: seeded mini-batch K-means over projected deltas.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Array2<f64>,
    /// Inertia after each accepted full-batch refinement step.
    pub inertia_history: Vec<f64>,
}

impl Codebook {
    pub fn new(centroids: Array2<f64>) -> Result<Self> {
        if centroids.nrows() == 0 || centroids.ncols() == 0 {
            return Err(Error::EmptyList);
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("centroids contain non-finite values".into()));
        }
        Ok(Codebook {
            centroids,
            inertia_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn quantize(&self, point: ArrayView1<f64>) -> Result<usize> {
        quantize(point, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub batch_size: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Upper bound on full-batch refinement steps.
    pub refine_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            batch_size: 256,
            max_iters: 200,
            tol: 1e-4,
            refine_iters: 300,
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
fn nearest(point: ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `argminₖ ‖v − cₖ‖₂`.
pub fn quantize(point: ArrayView1<f64>, codebook: &Codebook) -> Result<usize> {
    if point.len() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            actual: point.len(),
        });
    }
    Ok(nearest(point, codebook.centroids.view()).0)
}

fn distinct_count(points: ArrayView2<f64>, stop_at: usize) -> usize {
    let mut seen = HashSet::new();
    for row in points.rows() {
        seen.insert(row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= stop_at {
            break;
        }
    }
    seen.len()
}

/// k-means++ seeding.
pub fn kmeans_pp_init(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("cluster count must be positive".into()));
    }
    let distinct = distinct_count(points, k);
    if distinct < k {
        return Err(Error::TooFewPoints { needed: k, distinct });
    }
    let n = points.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < d {
                break;
            }
            target -= d;
        }
        let chosen = chosen.expect("a point with positive distance exists");
        centroids.row_mut(c).assign(&points.row(chosen));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    Ok(centroids)
}

/// Mini-batch K-means followed by full-batch Lloyd refinement.
pub fn fit(points: ArrayView2<f64>, k: usize, seed: u64, config: &KMeansConfig) -> Result<Codebook> {
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut centroids = kmeans_pp_init(points, k, seed)?;
    let n = points.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b6d_6561_6e73);
    let mut counts = vec![0usize; k];
    let batch = config.batch_size.min(n);
    for _ in 0..config.max_iters {
        let previous = centroids.clone();
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
        let assigned: Vec<usize> = idx
            .iter()
            .map(|&i| nearest(points.row(i), centroids.view()).0)
            .collect();
        for (&i, &c) in idx.iter().zip(&assigned) {
            counts[c] += 1;
            let lr = 1.0 / counts[c] as f64;
            let mut row = centroids.row_mut(c);
            row.zip_mut_with(&points.row(i), |v, &x| *v += lr * (x - *v));
        }
        let shift = previous
            .rows()
            .into_iter()
            .zip(centroids.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        if shift < config.tol {
            break;
        }
    }
    let inertia_history = refine(points, &mut centroids, config.refine_iters);
    Ok(Codebook {
        centroids,
        inertia_history,
    })
}

fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> (Vec<usize>, Vec<f64>) {
    points
        .rows()
        .into_iter()
        .map(|p| nearest(p, centroids))
        .unzip()
}

/// Full-batch Lloyd passes. Empty clusters are moved onto the point farthest
/// from its centroid. A step is accepted only if it strictly lowers inertia,
/// so the recorded history is non-increasing.
fn refine(points: ArrayView2<f64>, centroids: &mut Array2<f64>, max_iters: usize) -> Vec<f64> {
    let k = centroids.nrows();
    let (mut labels, mut dists) = assign(points, centroids.view());
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    for _ in 0..max_iters {
        let mut candidate = centroids.clone();
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (p, &c) in points.rows().into_iter().zip(&labels) {
            let mut s = sums.row_mut(c);
            s += &p;
            counts[c] += 1;
        }
        let mut taken: HashSet<usize> = HashSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                let mean: Array1<f64> = &sums.row(c) / counts[c] as f64;
                candidate.row_mut(c).assign(&mean);
            } else {
                let far = dists
                    .iter()
                    .enumerate()
                    .filter(|(i, &d)| d > 0.0 && !taken.contains(i))
                    .fold(None, |best: Option<(usize, f64)>, (i, &d)| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    });
                if let Some((i, _)) = far {
                    taken.insert(i);
                    candidate.row_mut(c).assign(&points.row(i));
                }
            }
        }
        let (new_labels, new_dists) = assign(points, candidate.view());
        let new_inertia: f64 = new_dists.iter().sum();
        if new_inertia >= inertia {
            break;
        }
        *centroids = candidate;
        labels = new_labels;
        dists = new_dists;
        inertia = new_inertia;
        history.push(inertia);
    }
    history
}

/// Sum of squared distances to the nearest centroid.
pub fn inertia(points: ArrayView2<f64>, codebook: &Codebook) -> f64 {
    assign(points, codebook.centroids.view()).1.iter().sum()
}
