//! k-means (k-means++ seeding, Lloyd iterations) and the frozen user-group
//! table built by average-pooling each cluster.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::tensor::{axpy, Rng, Tensor};

pub const KIND: &str = "groups";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub m: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            m: 64,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Tensor,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (ties to the lower index) and the objective.
fn assign(points: &Tensor, centroids: &Tensor) -> (Vec<usize>, Vec<f64>, f64) {
    let mut assignments = Vec::with_capacity(points.rows());
    let mut dists = Vec::with_capacity(points.rows());
    for i in 0..points.rows() {
        let p = points.row(i);
        let (best, dist) = (0..centroids.rows())
            .map(|j| (j, sq_dist(p, centroids.row(j))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assignments.push(best);
        dists.push(dist);
    }
    let total = dists.iter().sum();
    (assignments, dists, total)
}

/// Per-cluster means and sizes; empty clusters yield a zero row.
fn cluster_means(points: &Tensor, assignments: &[usize], m: usize) -> (Tensor, Vec<usize>) {
    let mut sums = Tensor::zeros(m, points.cols());
    let mut sizes = vec![0usize; m];
    for (i, &a) in assignments.iter().enumerate() {
        axpy(sums.row_mut(a), 1.0, points.row(i));
        sizes[a] += 1;
    }
    for (j, &s) in sizes.iter().enumerate() {
        if s > 0 {
            let inv = 1.0 / s as f64;
            sums.row_mut(j).iter_mut().for_each(|v| *v *= inv);
        }
    }
    (sums, sizes)
}

fn plus_plus_init(points: &Tensor, m: usize, rng: &mut Rng) -> Tensor {
    let n = points.rows();
    let mut centroids = Tensor::zeros(m, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for j in 1..m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(j).copy_from_slice(points.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    centroids
}

/// Clusters the rows of `points` into `m` groups. The returned centroids
/// are exactly the means of the returned assignments, and every cluster is
/// non-empty.
pub fn kmeans(points: &Tensor, options: &KMeansOptions, rng: &mut Rng) -> Result<KMeansResult> {
    let n = points.rows();
    let m = options.m;
    if m == 0 {
        return Err(Error::Config("k-means needs m >= 1".into()));
    }
    if n < m {
        return Err(Error::Data(format!(
            "k-means needs at least m = {m} points, got {n}; lower m or loosen the active-user threshold"
        )));
    }
    let mut centroids = plus_plus_init(points, m, rng);
    let mut objective: Vec<f64> = Vec::new();
    let mut reseeded_total = 0;
    let mut iterations = 0;
    let mut reseeded_last = false;
    while iterations < options.max_iters {
        iterations += 1;
        let (assignments, dists, total) = assign(points, &centroids);
        if let Some(&prev) = objective.last() {
            assert!(
                total <= prev + 1e-9 * prev.abs().max(1.0),
                "k-means objective increased: {prev} -> {total}"
            );
        }
        objective.push(total);
        let (mut next, sizes) = cluster_means(points, &assignments, m);
        reseeded_last = false;
        let mut taken = vec![false; n];
        for j in 0..m {
            if sizes[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("n >= m leaves a free point");
            taken[far] = true;
            next.row_mut(j).copy_from_slice(points.row(far));
            reseeded_total += 1;
            reseeded_last = true;
        }
        let shift = (0..m)
            .map(|j| sq_dist(next.row(j), centroids.row(j)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < options.tol && !reseeded_last {
            break;
        }
    }
    let (assignments, _, total) = assign(points, &centroids);
    if let Some(&prev) = objective.last() {
        assert!(
            total <= prev + 1e-9 * prev.abs().max(1.0),
            "k-means objective increased: {prev} -> {total}"
        );
    }
    objective.push(total);
    let (centroids, sizes) = cluster_means(points, &assignments, m);
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Data(format!(
            "cluster {j} is empty after {iterations} iterations{}; the points have fewer than m = {m} distinct values",
            if reseeded_last { " (re-seeded on the last one)" } else { "" }
        )));
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        objective,
        iterations,
        reseeded: reseeded_total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProvenance {
    /// SHA-256 of the pre-trained checkpoint file the embeddings came from.
    pub pretrain_checkpoint: String,
    pub m: usize,
    pub seed: u64,
    pub points: usize,
    pub iterations: usize,
    pub objective: f64,
}

/// `E_ug`: one row per cluster, the mean of its member embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEmbeddingTable {
    pub table: Tensor,
    pub sizes: Vec<usize>,
    pub provenance: GroupProvenance,
}

/// Average-pools the points of each cluster.
pub fn build_group_table(assignments: &[usize], points: &Tensor, m: usize) -> (Tensor, Vec<usize>) {
    assert_eq!(assignments.len(), points.rows());
    let (table, sizes) = cluster_means(points, assignments, m);
    assert!(sizes.iter().all(|&s| s > 0), "every cluster must be non-empty");
    (table, sizes)
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    sizes: Vec<usize>,
    provenance: GroupProvenance,
}

impl GroupEmbeddingTable {
    pub fn to_container(&self) -> Result<Container> {
        let meta = Meta {
            sizes: self.sizes.clone(),
            provenance: self.provenance.clone(),
        };
        let mut c = Container::new(KIND, serde_json::to_value(meta)?);
        c.push_tensor("e_ug", &self.table)?;
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(KIND)?;
        let meta: Meta = serde_json::from_value(c.meta.clone())
            .map_err(|e| Error::Corrupt(format!("group table metadata: {e}")))?;
        let table = c.tensor("e_ug")?;
        if meta.sizes.len() != table.rows() || table.rows() != meta.provenance.m {
            return Err(Error::Corrupt("group table sizes disagree with its shape".into()));
        }
        Ok(Self {
            table,
            sizes: meta.sizes,
            provenance: meta.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }
}
