//! Spectral clustering of unit vectors under cosine affinity.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Above this many points the leading eigenvectors come from subspace
/// iteration instead of a full dense eigendecomposition.
pub const DENSE_LIMIT: usize = 400;
const EXTRA_VECTORS: usize = 4;
const SUBSPACE_MAX_ITER: usize = 500;
const SUBSPACE_TOL: f64 = 1e-10;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster label of each input vector, in `[0, k)`.
    pub labels: Vec<usize>,
    /// Smallest eigenvalues of the normalized Laplacian, ascending (as many
    /// as were computed).
    pub eigenvalues: Vec<f64>,
}

impl Clustering {
    /// Cluster count suggested by the largest gap between consecutive
    /// Laplacian eigenvalues. Advisory only.
    pub fn eigengap_estimate(&self) -> usize {
        eigengap_estimate(&self.eigenvalues)
    }
}

/// `1 + argmax_i (lambda_{i+1} - lambda_i)` over the given ascending
/// eigenvalues; 1 when fewer than two are available.
pub fn eigengap_estimate(eigenvalues: &[f64]) -> usize {
    eigenvalues
        .windows(2)
        .enumerate()
        .fold((1, f64::NEG_INFINITY), |best, (i, w)| if w[1] - w[0] > best.1 { (i + 1, w[1] - w[0]) } else { best })
        .0
}

/// `A_ij = max(0, <v_i, v_j>)` with a zero diagonal.
pub fn cosine_affinity(vectors: &Array2<f64>) -> Array2<f64> {
    let mut a = vectors.dot(&vectors.t());
    a.mapv_inplace(|x| x.max(0.0));
    a.diag_mut().fill(0.0);
    a
}

/// `D^-1/2 A D^-1/2`; rows with zero degree stay zero. Its top eigenvectors
/// are the bottom eigenvectors of the normalized Laplacian `I - (...)`.
fn normalized_affinity(a: &Array2<f64>) -> Array2<f64> {
    let inv_sqrt: Vec<f64> = a.axis_iter(Axis(0)).map(|r| r.sum()).map(|d| if d > 0.0 { d.powf(-0.5) } else { 0.0 }).collect();
    let mut n = a.clone();
    n.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= inv_sqrt[i] * inv_sqrt[j];
        }
    });
    n
}

/// Top `count` eigenpairs (descending eigenvalue) of a symmetric matrix.
fn top_eigen_dense(m: &Array2<f64>, count: usize) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| m[[i, j]]));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(count);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, count), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Orthonormalize columns in place (modified Gram-Schmidt); a column that
/// collapses is replaced by a unit basis vector.
fn orthonormalize(x: &mut Array2<f64>) {
    let (rows, cols) = x.dim();
    for c in 0..cols {
        for prev in 0..c {
            let dot = x.column(c).dot(&x.column(prev));
            let p = x.column(prev).to_owned();
            x.column_mut(c).scaled_add(-dot, &p);
        }
        let norm = x.column(c).dot(&x.column(c)).sqrt();
        if norm > 1e-12 {
            x.column_mut(c).mapv_inplace(|v| v / norm);
        } else {
            x.column_mut(c).fill(0.0);
            x[[c % rows, c]] = 1.0;
        }
    }
}

/// Top `count` eigenpairs of a symmetric matrix with spectrum in
/// `[-1, 1]`, by subspace iteration on `(M + I) / 2` with Rayleigh-Ritz.
fn top_eigen_subspace(m: &Array2<f64>, count: usize, seed: u64) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let p = (count + EXTRA_VECTORS).min(n);
    let mut r = rng::stream(seed, rng::STREAM_CLUSTER);
    let mut x = Array2::from_shape_fn((n, p), |_| r.sample::<f64, _>(StandardNormal));
    orthonormalize(&mut x);
    let mut prev = vec![f64::INFINITY; p];
    let mut shifted = m.clone();
    shifted.diag_mut().mapv_inplace(|v| v + 1.0);
    shifted.mapv_inplace(|v| 0.5 * v);
    for _ in 0..SUBSPACE_MAX_ITER {
        x = shifted.dot(&x);
        orthonormalize(&mut x);
        let ritz = x.t().dot(&m.dot(&x));
        let mut vals: Vec<f64> = (0..p).map(|i| ritz[[i, i]]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let done = vals.iter().zip(&prev).take(count).all(|(a, b)| (a - b).abs() < SUBSPACE_TOL);
        prev = vals;
        if done {
            break;
        }
    }
    // Rayleigh-Ritz on the converged subspace
    let small = x.t().dot(&m.dot(&x));
    let (values, y) = top_eigen_dense(&small, count);
    (values, x.dot(&y))
}

/// Spectral clustering into `k` groups: cosine affinity, symmetric
/// normalized Laplacian, its `k` smallest eigenvectors row-normalized, then
/// k-means with a seeded farthest-point initialization.
pub fn spectral_cluster(vectors: &Array2<f64>, k: usize, seed: u64) -> Result<Clustering> {
    let n = vectors.nrows();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, n });
    }
    let a = cosine_affinity(vectors);
    let norm = normalized_affinity(&a);
    let want = (k + 1).min(n);
    let (values, vecs) = if n <= DENSE_LIMIT {
        top_eigen_dense(&norm, want.max((8).min(n)))
    } else {
        top_eigen_subspace(&norm, want, seed)
    };
    let eigenvalues: Vec<f64> = values.iter().map(|v| 1.0 - v).collect();
    if k == 1 {
        return Ok(Clustering { labels: vec![0; n], eigenvalues });
    }
    let mut embed = vecs.slice(ndarray::s![.., ..k]).to_owned();
    for mut row in embed.axis_iter_mut(Axis(0)) {
        let len = row.dot(&row).sqrt();
        if len > 0.0 {
            row.mapv_inplace(|v| v / len);
        }
    }
    let labels = kmeans(&embed, k, seed)?;
    Ok(Clustering { labels, eigenvalues })
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means. The first centre is a point drawn from `seed`; each
/// further centre is the point farthest from those chosen (lowest index on
/// ties). Empty clusters take the point farthest from its centre.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, n });
    }
    let mut r = rng::stream(seed, rng::STREAM_CLUSTER);
    let first = r.gen_range(0..n);
    let mut centres = vec![points.row(first).to_owned()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centres[0].view())).collect();
    while centres.len() < k {
        let far = (0..n).fold(0, |best, i| if nearest[i] > nearest[best] { i } else { best });
        centres.push(points.row(far).to_owned());
        let c = centres.last().unwrap();
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(points.row(i), c.view()));
        }
    }
    let assign = |centres: &[ndarray::Array1<f64>]| -> Vec<(usize, f64)> {
        (0..n)
            .map(|i| {
                centres
                    .iter()
                    .enumerate()
                    .map(|(c, centre)| (c, sq_dist(points.row(i), centre.view())))
                    .fold((0, f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best })
            })
            .collect()
    };
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let assigned = assign(&centres);
        let mut next: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut counts = vec![0usize; k];
        next.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[next[i]] > 1)
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if assigned[b].1 >= assigned[i].1 => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n leaves a cluster with two points");
                counts[next[far]] -= 1;
                next[far] = c;
                counts[c] = 1;
            }
        }
        if next == labels {
            break;
        }
        labels = next;
        for (c, centre) in centres.iter_mut().enumerate() {
            centre.fill(0.0);
            for i in (0..n).filter(|&i| labels[i] == c) {
                *centre += &points.row(i);
            }
            *centre /= counts[c] as f64;
        }
    }
    Ok(labels)
}

/// Fraction of points whose label matches the truth under the best
/// relabelling.
pub fn best_permutation_accuracy(labels: &[usize], truth: &[usize], k: usize) -> f64 {
    use itertools::Itertools;
    (0..k)
        .permutations(k)
        .map(|p| labels.iter().zip(truth).filter(|(l, t)| p[**l] == **t).count())
        .max()
        .unwrap_or(0) as f64
        / labels.len().max(1) as f64
}
