//! Hebbian associative memory.
//!
//! Binary Hopfield storage and recall, plus the continuous variant used for
//! timbre embeddings: rows of `V` are unit-normalized, scaled by their note
//! probability, and stored as `M = U^T U / sum(Y)`. One association pass
//! `V M` pulls each embedding toward the dominant stored directions; fused,
//! it is `V (U^T U) / sum(Y)`, linear attention without a softmax.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 32;

/// Hopfield weights: symmetric with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMemory {
    pub weights: Array2<f64>,
}

impl BinaryMemory {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// `E(x) = -1/2 x W x^T`.
    pub fn energy(&self, x: &[i8]) -> f64 {
        let v = Array1::from_iter(x.iter().map(|&s| s as f64));
        -0.5 * v.dot(&self.weights.dot(&v))
    }
}

/// `W = (1/N) sum_i x_i x_i^T` with the diagonal zeroed.
pub fn hebb_store(patterns: &[Vec<i8>]) -> Result<BinaryMemory> {
    let first = patterns.first().ok_or_else(|| Error::invalid("no patterns to store"))?;
    let n = first.len();
    let mut w = Array2::<f64>::zeros((n, n));
    for (k, p) in patterns.iter().enumerate() {
        if p.len() != n {
            return Err(Error::shape(format!("pattern {k} has length {}, expected {n}", p.len())));
        }
        if p.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!("pattern {k} has entries other than +-1")));
        }
        for i in 0..n {
            for j in 0..n {
                w[[i, j]] += (p[i] * p[j]) as f64;
            }
        }
    }
    w /= patterns.len() as f64;
    w.diag_mut().fill(0.0);
    Ok(BinaryMemory { weights: w })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub state: Vec<i8>,
    pub iterations: usize,
    pub converged: bool,
    /// Energy of the initial state and after each update.
    pub energies: Vec<f64>,
}

/// Synchronous updates `x <- sign(x W)` until a fixed point or `max_iter`.
/// A zero field keeps the unit's previous value; zero probe entries start
/// at +1.
pub fn hopfield_recall(mem: &BinaryMemory, probe: &[f64], max_iter: usize) -> Result<Recall> {
    if probe.len() != mem.n() {
        return Err(Error::shape(format!("probe length {} vs memory size {}", probe.len(), mem.n())));
    }
    let mut x: Vec<i8> = probe.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
    let mut energies = vec![mem.energy(&x)];
    for it in 1..=max_iter {
        let v = Array1::from_iter(x.iter().map(|&s| s as f64));
        let field = v.dot(&mem.weights);
        let next: Vec<i8> = field
            .iter()
            .zip(&x)
            .map(|(&h, &prev)| if h > 0.0 { 1 } else if h < 0.0 { -1 } else { prev })
            .collect();
        let done = next == x;
        x = next;
        energies.push(mem.energy(&x));
        if done {
            return Ok(Recall { state: x, iterations: it, converged: true, energies });
        }
    }
    Ok(Recall { state: x, iterations: max_iter, converged: false, energies })
}

/// Symmetric positive semidefinite `D x D` memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMatrix {
    pub m: Array2<f64>,
}

impl MemoryMatrix {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.m.diag().sum()
    }

    /// Smallest eigenvalue (symmetric eigensolver).
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let mat = nalgebra::DMatrix::from_fn(d, d, |i, j| self.m[[i, j]]);
        mat.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_inputs(v: &Array2<f64>, y: &[f64]) -> Result<f64> {
    if v.nrows() != y.len() {
        return Err(Error::shape(format!("{} embeddings vs {} weights", v.nrows(), y.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("embeddings must be finite"));
    }
    if y.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::invalid("weights must lie in [0,1]"));
    }
    let total: f64 = y.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoSalientBins);
    }
    Ok(total)
}

fn unit_row(row: ArrayView1<f64>) -> Array1<f64> {
    let norm = row.dot(&row).sqrt();
    if norm > 0.0 {
        row.mapv(|x| x / norm)
    } else {
        Array1::zeros(row.len())
    }
}

/// `U = rownormalize(V) * Y`; zero rows stay zero.
fn weighted_rows(v: &Array2<f64>, y: &[f64]) -> Array2<f64> {
    let mut u = Array2::zeros(v.dim());
    for (k, (row, w)) in v.axis_iter(Axis(0)).zip(y).enumerate() {
        if *w != 0.0 {
            u.row_mut(k).assign(&(unit_row(row) * *w));
        }
    }
    u
}

/// `M = U^T U / sum(Y)` for `V: K x D` embeddings and `Y: K` weights.
pub fn weighted_memory(v: &Array2<f64>, y: &[f64]) -> Result<MemoryMatrix> {
    let total = check_inputs(v, y)?;
    let u = weighted_rows(v, y);
    let mut m = u.t().dot(&u);
    m /= total;
    Ok(MemoryMatrix { m })
}

/// `V_hat = V M`.
pub fn associate(v: &Array2<f64>, mem: &MemoryMatrix) -> Result<Array2<f64>> {
    if v.ncols() != mem.dim() {
        return Err(Error::shape(format!("embedding dim {} vs memory dim {}", v.ncols(), mem.dim())));
    }
    Ok(v.dot(&mem.m))
}

/// Fused single association `V (U^T U) / sum(Y)`, evaluated as a `D x D`
/// product first so the cost is `O(K D^2)`.
pub fn associate_once(v: &Array2<f64>, y: &[f64]) -> Result<Array2<f64>> {
    let total = check_inputs(v, y)?;
    let u = weighted_rows(v, y);
    let gram = u.t().dot(&u);
    let mut out = v.dot(&gram);
    out /= total;
    Ok(out)
}
