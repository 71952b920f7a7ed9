//! Frame-level multipitch metrics and permutation-invariant matching of
//! estimated sources to references.

use itertools::Itertools;
use ndarray::{Array2, ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Largest source count accepted by [`pit_match`] (6! = 720 assignments).
pub const MAX_PIT_SOURCES: usize = 6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl FrameScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (t, p, n) = (tp as f64, fp as f64, fn_ as f64);
        let precision = ratio(t, t + p);
        let recall = ratio(t, t + n);
        Self {
            tp,
            fp,
            fn_,
            acc: ratio(t, t + p + n),
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
        }
    }

    /// Unweighted mean of the ratio fields; counts are summed.
    pub fn mean(scores: &[FrameScores]) -> FrameScores {
        let n = scores.len().max(1) as f64;
        let sum = |f: fn(&FrameScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        FrameScores {
            tp: scores.iter().map(|s| s.tp).sum(),
            fp: scores.iter().map(|s| s.fp).sum(),
            fn_: scores.iter().map(|s| s.fn_).sum(),
            acc: sum(|s| s.acc),
            precision: sum(|s| s.precision),
            recall: sum(|s| s.recall),
            f1: sum(|s| s.f1),
        }
    }
}

fn check_same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("reference {:?} vs estimate {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Binarize both rolls at `threshold` (active iff `>= threshold`) and count
/// per-bin hits.
pub fn frame_metrics(reference: ArrayView2<f64>, estimate: ArrayView2<f64>, threshold: f64) -> Result<FrameScores> {
    check_same_shape(&reference, &estimate)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    Zip::from(reference).and(estimate).for_each(|&r, &e| match (r >= threshold, e >= threshold) {
        (true, true) => tp += 1,
        (false, true) => fp += 1,
        (true, false) => fn_ += 1,
        (false, false) => {}
    });
    Ok(FrameScores::from_counts(tp, fp, fn_))
}

fn mse(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y)) / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitResult {
    /// `permutation[i]` is the reference index assigned to estimate `i`.
    pub permutation: Vec<usize>,
    /// Scores indexed by reference.
    pub per_source: Vec<FrameScores>,
    pub mean: FrameScores,
    /// Total MSE of the chosen assignment.
    pub mse: f64,
}

/// Evaluate every assignment of estimates to references, keep the one with
/// minimum total MSE on the continuous rolls (ties go to the
/// lexicographically first permutation) and score it on binarized rolls.
pub fn pit_match(references: &[Array2<f64>], estimates: &[Array2<f64>], threshold: f64) -> Result<PitResult> {
    let m = references.len();
    if m != estimates.len() {
        return Err(Error::shape(format!("{m} references vs {} estimates", estimates.len())));
    }
    if m == 0 || m > MAX_PIT_SOURCES {
        return Err(Error::invalid(format!("source count must be in 1..={MAX_PIT_SOURCES}, got {m}")));
    }
    for (r, e) in references.iter().zip(estimates) {
        check_same_shape(&r.view(), &e.view())?;
    }
    for r in &references[1..] {
        check_same_shape(&references[0].view(), &r.view())?;
    }
    // pairwise[i][j] = MSE(estimate i, reference j)
    let pairwise: Vec<Vec<f64>> = estimates
        .par_iter()
        .map(|e| references.iter().map(|r| mse(&e.view(), &r.view())).collect())
        .collect();
    let (permutation, total) = (0..m)
        .permutations(m)
        .map(|p| {
            let total: f64 = p.iter().enumerate().map(|(i, &j)| pairwise[i][j]).sum();
            (p, total)
        })
        .fold((Vec::new(), f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best });
    let mut per_source = vec![FrameScores::default(); m];
    for (i, &j) in permutation.iter().enumerate() {
        per_source[j] = frame_metrics(references[j].view(), estimates[i].view(), threshold)?;
    }
    let mean = FrameScores::mean(&per_source);
    Ok(PitResult { permutation, per_source, mean, mse: total })
}

/// Total MSE of a given assignment, for comparisons against the optimum.
pub fn assignment_mse(references: &[Array2<f64>], estimates: &[Array2<f64>], permutation: &[usize]) -> f64 {
    permutation.iter().enumerate().map(|(i, &j)| mse(&estimates[i].view(), &references[j].view())).sum()
}
