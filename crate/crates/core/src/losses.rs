//! Loss toolbox: deep-clustering loss, binary focal loss, magnitude
//! balancing and dynamic weight averaging.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::{Error, Result};

fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

fn check_assignments(v: &Array2<f64>, z: &Array2<f64>) -> Result<()> {
    if v.nrows() != z.nrows() {
        return Err(Error::shape(format!("{} embeddings vs {} assignments", v.nrows(), z.nrows())));
    }
    if v.nrows() == 0 {
        return Err(Error::invalid("deep clustering loss needs at least one bin"));
    }
    for (k, row) in z.rows().into_iter().enumerate() {
        let ones = row.iter().filter(|&&x| x == 1.0).count();
        let zeros = row.iter().filter(|&&x| x == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::NotOneHot(k));
        }
    }
    Ok(())
}

/// `||V V^T - Z Z^T||_F^2` for `V: K x D` embeddings and one-hot
/// `Z: K x M`, expanded as `||V^T V||^2 - 2 ||V^T Z||^2 + ||Z^T Z||^2`
/// so no `K x K` matrix is formed.
pub fn deep_cluster_loss(v: &Array2<f64>, z: &Array2<f64>) -> Result<f64> {
    check_assignments(v, z)?;
    let vtv = v.t().dot(v);
    let vtz = v.t().dot(z);
    let ztz = z.t().dot(z);
    Ok(frobenius_sq(&vtv) - 2.0 * frobenius_sq(&vtz) + frobenius_sq(&ztz))
}

/// Direct `K x K` form of [`deep_cluster_loss`], for checking.
pub fn deep_cluster_loss_naive(v: &Array2<f64>, z: &Array2<f64>) -> Result<f64> {
    check_assignments(v, z)?;
    let diff = v.dot(&v.t()) - z.dot(&z.t());
    Ok(frobenius_sq(&diff))
}

pub const FOCAL_EPS: f64 = 1e-7;
/// Positive-class weight for note targets.
pub const NOTE_ALPHA: f64 = 0.2;
/// Positive-class weight for onset targets.
pub const ONSET_ALPHA: f64 = 0.06;
pub const FOCAL_GAMMA: f64 = 1.0;

fn check_focal(p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::shape(format!("{} predictions vs {} targets", p.len(), y.len())));
    }
    if p.is_empty() {
        return Err(Error::invalid("focal loss needs at least one element"));
    }
    if y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::invalid("focal targets must be 0 or 1"));
    }
    Ok(())
}

/// Mean of `-alpha_t (1 - p_t)^gamma ln(p_t)`, with `p_t = p` and
/// `alpha_t = alpha` for positive targets, `1 - p` and `1 - alpha`
/// otherwise. Probabilities are clamped to `[eps, 1 - eps]`.
pub fn focal_loss(p: &[f64], y: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
    check_focal(p, y)?;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            let (pt, at) = if y == 1.0 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Analytic gradient of [`focal_loss`] with respect to each `p` (zero where
/// the clamp is active).
pub fn focal_loss_grad(p: &[f64], y: &[f64], alpha: f64, gamma: f64) -> Result<Vec<f64>> {
    check_focal(p, y)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p <= FOCAL_EPS || p >= 1.0 - FOCAL_EPS {
                return 0.0;
            }
            // d/dp_t of -a (1 - p_t)^g ln p_t, then chain through p_t = p or 1 - p
            let (pt, at, sign) = if y == 1.0 { (p, alpha, 1.0) } else { (1.0 - p, 1.0 - alpha, -1.0) };
            let focal = (1.0 - pt).powf(gamma);
            let d_pt = if gamma == 0.0 {
                -at / pt
            } else {
                at * (gamma * (1.0 - pt).powf(gamma - 1.0) * pt.ln() - focal / pt)
            };
            sign * d_pt / n
        })
        .collect())
}

/// Plain binary cross-entropy mean with the same clamp.
pub fn bce(p: &[f64], y: &[f64]) -> Result<f64> {
    check_focal(p, y)?;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Epoch-level loss history shared by magnitude balancing and DWA.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    epochs: VecDeque<Vec<f64>>,
    smoothed: Option<Vec<f64>>,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one epoch's mean losses; only the last two epochs are kept.
    pub fn record_epoch(&mut self, losses: &[f64]) -> Result<()> {
        check_positive(losses)?;
        if let Some(prev) = self.epochs.back() {
            if prev.len() != losses.len() {
                return Err(Error::shape(format!("{} losses, history has {}", losses.len(), prev.len())));
            }
        }
        if self.epochs.len() == 2 {
            self.epochs.pop_front();
        }
        self.epochs.push_back(losses.to_vec());
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn smoothed(&self) -> Option<&[f64]> {
        self.smoothed.as_deref()
    }
}

fn check_positive(losses: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::invalid("need at least one loss"));
    }
    for (index, &value) in losses.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveLoss { index, value });
        }
    }
    Ok(())
}

/// Raw weights `alpha_i = (1/L_i) / sum_j (1/L_j)`, so every `alpha_i L_i`
/// equals `1 / sum_j (1/L_j)`, the parallel combination of the losses.
pub fn balance_weights(losses: &[f64]) -> Result<Vec<f64>> {
    check_positive(losses)?;
    let inv_sum: f64 = losses.iter().map(|l| 1.0 / l).sum();
    Ok(losses.iter().map(|l| (1.0 / l) / inv_sum).collect())
}

/// Magnitude-balancing weights smoothed by a first-order IIR filter:
/// `s <- beta s + (1 - beta) raw`, seeded with the first raw weights.
pub fn magnitude_balance(losses: &[f64], history: &mut LossHistory, beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta must lie in [0,1]"));
    }
    let raw = balance_weights(losses)?;
    let next = match history.smoothed.take() {
        Some(prev) if prev.len() == raw.len() => {
            prev.iter().zip(&raw).map(|(s, r)| beta * s + (1.0 - beta) * r).collect()
        }
        Some(prev) => {
            history.smoothed = Some(prev);
            return Err(Error::shape("loss count changed between calls"));
        }
        None => raw,
    };
    history.smoothed = Some(next.clone());
    Ok(next)
}

pub const DEFAULT_BETA: f64 = 0.9;

/// `softmax(r / T)` with `r_i = L_{t-1,i} / L_{t-2,i}`. Weights sum to 1;
/// uniform until two epochs are recorded.
pub fn dwa_weights(history: &LossHistory, n_losses: usize, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    if history.epochs.len() < 2 {
        return Ok(vec![1.0 / n_losses as f64; n_losses]);
    }
    let (older, newer) = (&history.epochs[0], &history.epochs[1]);
    if newer.len() != n_losses {
        return Err(Error::shape(format!("history tracks {} losses, asked for {n_losses}", newer.len())));
    }
    let ratios: Vec<f64> = newer.iter().zip(older).map(|(a, b)| a / b).collect();
    Ok(softmax(&ratios.iter().map(|r| r / temperature).collect::<Vec<_>>()))
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    fn one_hot(labels: &[usize], m: usize) -> Array2<f64> {
        Array2::from_shape_fn((labels.len(), m), |(k, c)| (labels[k] == c) as u8 as f64)
    }

    #[test]
    fn perfect_embedding_has_zero_loss() {
        let z = one_hot(&[0, 2, 1, 1, 0], 3);
        assert_eq!(deep_cluster_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn two_bin_hand_value() {
        let v = arr2(&[[1.0], [1.0]]);
        let z = one_hot(&[0, 1], 2);
        assert!((deep_cluster_loss_naive(&v, &z).unwrap() - 2.0).abs() < 1e-12);
        assert!((deep_cluster_loss(&v, &z).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn expanded_matches_naive() {
        let mut rng = crate::rng::stream(5, 77);
        for _ in 0..50 {
            let k = rng.gen_range(1..=50);
            let d = rng.gen_range(1..=8);
            let m = rng.gen_range(1..=4);
            let v = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..m)).collect();
            let z = one_hot(&labels, m);
            let (a, b) = (deep_cluster_loss(&v, &z).unwrap(), deep_cluster_loss_naive(&v, &z).unwrap());
            assert!(a >= -1e-9 && b >= 0.0);
            assert!((a - b).abs() <= 1e-9 * b.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_one_hot() {
        let v = arr2(&[[1.0], [1.0]]);
        assert!(matches!(deep_cluster_loss(&v, &arr2(&[[1.0, 1.0], [0.0, 1.0]])), Err(Error::NotOneHot(0))));
        assert!(matches!(deep_cluster_loss(&v, &arr2(&[[1.0, 0.0], [0.0, 0.5]])), Err(Error::NotOneHot(1))));
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let p = [0.1, 0.4, 0.8, 0.99];
        let y = [0.0, 1.0, 1.0, 0.0];
        let fl = focal_loss(&p, &y, 0.5, 0.0).unwrap();
        assert!((fl - 0.5 * bce(&p, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn focal_single_element_value() {
        let fl = focal_loss(&[0.5], &[1.0], 0.2, 1.0).unwrap();
        assert!((fl - 0.2 * 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((fl - 0.0693).abs() < 1e-4);
    }

    #[test]
    fn focal_perfect_prediction_is_tiny() {
        let y = [1.0, 0.0, 1.0];
        let fl = focal_loss(&y, &y, NOTE_ALPHA, FOCAL_GAMMA).unwrap();
        assert!(fl <= NOTE_ALPHA.max(1.0 - NOTE_ALPHA) * 1e-7 * (1.0 - 1e-7f64).ln().abs() + 1e-18);
        assert!(focal_loss(&[0.5], &[1.0, 0.0], 0.2, 1.0).is_err());
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(8, 3);
        for gamma in [0.0, 1.0, 2.0] {
            let p: Vec<f64> = (0..32).map(|_| rng.gen_range(0.05..0.95)).collect();
            let y: Vec<f64> = (0..32).map(|_| rng.gen_bool(0.3) as u8 as f64).collect();
            let g = focal_loss_grad(&p, &y, ONSET_ALPHA, gamma).unwrap();
            let h = 1e-5;
            for i in 0..p.len() {
                let (mut up, mut dn) = (p.clone(), p.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (focal_loss(&up, &y, ONSET_ALPHA, gamma).unwrap()
                    - focal_loss(&dn, &y, ONSET_ALPHA, gamma).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-8), "gamma {gamma} i {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn balance_equal_losses() {
        let mut h = LossHistory::new();
        assert_eq!(magnitude_balance(&[2.0, 2.0], &mut h, 0.9).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn balance_one_three() {
        let mut h = LossHistory::new();
        let w = magnitude_balance(&[1.0, 3.0], &mut h, 0.0).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        assert!((w[0] * 1.0 - 0.75).abs() < 1e-12 && (w[1] * 3.0 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn balance_products_equal_parallel_term() {
        let mut rng = crate::rng::stream(2, 2);
        for _ in 0..20 {
            let losses: Vec<f64> = (0..rng.gen_range(1..8)).map(|_| 10f64.powf(rng.gen_range(-3.0..4.0))).collect();
            let mut h = LossHistory::new();
            let w = magnitude_balance(&losses, &mut h, 0.0).unwrap();
            let parallel = 1.0 / losses.iter().map(|l| 1.0 / l).sum::<f64>();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, l) in w.iter().zip(&losses) {
                assert!((a * l - parallel).abs() <= 1e-12 * parallel.max(1.0));
            }
        }
    }

    #[test]
    fn balance_smoothing_and_errors() {
        let mut h = LossHistory::new();
        let first = magnitude_balance(&[1.0, 1.0], &mut h, 0.5).unwrap();
        assert_eq!(first, vec![0.5, 0.5]);
        let second = magnitude_balance(&[1.0, 3.0], &mut h, 0.5).unwrap();
        assert!((second[0] - 0.625).abs() < 1e-12 && (second[1] - 0.375).abs() < 1e-12);
        assert!(matches!(magnitude_balance(&[1.0, 0.0], &mut h, 0.5), Err(Error::NonPositiveLoss { index: 1, .. })));
        assert!(magnitude_balance(&[1.0, 1.0, 1.0], &mut h, 0.5).is_err());
        assert_eq!(h.smoothed().unwrap(), &second[..]);
    }

    #[test]
    fn dwa_bootstrap_and_limits() {
        let mut h = LossHistory::new();
        assert_eq!(dwa_weights(&h, 3, 2.0).unwrap(), vec![1.0 / 3.0; 3]);
        h.record_epoch(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(dwa_weights(&h, 3, 2.0).unwrap(), vec![1.0 / 3.0; 3]);
        h.record_epoch(&[0.5, 1.0, 2.0]).unwrap();
        let w = dwa_weights(&h, 3, 2.0).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        h.record_epoch(&[0.5, 0.5, 1.0]).unwrap();
        let w = dwa_weights(&h, 3, 1e6).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-6));
        assert_eq!(h.epochs(), 2);
    }

    #[test]
    fn dwa_favours_slower_loss() {
        let mut h = LossHistory::new();
        h.record_epoch(&[1.0, 1.0]).unwrap();
        h.record_epoch(&[1.0, 0.5]).unwrap();
        let w = dwa_weights(&h, 2, 1.0).unwrap();
        let e = 0.5f64.exp();
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((w[0] - 0.622).abs() < 1e-3 && (w[1] - 0.378).abs() < 1e-3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
