//! Per-bin embeddings whose direction describes the harmonic profile at a
//! pitch and whose norm is the note activation.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{CqtSpectrogram, EmbeddingField, GridConfig};

use super::notes::FrameEvent;
use super::salience::{harmonic_partials, pooled_magnitude};

pub const DEFAULT_DIM: usize = 16;

/// Gain of the log-tilt terms relative to the magnitude terms.
const TILT_WEIGHT: f64 = 1.5;
/// Log-ratio scale inside the tilt's `tanh`.
const TILT_SCALE: f64 = 0.2;

/// Timbre feature from harmonic magnitudes `h_1..h_H` (`H = dim / 2`): the
/// unit-normalized magnitudes with their mean removed (so the direction
/// shared by every profile does not dominate cosine similarity), followed by
/// `H` log-tilt terms `w * tanh(s * ln(h_{k+1} / h_k))` for neighbouring
/// partials, closing with the fundamental against the mean partial. The
/// result is unit length, or zero when every partial is zero.
pub fn profile_feature(partials: &[f64]) -> Vec<f64> {
    let h = partials.len();
    let peak = partials.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return vec![0.0; 2 * h];
    }
    let eps = 1e-3 * peak;
    let norm = partials.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mean = partials.iter().sum::<f64>() / h as f64;
    let tilt = |num: f64, den: f64| TILT_WEIGHT * (TILT_SCALE * ((num + eps) / (den + eps)).ln()).tanh();
    let unit: Vec<f64> = partials.iter().map(|a| a / norm).collect();
    let centre = unit.iter().sum::<f64>() / h as f64;
    let mut f: Vec<f64> = unit.iter().map(|a| a - centre).collect();
    f.extend(partials.windows(2).map(|w| tilt(w[1], w[0])));
    f.push(tilt(partials[0], mean));
    let len = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    f.iter_mut().for_each(|v| *v /= len);
    f
}

/// Embedding field `dim x N x T`: wherever `y_n > 0` the vector is the
/// profile feature of the pitch's first `dim / 2` partials (from the pooled
/// magnitude) scaled to norm `y_n`; zero elsewhere.
pub fn bin_embeddings(q_norm: &CqtSpectrogram, y_n: &Array2<f64>, grid: &GridConfig, dim: usize) -> Result<EmbeddingField> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::invalid(format!("embedding dim must be even and >= 2, got {dim}")));
    }
    if y_n.dim() != (grid.n_pitches, q_norm.frames()) {
        return Err(Error::shape(format!("activations {:?} vs {} pitches x {} frames", y_n.dim(), grid.n_pitches, q_norm.frames())));
    }
    let pooled = pooled_magnitude(q_norm);
    let mut field = EmbeddingField::zeros(dim, grid.n_pitches, q_norm.frames());
    field.data.axis_iter_mut(Axis(2)).into_par_iter().enumerate().for_each(|(t, mut slab)| {
        for p in 0..grid.n_pitches {
            let w = y_n[[p, t]];
            if w <= 0.0 {
                continue;
            }
            let f = profile_feature(&harmonic_partials(&pooled, grid, p, t, dim / 2));
            if f.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (j, v) in f.iter().enumerate() {
                slab[[j, p]] = w * v;
            }
        }
    });
    Ok(field)
}

/// Unit direction of the field at one bin, or `None` where it is zero.
pub fn direction(field: &EmbeddingField, pitch: usize, frame: usize) -> Option<Vec<f64>> {
    let v = field.vector(pitch, frame);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.into_iter().map(|x| x / n).collect())
}

/// `sum_t Y_n[p, t] * dir(p, t)` over the event's frames, unit-normalized.
pub fn note_embedding(event: &FrameEvent, field: &EmbeddingField, y_n: &Array2<f64>) -> Result<Vec<f64>> {
    if event.pitch >= field.n_pitches() || event.end > field.frames() || event.end > y_n.ncols() {
        return Err(Error::shape(format!("event {event:?} outside field {:?}", field.data.dim())));
    }
    let mut acc = vec![0.0; field.dim()];
    for t in event.start..event.end {
        let w = y_n[[event.pitch, t]];
        if w == 0.0 {
            continue;
        }
        if let Some(d) = direction(field, event.pitch, t) {
            acc.iter_mut().zip(d).for_each(|(a, x)| *a += w * x);
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(acc.into_iter().map(|x| x / norm).collect())
}
