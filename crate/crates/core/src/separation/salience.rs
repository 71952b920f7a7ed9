//! Harmonic-salience transcription: a timbre-agnostic stand-in that maps a
//! normalized constant-Q spectrogram to note and onset activations.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqt::harmonic_shift;
use crate::error::Result;
use crate::synth::N_HARMONICS;
use crate::types::{CqtSpectrogram, GridConfig, Pianoroll};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SalienceConfig {
    /// Harmonics summed per pitch.
    pub harmonics: usize,
    /// Weight of harmonic `h` is `h^-harmonic_decay`.
    pub harmonic_decay: f64,
    /// Half-width (in bins) of the spectral envelope used for whitening.
    pub whitening_span: usize,
    /// Exponent of the envelope division: 0 leaves the spectrum as is,
    /// 1 flattens it completely.
    pub whitening_strength: f64,
    /// Fraction of the sub-octave's salience subtracted from each pitch.
    pub octave_suppression: f64,
    /// A pitch keeps its salience only in proportion to how much of its
    /// fundamental is present, relative to this fraction of its strongest
    /// partial.
    pub fundamental_gate: f64,
    /// Compression exponent applied after normalizing to the clip maximum.
    pub compression: f64,
    /// Rows either side of a partial's peak cleared when its note is
    /// accepted.
    pub subtraction_span: usize,
    /// Most pitches accepted per frame.
    pub max_polyphony: usize,
    /// Stop accepting once the best score falls to this fraction of the
    /// clip's loudest pitch score.
    pub floor: f64,
    /// Report each accepted pitch with the evidence it won on (residual,
    /// after earlier pitches took their partials) rather than its harmonic
    /// sum over the full spectrum. Keeps partials shared with a louder note
    /// from inflating the quieter one.
    pub report_residual: bool,
}

impl Default for SalienceConfig {
    fn default() -> Self {
        Self {
            harmonics: N_HARMONICS,
            harmonic_decay: 0.5,
            whitening_span: 18,
            whitening_strength: 0.5,
            octave_suppression: 0.5,
            fundamental_gate: 0.25,
            compression: 0.5,
            subtraction_span: 2,
            max_polyphony: 8,
            floor: 0.1,
            report_residual: true,
        }
    }
}

/// Magnitudes max-pooled over each pitch's neighbouring bins, so a note
/// detuned by up to a third of a semitone still lands on its centre row.
pub fn pooled_magnitude(q: &CqtSpectrogram) -> Array2<f64> {
    let mag = q.magnitude();
    let rows = mag.nrows();
    Array2::from_shape_fn(mag.dim(), |(r, t)| {
        let lo = r.saturating_sub(1);
        let hi = (r + 1).min(rows - 1);
        (lo..=hi).map(|i| mag[[i, t]]).fold(0.0, f64::max)
    })
}

fn whiten(pooled: &Array2<f64>, span: usize, strength: f64) -> Array2<f64> {
    if strength == 0.0 {
        return pooled.clone();
    }
    let rows = pooled.nrows();
    let mut out = Array2::zeros(pooled.dim());
    out.axis_iter_mut(Axis(1))
        .into_par_iter()
        .zip(pooled.axis_iter(Axis(1)))
        .for_each(|(mut dst, col)| {
            let peak = col.iter().copied().fold(0.0, f64::max);
            if peak == 0.0 {
                return;
            }
            let floor = 1e-3 * peak;
            let mut prefix = vec![0.0; rows + 1];
            for r in 0..rows {
                prefix[r + 1] = prefix[r] + col[r];
            }
            for r in 0..rows {
                let lo = r.saturating_sub(span);
                let hi = (r + span + 1).min(rows);
                let env = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                dst[r] = col[r] / (env + floor).powf(strength);
            }
        });
    out
}

/// Per-pitch harmonic partial magnitudes `P[row(n) + shift(h), t]` for
/// `h = 1..=harmonics`, zero beyond the spectrogram.
pub fn harmonic_partials(pooled: &Array2<f64>, grid: &GridConfig, pitch: usize, frame: usize, harmonics: usize) -> Vec<f64> {
    let base = grid.pitch_row(pitch) as isize;
    (1..=harmonics)
        .map(|h| {
            let r = base + harmonic_shift(h as f64, grid);
            if r >= 0 && (r as usize) < pooled.nrows() {
                pooled[[r as usize, frame]]
            } else {
                0.0
            }
        })
        .collect()
}

/// Note activations `Y_n` and onset activations `Y_o`, both in `[0,1]`.
///
/// Per frame, pitches are accepted greedily from a residual spectrum (the
/// whitened, pooled magnitude). A candidate's score is its weighted
/// harmonic sum, gated by the presence of its fundamental, minus a fraction
/// of its sub-octave's score (half-wave rectified). The best candidate is
/// accepted with that score and its partials are removed from the residual
/// around their peaks, so partials it explains no longer support other
/// pitches; this repeats until the best score falls below the floor.
/// Scores are normalized to the clip maximum and compressed. `Y_o` is the
/// rectified rise of `Y_n` relative to its new level (see
/// [`onset_activation`]).
pub fn salience_transcribe(q_norm: &CqtSpectrogram, grid: &GridConfig) -> Result<Pianoroll> {
    salience_transcribe_with(q_norm, grid, &SalienceConfig::default())
}

struct FrameContext<'a> {
    grid: &'a GridConfig,
    weights: &'a [f64],
    cfg: &'a SalienceConfig,
    shifts: Vec<isize>,
}

impl FrameContext<'_> {
    /// Peak row and pooled magnitude of each harmonic of `pitch`.
    fn partials(&self, residual: &[f64], pitch: usize) -> Vec<(usize, f64)> {
        let base = self.grid.pitch_row(pitch) as isize;
        let rows = residual.len() as isize;
        self.shifts
            .iter()
            .map(|&s| {
                let c = base + s;
                (c - 1..=c + 1)
                    .filter(|r| (0..rows).contains(r))
                    .map(|r| (r as usize, residual[r as usize]))
                    .fold((c.clamp(0, rows - 1) as usize, 0.0), |best, cand| if cand.1 > best.1 { cand } else { best })
            })
            .collect()
    }

    fn harmonic_sum(&self, spectrum: &[f64], pitch: usize) -> f64 {
        self.partials(spectrum, pitch).iter().zip(self.weights).map(|(a, w)| a.1 * w).sum()
    }

    /// Fraction of the fundamental present relative to the strongest
    /// partial, saturating at `fundamental_gate`.
    fn gate(&self, spectrum: &[f64], pitch: usize) -> f64 {
        let partials = self.partials(spectrum, pitch);
        let strongest = partials.iter().map(|a| a.1).fold(0.0, f64::max);
        if strongest > 0.0 && self.cfg.fundamental_gate > 0.0 {
            (partials[0].1 / (self.cfg.fundamental_gate * strongest)).min(1.0)
        } else {
            1.0
        }
    }

    fn score(&self, residual: &[f64], pitch: usize) -> f64 {
        self.harmonic_sum(residual, pitch) * self.gate(residual, pitch)
    }

    /// Accepted (pitch, score) pairs for one frame. Evidence for a
    /// candidate is its harmonic sum over the residual, gated by its
    /// fundamental in the original spectrum (a partial shared with an
    /// accepted note still counts as present); the reported score is that
    /// evidence, or the gated harmonic sum over the original spectrum when
    /// `report_residual` is off.
    fn explain(&self, spectrum: &[f64], floor: f64) -> Vec<(usize, f64)> {
        let n = self.grid.n_pitches;
        let gates: Vec<f64> = (0..n).map(|p| self.gate(spectrum, p)).collect();
        let full: Vec<f64> = (0..n).map(|p| self.harmonic_sum(spectrum, p) * gates[p]).collect();
        let mut residual = spectrum.to_vec();
        let mut accepted: Vec<(usize, f64)> = Vec::new();
        while accepted.len() < self.cfg.max_polyphony {
            let raw: Vec<f64> = (0..n).map(|p| self.harmonic_sum(&residual, p) * gates[p]).collect();
            let best = (0..n)
                .filter(|p| accepted.iter().all(|a| a.0 != *p))
                .map(|p| {
                    let sub = if p >= OCTAVE { raw[p - OCTAVE] } else { 0.0 };
                    (p, (raw[p] - self.cfg.octave_suppression * sub).max(0.0))
                })
                .fold(None, |best: Option<(usize, f64)>, c| match best {
                    Some(b) if b.1 >= c.1 => Some(b),
                    _ => Some(c),
                });
            let Some((p, evidence)) = best else { break };
            if evidence <= floor {
                break;
            }
            let reported = if self.cfg.report_residual { evidence } else { full[p] };
            accepted.push((p, reported));
            let rows = residual.len();
            for (row, amp) in self.partials(&residual, p) {
                let lo = row.saturating_sub(self.cfg.subtraction_span);
                let hi = (row + self.cfg.subtraction_span).min(rows - 1);
                for r in lo..=hi {
                    residual[r] = (residual[r] - amp).max(0.0);
                }
            }
        }
        accepted
    }
}

const OCTAVE: usize = 12;

pub fn salience_transcribe_with(q_norm: &CqtSpectrogram, grid: &GridConfig, cfg: &SalienceConfig) -> Result<Pianoroll> {
    grid.validate()?;
    let frames = q_norm.frames();
    let n = grid.n_pitches;
    let white = whiten(&q_norm.magnitude(), cfg.whitening_span, cfg.whitening_strength);
    let weights: Vec<f64> = (1..=cfg.harmonics).map(|h| (h as f64).powf(-cfg.harmonic_decay)).collect();
    let ctx = FrameContext {
        grid,
        weights: &weights,
        cfg,
        shifts: (1..=cfg.harmonics).map(|h| harmonic_shift(h as f64, grid)).collect(),
    };
    // floor relative to the loudest single-pitch score in the clip
    let loudest = (0..frames)
        .into_par_iter()
        .map(|t| {
            let col = white.column(t).to_vec();
            (0..n).map(|p| ctx.score(&col, p)).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let floor = cfg.floor * loudest;
    let per_frame: Vec<Vec<(usize, f64)>> =
        (0..frames).into_par_iter().map(|t| ctx.explain(&white.column(t).to_vec(), floor)).collect();

    let mut sal = Array2::<f64>::zeros((n, frames));
    for (t, acc) in per_frame.iter().enumerate() {
        for &(p, s) in acc {
            sal[[p, t]] = s;
        }
    }
    let peak = sal.iter().copied().fold(0.0, f64::max);
    let mut notes = Array2::zeros((n, frames));
    if peak > 0.0 {
        notes = sal.mapv(|v| (v / peak).powf(cfg.compression));
    }
    let onsets = onset_activation(&notes);
    Pianoroll::new(notes, onsets, *grid)
}

/// Frames looked back over when measuring a rise.
pub const ONSET_LAG: usize = 3;

/// Rectified rise relative to the new level,
/// `max(0, Y[t] - min(Y[t-L..t])) / Y[t]` (zero where `Y[t] = 0`); the frame
/// before the first counts as silence.
pub fn onset_activation(notes: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(notes.dim(), |(p, t)| {
        let now = notes[[p, t]];
        if now <= 0.0 {
            return 0.0;
        }
        let prev = if t == 0 {
            0.0
        } else {
            (t.saturating_sub(ONSET_LAG)..t).map(|s| notes[[p, s]]).fold(f64::INFINITY, f64::min)
        };
        ((now - prev).max(0.0) / now).min(1.0)
    })
}
