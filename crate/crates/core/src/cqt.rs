//! Constant-Q analysis with octave-shared kernels.
//!
//! Only the top octave has kernels. Each lower octave is obtained by
//! low-pass filtering and decimating the signal by two, then applying the
//! same kernels, so octave `d` below the top sees the audio at
//! `sample_rate / 2^d`. Every octave is evaluated at the centre of each
//! full-rate frame (`t * hop + hop / 2`), rounded to the nearest decimated
//! sample.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{CqtSpectrogram, GridConfig};

/// Half-length of the decimation low-pass filter; 127 taps in total.
const LOWPASS_HALF: usize = 63;

/// Quality factor for `bins_per_octave` geometric bins.
pub fn q_factor(bins_per_octave: usize) -> f64 {
    1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0)
}

/// Odd kernel length (in samples at `sample_rate`) for a bin at `freq`.
pub fn kernel_length(q: f64, sample_rate: f64, freq: f64) -> usize {
    let n = (q * sample_rate / freq).round() as usize;
    n | 1
}

/// Hann window over an odd support of `len` samples, evaluated at offset
/// `x` from the centre (in samples of the same rate). Nonzero at the
/// endpoints.
pub fn hann(x: f64, len: usize) -> f64 {
    let half = (len + 1) as f64 / 2.0;
    if x.abs() >= half {
        0.0
    } else {
        0.5 * (1.0 + (PI * x / half).cos())
    }
}

#[derive(Debug, Clone)]
pub struct CqtKernelBank {
    grid: GridConfig,
    q: f64,
    /// Top-octave kernels, lowest bin first; index 0 is the centre tap.
    kernels: Vec<Vec<Complex64>>,
    lowpass: Vec<f64>,
}

impl CqtKernelBank {
    pub fn new(grid: &GridConfig) -> Result<Self> {
        grid.validate()?;
        let bpo = grid.bins_per_octave();
        let q = q_factor(bpo);
        let sr = grid.sample_rate as f64;
        let top = (grid.n_octaves_cqt - 1) * bpo;
        let kernels = (0..bpo)
            .map(|j| {
                let f = grid.bin_frequency(top + j);
                let len = kernel_length(q, sr, f);
                let half = (len / 2) as isize;
                let taps: Vec<(f64, Complex64)> = (-half..=half)
                    .map(|n| {
                        let w = hann(n as f64, len);
                        (w, Complex64::from_polar(w, -2.0 * PI * f * n as f64 / sr))
                    })
                    .collect();
                let norm: f64 = taps.iter().map(|(w, _)| w).sum();
                taps.into_iter().map(|(_, k)| k / norm).collect()
            })
            .collect();
        Ok(Self { grid: *grid, q, kernels, lowpass: design_lowpass(LOWPASS_HALF) })
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Centre frequencies of the top octave at full rate.
    pub fn top_frequencies(&self) -> Vec<f64> {
        let top = (self.grid.n_octaves_cqt - 1) * self.grid.bins_per_octave();
        (0..self.grid.bins_per_octave()).map(|j| self.grid.bin_frequency(top + j)).collect()
    }

    /// Kernel length (odd) of top-octave bin `j`.
    pub fn kernel_len(&self, j: usize) -> usize {
        self.kernels[j].len()
    }

    pub fn kernel(&self, j: usize) -> &[Complex64] {
        &self.kernels[j]
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    /// Longest kernel span in full-rate samples (the lowest octave's
    /// longest kernel, stretched by its decimation factor).
    pub fn min_samples(&self) -> usize {
        let longest = self.kernels.iter().map(Vec::len).max().unwrap_or(0);
        longest << (self.grid.n_octaves_cqt - 1)
    }

    pub fn forward(&self, audio: &[f64]) -> Result<CqtSpectrogram> {
        let needed = self.min_samples();
        if audio.len() < needed {
            return Err(Error::AudioTooShort { len: audio.len(), needed });
        }
        let grid = &self.grid;
        let bpo = grid.bins_per_octave();
        let n_oct = grid.n_octaves_cqt;
        let frames = grid.frames_for(audio.len());
        let mut levels = Vec::with_capacity(n_oct);
        levels.push(audio.to_vec());
        for d in 1..n_oct {
            let next = decimate(&levels[d - 1], &self.lowpass);
            levels.push(next);
        }
        let mut data = Array2::<Complex64>::zeros((grid.f_bins(), frames));
        let columns: Vec<Vec<Complex64>> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let centre = (t * grid.hop + grid.hop / 2) as f64;
                let mut col = vec![Complex64::new(0.0, 0.0); grid.f_bins()];
                for (d, signal) in levels.iter().enumerate() {
                    let c = (centre / (1usize << d) as f64).round() as isize;
                    let base_row = (n_oct - 1 - d) * bpo;
                    for (j, kernel) in self.kernels.iter().enumerate() {
                        col[base_row + j] = apply_kernel(signal, c, kernel);
                    }
                }
                col
            })
            .collect();
        for (t, col) in columns.into_iter().enumerate() {
            data.column_mut(t).assign(&ndarray::Array1::from(col));
        }
        Ok(CqtSpectrogram { data, grid: *grid })
    }
}

/// `sum_n x[c + n] * k[n]` over the centred kernel, zero outside the signal.
fn apply_kernel(x: &[f64], c: isize, kernel: &[Complex64]) -> Complex64 {
    let half = (kernel.len() / 2) as isize;
    let lo = (c - half).max(0);
    let hi = (c + half).min(x.len() as isize - 1);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in lo..=hi {
        acc += kernel[(i - c + half) as usize] * x[i as usize];
    }
    acc
}

/// Blackman-windowed sinc with cutoff at a quarter of the sample rate.
fn design_lowpass(half: usize) -> Vec<f64> {
    let len = 2 * half + 1;
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let n = i as f64 - half as f64;
            let sinc = if n == 0.0 { 0.5 } else { (0.5 * PI * n).sin() / (PI * n) };
            let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos()
                + 0.08 * (4.0 * PI * i as f64 / (len - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase low-pass, then keep even samples: output `m` sits at input `2m`.
fn decimate(x: &[f64], h: &[f64]) -> Vec<f64> {
    let half = (h.len() / 2) as isize;
    let n_out = x.len().div_ceil(2);
    (0..n_out)
        .map(|m| {
            let c = 2 * m as isize;
            let lo = (c - half).max(0);
            let hi = (c + half).min(x.len() as isize - 1);
            (lo..=hi).map(|i| x[i as usize] * h[(i - c + half) as usize]).sum()
        })
        .collect()
}

/// CQT with a freshly built kernel bank.
pub fn cqt_forward(audio: &[f64], grid: &GridConfig) -> Result<CqtSpectrogram> {
    CqtKernelBank::new(grid)?.forward(audio)
}

/// Frame energies `E_t = sum_i |q_{i,t}|^2`.
pub fn frame_energies(q: &Array2<Complex64>) -> Vec<f64> {
    q.axis_iter(Axis(1)).map(|col| col.iter().map(|c| c.norm_sqr()).sum()).collect()
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub const NORMALIZE_EPS: f64 = 1e-12;

/// Divide the spectrogram by the square root of the sample standard
/// deviation of its frame energies, so the normalized energies have unit
/// sample standard deviation. Phase is untouched. Spectrograms whose
/// energy deviation is below [`NORMALIZE_EPS`] are returned unchanged.
pub fn energy_normalize(q: &CqtSpectrogram) -> Result<CqtSpectrogram> {
    let frames = q.frames();
    if frames < 2 {
        return Err(Error::TooFewFrames(frames));
    }
    let sigma = sample_std(&frame_energies(&q.data));
    if sigma < NORMALIZE_EPS {
        return Ok(q.clone());
    }
    let scale = 1.0 / sigma.sqrt();
    Ok(CqtSpectrogram { data: q.data.mapv(|c| c * scale), grid: q.grid })
}

pub const STACK_HARMONICS: [f64; 9] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

/// Row shift for harmonic `h`: `round(bins_per_octave * log2 h)`.
pub fn harmonic_shift(h: f64, grid: &GridConfig) -> isize {
    (grid.bins_per_octave() as f64 * h.log2()).round() as isize
}

/// Channel `c` holds `Q[r + shift(h_c), t]` for the `bins_per_semitone *
/// n_pitches` note rows, zero where the shifted row leaves the spectrogram.
pub fn harmonic_stack(q: &CqtSpectrogram, harmonics: &[f64], grid: &GridConfig) -> Result<Array3<Complex64>> {
    if let Some(&bad) = harmonics.iter().find(|h| !STACK_HARMONICS.contains(h)) {
        return Err(Error::UnknownHarmonic(bad));
    }
    let rows = grid.bins_per_semitone * grid.n_pitches;
    let (f_bins, frames) = q.data.dim();
    let mut out = Array3::<Complex64>::zeros((harmonics.len(), rows, frames));
    for (c, &h) in harmonics.iter().enumerate() {
        let shift = harmonic_shift(h, grid);
        for r in 0..rows {
            let src = r as isize + shift;
            if src >= 0 && (src as usize) < f_bins {
                out.slice_mut(ndarray::s![c, r, ..]).assign(&q.data.row(src as usize));
            }
        }
    }
    Ok(out)
}
