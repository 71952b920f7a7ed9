//! Test-only oracles, independent of the library's fast paths.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use tamt_core::cqt::{hann, kernel_length, q_factor};
use tamt_core::GridConfig;

/// Direct evaluation of CQT row `row` at frame `t` on full-rate audio: the
/// row's kernel is built at the full sample rate with the same window
/// support the decimated path uses, without any resampling.
pub fn direct_cqt(audio: &[f64], grid: &GridConfig, row: usize, t: usize) -> Complex64 {
    let bpo = grid.bins_per_octave();
    let sr = grid.sample_rate as f64;
    let q = q_factor(bpo);
    let level = grid.n_octaves_cqt - 1 - row / bpo;
    let stretch = (1usize << level) as f64;
    // window length of the shared top-octave kernel, in decimated samples
    let top_freq = grid.bin_frequency((grid.n_octaves_cqt - 1) * bpo + row % bpo);
    let len = kernel_length(q, sr, top_freq);
    let f = grid.bin_frequency(row);
    let half = ((len / 2) as f64 * stretch) as isize;
    let c = (t * grid.hop + grid.hop / 2) as isize;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut norm = 0.0;
    for n in -half..=half {
        let w = hann(n as f64 / stretch, len);
        norm += w;
        let i = c + n;
        if i >= 0 && (i as usize) < audio.len() {
            acc += Complex64::from_polar(w, -2.0 * PI * f * n as f64 / sr) * audio[i as usize];
        }
    }
    acc / norm
}

/// Half-span of the longest direct kernel in full-rate samples.
pub fn direct_half_span(grid: &GridConfig) -> usize {
    let sr = grid.sample_rate as f64;
    let len = kernel_length(q_factor(grid.bins_per_octave()), sr, grid.bin_frequency((grid.n_octaves_cqt - 1) * grid.bins_per_octave()));
    (len / 2) << (grid.n_octaves_cqt - 1)
}

pub fn sine_mix(partials: &[(f64, f64)], n: usize, sr: f64) -> Vec<f64> {
    (0..n).map(|i| partials.iter().map(|(f, a)| a * (TAU * f * i as f64 / sr).sin()).sum()).collect()
}

/// Interior frames sampled per tone when comparing against direct
/// evaluation; the direct sums dominate the cost.
pub const ORACLE_FRAMES: usize = 8;

/// Relative RMS error of the decimated transform against direct per-bin
/// evaluation for a 3-partial band-limited tone drawn from `seed`, over
/// every row and [`ORACLE_FRAMES`] interior frames.
pub fn decimated_vs_direct(grid: &GridConfig, seed: u64) -> (Vec<(f64, f64)>, f64) {
    use rand::{Rng, SeedableRng};
    let sr = grid.sample_rate as f64;
    let n = 3 * grid.sample_rate as usize;
    let half = direct_half_span(grid);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let partials: Vec<(f64, f64)> = (0..3).map(|_| (40.0 * 2f64.powf(rng.gen_range(0.0..6.5)), rng.gen_range(0.1..0.5))).collect();
    let x = sine_mix(&partials, n, sr);
    let q = tamt_core::cqt::cqt_forward(&x, grid).unwrap();
    let interior: Vec<usize> =
        (0..q.frames()).filter(|&t| t * grid.hop + grid.hop / 2 >= half && t * grid.hop + grid.hop / 2 + half < n).collect();
    let step = (interior.len() / ORACLE_FRAMES).max(1);
    let (mut err, mut total) = (0.0, 0.0);
    for &t in interior.iter().step_by(step).take(ORACLE_FRAMES) {
        for row in 0..grid.f_bins() {
            let d = direct_cqt(&x, grid, row, t);
            err += (q.data[[row, t]] - d).norm_sqr();
            total += d.norm_sqr();
        }
    }
    (partials, (err / total).sqrt())
}
