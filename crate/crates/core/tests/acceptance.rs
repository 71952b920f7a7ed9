//! Acceptance suite: one PASS/FAIL line per criterion, each within its time
//! budget. Runs as its own test binary (`cargo test --test acceptance`) and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use itertools::Itertools;
use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tamt_core::cqt::{cqt_forward, energy_normalize, frame_energies, kernel_length, q_factor, sample_std};
use tamt_core::dataset::{instruments, render_song, DatasetConfig};
use tamt_core::datagen::{
    cycle_len, enumerate_mixes, generate_pitch_sequence, generate_score, PitchGenConfig, TimingConfig, OVERLAP_INTERVALS,
};
use tamt_core::eval::pit_match;
use tamt_core::losses::{
    bce, deep_cluster_loss, deep_cluster_loss_naive, dwa_weights, focal_loss, magnitude_balance, LossHistory, DEFAULT_BETA,
};
use tamt_core::memory::{associate, associate_once, hebb_store, hopfield_recall, weighted_memory, DEFAULT_MAX_ITER};
use tamt_core::separation::{analyze, separate_analysis, Level, SeparationConfig};
use tamt_core::synth::{mix_tracks, render_track, render_track_with, score_to_pianoroll, Adsr, RenderConfig, Timbre};
use tamt_core::types::{midi_to_hz, NoteEvent, Score, MIDI_LOW};
use tamt_core::{CqtSpectrogram, GridConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|x| x * x).sum().sqrt() / b.mapv(|x| x * x).sum().sqrt()
}

/// Frame-energy standardization over random complex spectrograms, and
/// invariance to a global gain.
fn normalization() -> Outcome {
    let grid = GridConfig::default();
    let mut r = rng(1);
    let (mut worst_std, mut worst_scale) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let frames = r.gen_range(8..64);
        let scale: f64 = 10f64.powf(r.gen_range(-3.0..3.0));
        let data = Array2::from_shape_fn((grid.f_bins(), frames), |_| {
            Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)) * scale
        });
        let q = CqtSpectrogram { data, grid };
        let n1 = energy_normalize(&q).unwrap();
        let n3 = energy_normalize(&CqtSpectrogram { data: q.data.mapv(|c| c * 3.0), grid }).unwrap();
        worst_std = worst_std.max((sample_std(&frame_energies(&n1.data)) - 1.0).abs());
        worst_scale = worst_scale.max((&n1.data - &n3.data).iter().map(|c| c.norm()).fold(0.0, f64::max));
    }
    outcome(
        worst_std <= 1e-6 && worst_scale <= 1e-9,
        format!("100 spectrograms: max |std - 1| {worst_std:.1e} (tol 1e-6), max |Q_norm - (3Q)_norm| {worst_scale:.1e} (tol 1e-9)"),
    )
}

/// Fused association against the explicit memory path; the memory is
/// symmetric positive semidefinite.
fn association_identity() -> Outcome {
    let mut r = rng(2);
    let (mut worst, mut worst_asym, mut min_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let v = Array2::from_shape_fn((200, 16), |_| r.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..200).map(|_| r.gen_range(0.0..=1.0)).collect();
        let mem = weighted_memory(&v, &y).unwrap();
        worst = worst.max(rel_frobenius(&associate_once(&v, &y).unwrap(), &associate(&v, &mem).unwrap()));
        worst_asym = worst_asym.max((&mem.m - &mem.m.t()).iter().fold(0.0, |a: f64, x| a.max(x.abs())));
        min_eig = min_eig.min(mem.min_eigenvalue() / mem.trace());
    }
    outcome(
        worst <= 1e-12 && worst_asym == 0.0 && min_eig >= -1e-12,
        format!("50 instances (K=200, D=16): max relative gap {worst:.1e} (tol 1e-12), max asymmetry {worst_asym:.1e}, min eigenvalue / trace {min_eig:.1e}"),
    )
}

/// Hopfield recall of a stored pattern from a 10%-corrupted probe.
fn hopfield() -> Outcome {
    let (n, stored, flips) = (64, 5, 6);
    let mut r = rng(3);
    let mut exact = 0;
    for _ in 0..100 {
        let patterns: Vec<Vec<i8>> =
            (0..stored).map(|_| (0..n).map(|_| if r.gen_bool(0.5) { 1 } else { -1 }).collect()).collect();
        let mem = hebb_store(&patterns).unwrap();
        let target = &patterns[r.gen_range(0..stored)];
        let mut probe: Vec<f64> = target.iter().map(|&x| x as f64).collect();
        for i in sample(&mut r, n, flips) {
            probe[i] = -probe[i];
        }
        if hopfield_recall(&mem, &probe, DEFAULT_MAX_ITER).unwrap().state == *target {
            exact += 1;
        }
    }
    outcome(exact >= 95, format!("n=64, 5 patterns, {flips}/64 bits flipped: exact recall {exact}/100 (need >= 95)"))
}

/// Clustering loss forms agree; focal loss reduces to half BCE; balancing
/// equalizes weighted losses; equal loss ratios give uniform DWA weights.
fn loss_algebra() -> Outcome {
    let mut r = rng(4);
    let mut worst_dc = 0.0f64;
    for _ in 0..100 {
        let (k, d, m) = (r.gen_range(1..=50), r.gen_range(1..=8), r.gen_range(1..=4));
        let v = Array2::from_shape_fn((k, d), |_| r.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..k).map(|_| r.gen_range(0..m)).collect();
        let z = Array2::from_shape_fn((k, m), |(i, j)| f64::from(u8::from(labels[i] == j)));
        let (fast, naive) = (deep_cluster_loss(&v, &z).unwrap(), deep_cluster_loss_naive(&v, &z).unwrap());
        worst_dc = worst_dc.max(if naive == 0.0 { fast.abs() } else { (fast - naive).abs() / naive.abs() });
    }
    let mut worst_focal = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(1..200);
        let p: Vec<f64> = (0..n).map(|_| r.gen_range(0.001..0.999)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(r.gen_bool(0.3)))).collect();
        worst_focal = worst_focal.max((focal_loss(&p, &y, 0.5, 0.0).unwrap() - 0.5 * bce(&p, &y).unwrap()).abs());
    }
    let mut worst_balance = 0.0f64;
    for _ in 0..100 {
        let losses: Vec<f64> = (0..r.gen_range(2..6)).map(|_| 10f64.powf(r.gen_range(-3.0..2.0))).collect();
        let w = magnitude_balance(&losses, &mut LossHistory::new(), DEFAULT_BETA).unwrap();
        let products: Vec<f64> = w.iter().zip(&losses).map(|(a, l)| a * l).collect();
        let spread = products.iter().copied().fold(f64::NEG_INFINITY, f64::max) - products.iter().copied().fold(f64::INFINITY, f64::min);
        worst_balance = worst_balance.max(spread);
    }
    let mut history = LossHistory::new();
    history.record_epoch(&[2.0, 0.4, 8.0]).unwrap();
    history.record_epoch(&[1.0, 0.2, 4.0]).unwrap();
    let dwa = dwa_weights(&history, 3, 2.0).unwrap();
    let dwa_dev = dwa.iter().map(|w| (w - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    outcome(
        worst_dc <= 1e-9 && worst_focal <= 1e-9 && worst_balance <= 1e-12 && dwa_dev <= 1e-12,
        format!(
            "clustering loss rel {worst_dc:.1e} (tol 1e-9); focal vs BCE/2 {worst_focal:.1e} (tol 1e-9); alpha_i L_i spread {worst_balance:.1e} (tol 1e-12); DWA deviation from uniform {dwa_dev:.1e}"
        ),
    )
}

/// Argmax row of clean tones over every pitch of MIDI 36-95, and the
/// decimated transform against direct evaluation.
fn cqt_placement() -> Outcome {
    let grid = GridConfig::default();
    let sr = grid.sample_rate as f64;
    let timbre = Timbre::plain([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let render = RenderConfig { drift_cents: 0.0, ..Default::default() };
    let (onset, duration, total) = (0.25, 2.0, 2.5);
    let n = (total * sr) as usize;
    let q = q_factor(grid.bins_per_octave());
    let per_pitch: Vec<(u8, usize, usize)> = (36u8..=95)
        .into_par_iter()
        .map(|midi| {
            let note = NoteEvent { onset, duration, pitch: midi, detune: 0.0, velocity: 1.0, track: 0 };
            let audio = render_track_with(&Score::new(vec![note]), &timbre, &grid, n, midi as u64, &render).unwrap();
            let spec = cqt_forward(&audio, &grid).unwrap().magnitude();
            let expected = grid.pitch_row((midi - MIDI_LOW) as usize);
            // interior: the pitch's analysis window lies inside the note
            let half = kernel_length(q, sr, midi_to_hz(midi as f64)) as f64 / 2.0 / sr;
            let frames: Vec<usize> = (0..spec.ncols())
                .filter(|&t| {
                    let c = grid.frame_center(t);
                    c - half >= onset && c + half <= onset + duration
                })
                .collect();
            let hits = frames
                .iter()
                .filter(|&&t| {
                    let best = (0..spec.nrows()).max_by(|&a, &b| spec[[a, t]].total_cmp(&spec[[b, t]])).unwrap();
                    best.abs_diff(expected) <= 1
                })
                .count();
            (midi, hits, frames.len())
        })
        .collect();
    let (hits, frames) = per_pitch.iter().fold((0, 0), |(h, f), p| (h + p.1, f + p.2));
    let worst = per_pitch
        .iter()
        .map(|&(m, h, f)| (h as f64 / f.max(1) as f64, m))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("pitches rendered");
    let placement_ok = per_pitch.iter().all(|&(_, h, f)| f > 0 && h * 100 >= f * 95);

    let oracle: Vec<(Vec<(f64, f64)>, f64)> = (0..10u64).into_par_iter().map(|t| common::decimated_vs_direct(&grid, 17 + t)).collect();
    let worst_rms = oracle.iter().map(|o| o.1).fold(0.0, f64::max);
    outcome(
        placement_ok && worst_rms <= 1e-2,
        format!(
            "argmax within 1 bin on {hits}/{frames} interior frames, worst pitch MIDI {} at {:.1}% (need >= 95% each); decimated vs direct rel RMS max {worst_rms:.1e} over 10 tones (tol 1e-2)",
            worst.1,
            100.0 * worst.0
        ),
    )
}

/// Score statistics over seeded scores, the default set's duration and the
/// pair-mixture count.
fn dataset_statistics() -> Outcome {
    let pitch = PitchGenConfig::default();
    let timing = TimingConfig::default();
    let (mut bad_interval, mut chords, mut inversions, mut bad_counts) = (0usize, 0usize, 0usize, 0usize);
    let mut intervals = BTreeMap::new();
    for seed in 0..1000u64 {
        let n_notes = 20 + (seed as usize % 50);
        let score = generate_score(&pitch, &timing, n_notes, seed).unwrap();
        // chord tones are the notes beyond the chord-free score of the same seed
        let base = generate_score(&PitchGenConfig { p_chord: 0.0, ..pitch.clone() }, &timing, n_notes, seed).unwrap();
        let mut rest = score.notes.iter().peekable();
        for b in &base.notes {
            assert_eq!(rest.next(), Some(b), "seed {seed}: base notes keep their order");
            while let Some(c) = rest.next_if(|c| c.onset == b.onset && c.duration == b.duration && c.pitch > b.pitch) {
                chords += 1;
                let iv = c.pitch - b.pitch;
                *intervals.entry(iv).or_insert(0usize) += 1;
                bad_interval += usize::from(!OVERLAP_INTERVALS.contains(&iv));
            }
        }
        bad_interval += rest.count();
        inversions += base.notes.windows(2).filter(|w| w[1].onset < w[0].onset).count();
        inversions += score.notes.iter().filter(|n| !(n.duration > 0.0) || n.offset() < n.onset).count();

        let len = cycle_len(&pitch) * 2 + (seed as usize * 7) % cycle_len(&pitch);
        let seq = generate_pitch_sequence(&pitch, len, seed).unwrap();
        for cycle in seq.chunks(cycle_len(&pitch)).filter(|c| c.len() == cycle_len(&pitch)) {
            bad_counts += usize::from(cycle.iter().sorted().dedup().count() != cycle.len());
        }
        let mut counts = BTreeMap::new();
        for p in seq {
            *counts.entry(p).or_insert(0usize) += 1;
        }
        let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
        bad_counts += usize::from(hi - lo > 1 || counts.len() != cycle_len(&pitch));
    }

    let cfg = DatasetConfig::default();
    let grid = GridConfig::default();
    let insts = instruments(&cfg, 0);
    let samples: usize = insts
        .par_iter()
        .flat_map(|inst| (0..cfg.songs).into_par_iter().map(move |s| (inst, s)))
        .map(|(inst, s)| render_song(&cfg, &grid, inst, s, 0).unwrap().audio.len())
        .sum();
    let minutes = samples as f64 / grid.sample_rate as f64 / 60.0;
    let mixes = enumerate_mixes(cfg.categories, cfg.songs, 2).unwrap().len();
    outcome(
        bad_interval == 0 && chords > 0 && inversions == 0 && bad_counts == 0 && (minutes - 12.5).abs() <= 0.5 && mixes == 1296,
        format!(
            "1000 scores: {chords} chord tones at intervals {intervals:?}, {bad_interval} outside {{4,5,7,12}}, {inversions} temporal inversions, {bad_counts} unbalanced cycles; {} categories x {} instruments x {} songs x {} frames rendered = {minutes:.2} min (target 12.5 +- 0.5); pair mixes {mixes} (expect 1296)",
            cfg.categories, cfg.variants, cfg.songs, cfg.frames
        ),
    )
}

/// Distinct harmonic profiles: odd-only, dense and decaying, and
/// second-harmonic-led.
const PROFILES: [[f64; 8]; 3] = [
    [1.0, 0.0, 0.6, 0.0, 0.4, 0.0, 0.25, 0.0],
    [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3],
    [0.3, 1.0, 0.2, 0.6, 0.1, 0.3, 0.05, 0.1],
];

struct MixScores {
    note: f64,
    frame: f64,
}

/// Note- and frame-level F1 after permutation matching on one seeded
/// `m`-source mixture: 600 frames, 14-note scores over MIDI 48-84 with
/// onsets in the first 6.5 s, short-release tones with light vibrato.
fn separate_mixture(m: usize, seed: u64) -> MixScores {
    let grid = GridConfig::default();
    let frames = 600;
    let n = frames * grid.hop;
    let pitch = PitchGenConfig { pitch_low: 48, pitch_high: 84, ..Default::default() };
    let adsr = Adsr { attack: 0.01, decay: 0.1, sustain_level: 0.8, release: 0.03 };
    let mut tracks = Vec::new();
    let mut refs = Vec::new();
    for (i, amps) in PROFILES.iter().enumerate().take(m) {
        let track_seed = seed * 100 + i as u64;
        let mut score = generate_score(&pitch, &TimingConfig::default(), 14, track_seed).unwrap();
        score.notes.retain(|x| x.onset < 6.5);
        let timbre = Timbre::new(*amps, adsr, 5.0, 5.0, 0.0).unwrap();
        tracks.push(render_track(&score, &timbre, &grid, n, track_seed).unwrap());
        refs.push(score_to_pianoroll(&score, &grid, frames).notes);
    }
    let mix = mix_tracks(&tracks, None, seed).unwrap();
    let cfg = SeparationConfig::default();
    let analysis = analyze(&mix, &grid, &cfg).unwrap();
    let note = separate_analysis(&analysis, m, &cfg, seed).unwrap();
    let frame = separate_analysis(&analysis, m, &SeparationConfig { level: Level::Frame, ..cfg }, seed).unwrap();
    MixScores {
        note: pit_match(&refs, &note.note_rolls(), 0.5).unwrap().mean.f1,
        frame: pit_match(&refs, &frame.note_rolls(), 0.5).unwrap().mean.f1,
    }
}

fn end_to_end() -> Outcome {
    let pairs: Vec<MixScores> = (0..20).into_par_iter().map(|s| separate_mixture(2, s)).collect();
    let triples: Vec<MixScores> = (0..20).into_par_iter().map(|s| separate_mixture(3, s)).collect();
    let mean = |v: &[MixScores], f: fn(&MixScores) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let (note2, frame2, note3) = (mean(&pairs, |s| s.note), mean(&pairs, |s| s.frame), mean(&triples, |s| s.note));
    let wins = pairs.iter().filter(|s| s.note >= s.frame).count();
    outcome(
        note2 >= 0.85 && wins * 100 >= pairs.len() * 80 && note3 < note2,
        format!(
            "2-mixes: mean note-level F1 {note2:.3} (need >= 0.85), frame-level {frame2:.3}, note >= frame on {wins}/20 (need >= 16); 3-mixes: mean note-level F1 {note3:.3} (must be below {note2:.3})"
        ),
    )
}

/// Every planted permutation of up to four sources is recovered.
fn pit_exhaustive() -> Outcome {
    let mut r = rng(8);
    let (mut cases, mut failures) = (0, 0);
    for m in 1..=4 {
        for trial in 0..3 {
            let refs: Vec<Array2<f64>> =
                (0..m).map(|_| Array2::from_shape_fn((16, 24), |_| f64::from(u8::from(r.gen_bool(0.3))))).collect();
            for perm in (0..m).permutations(m) {
                let ests: Vec<Array2<f64>> = perm.iter().map(|&j| refs[j].clone()).collect();
                let res = pit_match(&refs, &ests, 0.5).unwrap();
                cases += 1;
                if res.permutation != perm || res.mean.f1 != 1.0 {
                    failures += 1;
                    eprintln!("m={m} trial {trial}: planted {perm:?}, got {:?}", res.permutation);
                }
            }
        }
    }
    outcome(failures == 0, format!("{cases} planted permutations for M = 1..4, {failures} missed"))
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 8] = [
        (1, "normalization invariant", Duration::from_secs(1), normalization),
        (2, "associative-memory identity", Duration::from_secs(1), association_identity),
        (3, "hopfield recall", Duration::from_secs(1), hopfield),
        (4, "loss algebra", Duration::from_secs(1), loss_algebra),
        (5, "CQT pitch placement", Duration::from_secs(30), cqt_placement),
        (6, "dataset statistics", Duration::from_secs(30), dataset_statistics),
        (7, "end-to-end separation", Duration::from_secs(300), end_to_end),
        (8, "PIT correctness", Duration::from_secs(1), pit_exhaustive),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let passed = result.passed && elapsed <= budget;
        failed += usize::from(!passed);
        println!(
            "criterion {id} {}: {name} — {} [{:.2}s of {}s]",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {}/8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
