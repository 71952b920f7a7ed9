//! Additive synthesis of scores, mixing, and ground-truth rasterization.

use std::f64::consts::TAU;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{midi_to_hz, GridConfig, Pianoroll, Score, MIDI_LOW};

pub const N_HARMONICS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adsr {
    pub attack: f64,
    pub decay: f64,
    pub sustain_level: f64,
    pub release: f64,
}

impl Adsr {
    /// Envelope level `t` seconds after note-on for a note held `hold` seconds.
    pub fn level(&self, t: f64, hold: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        if t < hold {
            return self.gate_level(t);
        }
        if self.release <= 0.0 {
            return 0.0;
        }
        let r = (t - hold) / self.release;
        if r >= 1.0 {
            0.0
        } else {
            self.gate_level(hold) * (1.0 - r)
        }
    }

    fn gate_level(&self, t: f64) -> f64 {
        if t < self.attack {
            t / self.attack
        } else if t < self.attack + self.decay {
            1.0 - (1.0 - self.sustain_level) * (t - self.attack) / self.decay
        } else {
            self.sustain_level
        }
    }
}

/// Generative parameters of one instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timbre {
    /// Unit-energy harmonic amplitudes (sum of squares = 1), fundamental first.
    pub harmonic_amps: [f64; N_HARMONICS],
    pub adsr: Adsr,
    pub vibrato_rate: f64,
    /// Peak vibrato deviation in cents.
    pub vibrato_depth: f64,
    pub tremolo_depth: f64,
}

impl Timbre {
    pub fn new(
        harmonic_amps: [f64; N_HARMONICS],
        adsr: Adsr,
        vibrato_rate: f64,
        vibrato_depth: f64,
        tremolo_depth: f64,
    ) -> Result<Self> {
        if harmonic_amps.iter().any(|a| *a < 0.0 || !a.is_finite()) {
            return Err(Error::invalid("harmonic amplitudes must be finite and >= 0"));
        }
        if !(harmonic_amps[0] > 0.0) {
            return Err(Error::invalid("fundamental amplitude must be > 0"));
        }
        if !(0.0..=50.0).contains(&vibrato_depth) {
            return Err(Error::invalid("vibrato depth must lie in [0, 50] cents"));
        }
        if !(0.0..=1.0).contains(&adsr.sustain_level) {
            return Err(Error::invalid("sustain level must lie in [0,1]"));
        }
        if adsr.attack < 0.0 || adsr.decay < 0.0 || adsr.release < 0.0 {
            return Err(Error::invalid("ADSR times must be >= 0"));
        }
        if !(0.0..1.0).contains(&tremolo_depth) {
            return Err(Error::invalid("tremolo depth must lie in [0,1)"));
        }
        let norm = harmonic_amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        Ok(Self { harmonic_amps: harmonic_amps.map(|a| a / norm), adsr, vibrato_rate, vibrato_depth, tremolo_depth })
    }

    /// Steady tone with the given harmonic profile and no modulation.
    pub fn plain(harmonic_amps: [f64; N_HARMONICS]) -> Result<Self> {
        let adsr = Adsr { attack: 0.01, decay: 0.05, sustain_level: 0.8, release: 0.03 };
        Self::new(harmonic_amps, adsr, 5.0, 0.0, 0.0)
    }

    /// Random instrument: spectral tilt, odd/even balance, jittered partials,
    /// envelope and modulation depths all drawn from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::STREAM_TIMBRE);
        let tilt: f64 = rng.gen_range(0.3..2.0);
        let even: f64 = rng.gen_range(0.0..1.0);
        let mut amps = [0.0; N_HARMONICS];
        for (i, a) in amps.iter_mut().enumerate() {
            let h = (i + 1) as f64;
            let parity = if (i + 1) % 2 == 0 { even } else { 1.0 };
            *a = h.powf(-tilt) * parity * rng.gen_range(0.4..1.0);
        }
        amps[0] = amps[0].max(0.2);
        let adsr = Adsr {
            attack: rng.gen_range(0.005..0.04),
            decay: rng.gen_range(0.05..0.3),
            sustain_level: rng.gen_range(0.5..0.95),
            release: rng.gen_range(0.02..0.08),
        };
        Self::new(amps, adsr, rng.gen_range(4.0..7.0), rng.gen_range(0.0..25.0), rng.gen_range(0.0..0.1))
            .expect("random timbre parameters are in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Bound of the per-note random pitch walk, in cents.
    pub drift_cents: f64,
    /// Peak level after normalization; `None` leaves the raw sum.
    pub peak: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { drift_cents: 20.0, peak: Some(0.9) }
    }
}

const DRIFT_STEP_SAMPLES: usize = 256;
const DRIFT_STEP_CENTS: f64 = 1.5;

fn render_note(
    note: &crate::types::NoteEvent,
    timbre: &Timbre,
    sr: f64,
    n_samples: usize,
    cfg: &RenderConfig,
    seed: u64,
) -> (usize, Vec<f64>) {
    let mut rng = rng::stream(seed, rng::STREAM_RENDER);
    let start = (note.onset * sr).round() as usize;
    if start >= n_samples {
        return (start, Vec::new());
    }
    let len = (((note.duration + timbre.adsr.release) * sr).ceil() as usize).min(n_samples - start);

    let base = midi_to_hz(note.pitch as f64);
    let nyquist = sr / 2.0;
    let worst = base * 2f64.powf((note.detune.abs() + cfg.drift_cents + timbre.vibrato_depth) / 1200.0);
    let harmonics: Vec<(f64, Complex64)> = (0..N_HARMONICS)
        .map(|i| {
            let phase: f64 = rng.gen_range(0.0..TAU);
            (timbre.harmonic_amps[i], Complex64::from_polar(1.0, phase))
        })
        .collect();
    let audible = harmonics.iter().enumerate().filter(|(i, _)| (*i + 1) as f64 * worst < nyquist).count();
    let vib_phase: f64 = rng.gen_range(0.0..TAU);

    // bounded random walk, linearly interpolated between control points
    let n_ctrl = len / DRIFT_STEP_SAMPLES + 2;
    let mut drift = Vec::with_capacity(n_ctrl);
    let mut d = 0.0f64;
    let step = Normal::new(0.0, DRIFT_STEP_CENTS).expect("positive sigma");
    for _ in 0..n_ctrl {
        drift.push(d);
        if cfg.drift_cents > 0.0 {
            d = (d + step.sample(&mut rng)).clamp(-cfg.drift_cents, cfg.drift_cents);
        }
    }

    let gain = note.velocity;
    let mut out = vec![0.0; len];
    let mut phase = 0.0f64;
    for (i, y) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let c = i / DRIFT_STEP_SAMPLES;
        let frac = (i % DRIFT_STEP_SAMPLES) as f64 / DRIFT_STEP_SAMPLES as f64;
        let drift_now = drift[c] + (drift[c + 1] - drift[c]) * frac;
        let lfo = (TAU * timbre.vibrato_rate * t + vib_phase).sin();
        let cents = note.detune + drift_now + timbre.vibrato_depth * lfo;
        let f = base * 2f64.powf(cents / 1200.0);
        // sin(h*phase + phi_h) via powers of e^{i phase}
        let rot = Complex64::from_polar(1.0, phase);
        let mut pow = rot;
        let mut acc = 0.0;
        for &(amp, offset) in harmonics.iter().take(audible) {
            acc += amp * (pow * offset).im;
            pow *= rot;
        }
        let env = timbre.adsr.level(t, note.duration);
        let trem = 1.0 - timbre.tremolo_depth * 0.5 * (1.0 + lfo);
        *y = gain * env * trem * acc;
        phase = (phase + TAU * f / sr) % TAU;
    }
    (start, out)
}

/// Render a score with one timbre into `n_samples` samples.
///
/// Harmonics that could exceed Nyquist at the note's worst-case pitch
/// deviation are dropped. With `cfg.peak` set, the buffer is scaled so its
/// peak equals that level (silent buffers stay silent).
pub fn render_track_with(
    score: &Score,
    timbre: &Timbre,
    grid: &GridConfig,
    n_samples: usize,
    seed: u64,
    cfg: &RenderConfig,
) -> Result<Vec<f64>> {
    for n in &score.notes {
        n.validate(grid)?;
    }
    let sr = grid.sample_rate as f64;
    let rendered: Vec<(usize, Vec<f64>)> = score
        .notes
        .par_iter()
        .enumerate()
        .map(|(i, note)| render_note(note, timbre, sr, n_samples, cfg, rng::derive_seed(seed, i as u64)))
        .collect();
    let mut buf = vec![0.0; n_samples];
    for (start, samples) in rendered {
        for (dst, s) in buf[start.min(n_samples)..].iter_mut().zip(samples) {
            *dst += s;
        }
    }
    if let Some(peak) = cfg.peak {
        let max = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max > 0.0 {
            let scale = peak / max;
            buf.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(buf)
}

pub fn render_track(score: &Score, timbre: &Timbre, grid: &GridConfig, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    render_track_with(score, timbre, grid, n_samples, seed, &RenderConfig::default())
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Sum tracks (shorter ones zero-padded), optionally add white Gaussian
/// noise at `snr_db` relative to the mixture power, and scale down if the
/// peak exceeds 0.99.
pub fn mix_tracks(tracks: &[Vec<f64>], snr_db: Option<f64>, seed: u64) -> Result<Vec<f64>> {
    let mut mix = mix_raw(tracks, snr_db, seed)?;
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let scale = 0.99 / peak;
        mix.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(mix)
}

/// [`mix_tracks`] without the final peak limit.
pub fn mix_raw(tracks: &[Vec<f64>], snr_db: Option<f64>, seed: u64) -> Result<Vec<f64>> {
    if tracks.is_empty() {
        return Err(Error::invalid("mix_tracks needs at least one track"));
    }
    let len = tracks.iter().map(Vec::len).max().unwrap_or(0);
    let mut mix = vec![0.0; len];
    for t in tracks {
        for (m, v) in mix.iter_mut().zip(t) {
            *m += v;
        }
    }
    if let Some(snr) = snr_db {
        let p_sig = mean_power(&mix);
        if p_sig > 0.0 {
            let sigma = (p_sig / 10f64.powf(snr / 10.0)).sqrt();
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = rng::stream(seed, rng::STREAM_NOISE);
            mix.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    Ok(mix)
}

/// Rasterize a score: a frame is active when its centre lies in
/// `[onset, onset + duration)`; the first active frame of each event is its
/// onset frame. Same-pitch overlaps are unioned. Notes outside the grid's
/// pitch range are ignored.
pub fn score_to_pianoroll(score: &Score, grid: &GridConfig, total_frames: usize) -> Pianoroll {
    let mut roll = Pianoroll::zeros(*grid, total_frames);
    let frame = grid.frame_seconds();
    for n in &score.notes {
        if n.pitch < MIDI_LOW || n.pitch > grid.midi_high() {
            continue;
        }
        let p = (n.pitch - MIDI_LOW) as usize;
        // first t with (t + 0.5) * frame >= onset
        let first = (n.onset / frame - 0.5).ceil().max(0.0) as usize;
        let mut t = first;
        while t < total_frames && grid.frame_center(t) < n.offset() {
            if grid.frame_center(t) >= n.onset {
                roll.notes[[p, t]] = 1.0;
                if t == first {
                    roll.onsets[[p, t]] = 1.0;
                }
            }
            t += 1;
        }
    }
    roll
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Read a WAV file as mono f64 in [-1, 1]; multichannel input is averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
    };
    let ch = spec.channels.max(1) as usize;
    let mono = interleaved.chunks(ch).map(|c| c.iter().sum::<f64>() / ch as f64).collect();
    Ok((mono, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NoteEvent;

    fn note(onset: f64, duration: f64, pitch: u8) -> NoteEvent {
        NoteEvent { onset, duration, pitch, detune: 0.0, velocity: 1.0, track: 0 }
    }

    fn pure() -> Timbre {
        Timbre::plain([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn dft_peak_hz(x: &[f64], sr: f64) -> f64 {
        let n = x.len();
        let mut best = (0, 0.0);
        for k in 1..n / 2 {
            let w = TAU * k as f64 / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                re += v * (w * i as f64).cos();
                im -= v * (w * i as f64).sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0 as f64 * sr / n as f64
    }

    #[test]
    fn timbre_normalizes_energy() {
        let t = Timbre::plain([3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((t.harmonic_amps.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(Timbre::plain([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        for s in 0..20 {
            let r = Timbre::random(s);
            assert!(r.harmonic_amps[0] > 0.0 && r.vibrato_depth <= 50.0);
        }
    }

    #[test]
    fn empty_score_is_silent() {
        let g = GridConfig::default();
        let buf = render_track(&Score::default(), &pure(), &g, 1000, 0).unwrap();
        assert_eq!(buf, vec![0.0; 1000]);
    }

    #[test]
    fn a4_dft_peak() {
        let g = GridConfig::default();
        let score = Score::new(vec![note(0.0, 1.0, 69)]);
        let cfg = RenderConfig { drift_cents: 0.0, peak: Some(0.9) };
        let buf = render_track_with(&score, &pure(), &g, 22_050, 3, &cfg).unwrap();
        let seg = &buf[4096..4096 + 4096];
        let bin = 22_050.0 / 4096.0;
        assert!((dft_peak_hz(seg, 22_050.0) - 440.0).abs() <= bin);
    }

    #[test]
    fn velocity_is_linear_before_normalization() {
        let g = GridConfig::default();
        let cfg = RenderConfig { drift_cents: 20.0, peak: None };
        let mut n = note(0.1, 0.3, 60);
        n.velocity = 0.4;
        let a = render_track_with(&Score::new(vec![n]), &Timbre::random(1), &g, 10_000, 8, &cfg).unwrap();
        n.velocity = 0.8;
        let b = render_track_with(&Score::new(vec![n]), &Timbre::random(1), &g, 10_000, 8, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn peak_is_normalized() {
        let g = GridConfig::default();
        let s = Score::new(vec![note(0.0, 0.2, 50), note(0.1, 0.2, 57)]);
        let buf = render_track(&s, &Timbre::random(2), &g, 8000, 1).unwrap();
        let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-12);
    }

    #[test]
    fn high_harmonics_above_nyquist_are_dropped() {
        // B7 fundamental ~3951 Hz: only h = 1, 2 stay under 11025 Hz
        let g = GridConfig::default();
        let flat = Timbre::plain([1.0; 8]).unwrap();
        let buf = render_track(&Score::new(vec![note(0.0, 0.5, 107)]), &flat, &g, 8192, 0).unwrap();
        assert!(buf.iter().all(|v| v.is_finite()));
        assert!(dft_peak_hz(&buf[2048..4096], 22_050.0) < 11_025.0);
    }

    #[test]
    fn instantaneous_frequency_within_modulation_bound() {
        let g = GridConfig::default();
        let sr = 22_050.0;
        let mut t = pure();
        t.vibrato_depth = 25.0;
        let n = NoteEvent { detune: 10.0, ..note(0.0, 1.0, 57) };
        let buf = render_track(&Score::new(vec![n]), &t, &g, 22_050, 5).unwrap();
        // upward zero crossings with linear interpolation; period between
        // successive crossings gives the local frequency
        let mut crossings = Vec::new();
        for i in 1..buf.len() {
            if buf[i - 1] < 0.0 && buf[i] >= 0.0 {
                crossings.push(i as f64 - 1.0 + buf[i - 1] / (buf[i - 1] - buf[i]));
            }
        }
        let nominal = midi_to_hz(57.0) * 2f64.powf(10.0 / 1200.0);
        let bound = 20.0 + 25.0 + 2.0;
        let mut checked = 0;
        for w in crossings.windows(2).skip(20).take(150) {
            let f = sr / (w[1] - w[0]);
            let cents = 1200.0 * (f / nominal).log2();
            assert!(cents.abs() <= bound, "{cents}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn mixing_is_linear_and_checks_input() {
        assert!(mix_tracks(&[], None, 0).is_err());
        let a = vec![0.1, -0.2, 0.3];
        assert_eq!(mix_tracks(&[a.clone()], None, 0).unwrap(), a);
        let twice = mix_raw(&[a.clone(), a.clone()], None, 0).unwrap();
        assert_eq!(twice, vec![0.2, -0.4, 0.6]);
        let padded = mix_raw(&[a.clone(), vec![1.0]], None, 0).unwrap();
        assert_eq!(padded, vec![1.1, -0.2, 0.3]);
        let loud = mix_tracks(&[vec![2.0, -1.0]], None, 0).unwrap();
        assert!((loud[0] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn noise_hits_requested_snr() {
        let sig: Vec<f64> = (0..22_050).map(|i| 0.3 * (TAU * 440.0 * i as f64 / 22_050.0).sin()).collect();
        for seed in 0..5 {
            let noisy = mix_raw(&[sig.clone()], Some(20.0), seed).unwrap();
            let noise: Vec<f64> = noisy.iter().zip(&sig).map(|(a, b)| a - b).collect();
            let snr = 10.0 * (mean_power(&sig) / mean_power(&noise)).log10();
            assert!((snr - 20.0).abs() <= 0.5, "{snr}");
        }
    }

    #[test]
    fn short_note_on_frame_centre_gives_one_frame() {
        let g = GridConfig::default();
        let c = g.frame_center(10);
        let roll = score_to_pianoroll(&Score::new(vec![note(c, 0.5 * g.frame_seconds(), 60)]), &g, 20);
        assert_eq!(roll.notes.sum(), 1.0);
        assert_eq!(roll.notes[[36, 10]], 1.0);
        assert_eq!(roll.onsets[[36, 10]], 1.0);
        assert_eq!(score_to_pianoroll(&Score::default(), &g, 5).notes.sum(), 0.0);
    }

    #[test]
    fn summed_score_roll_is_clipped_union() {
        let g = GridConfig::default();
        let a = Score::new(vec![note(0.0, 0.5, 60), note(0.3, 0.4, 64)]);
        let b = Score::new(vec![note(0.2, 0.5, 60), note(0.9, 0.2, 40)]);
        let frames = 60;
        let ra = score_to_pianoroll(&a, &g, frames);
        let rb = score_to_pianoroll(&b, &g, frames);
        let both = score_to_pianoroll(&Score::merge([&a, &b]), &g, frames);
        let expected = (&ra.notes + &rb.notes).mapv(|v| v.min(1.0));
        assert_eq!(both.notes, expected);
        // onsets only on active frames
        assert!(both.onsets.iter().zip(both.notes.iter()).all(|(o, n)| *o == 0.0 || *n > 0.0));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x = vec![0.0, 0.5, -0.5, 0.25];
        write_wav(&path, &x, 22_050).unwrap();
        let (y, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 22_050);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1.0 / 32_000.0);
        }
    }
}
