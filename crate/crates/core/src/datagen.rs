//! Randomized score generation: shuffled pitch cycles with a nearest-pitch
//! melodic bias, chord-tone insertion at harmonically overlapping intervals,
//! Markov-chain note timing, and M-way mixture enumeration.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{NoteEvent, Score};

/// Intervals (semitones) at which low harmonics of two notes coincide:
/// octave, fifth, fourth, major third.
pub const OVERLAP_INTERVALS: [u8; 4] = [4, 5, 7, 12];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchGenConfig {
    pub pitch_low: u8,
    pub pitch_high: u8,
    pub pool_size: usize,
    pub p_nearest: f64,
    pub p_chord: f64,
    pub chord_intervals: Vec<u8>,
}

impl Default for PitchGenConfig {
    fn default() -> Self {
        Self {
            pitch_low: 36,
            pitch_high: 96,
            pool_size: 8,
            p_nearest: 0.7,
            p_chord: 0.3,
            chord_intervals: OVERLAP_INTERVALS.to_vec(),
        }
    }
}

impl PitchGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pitch_low > self.pitch_high {
            return Err(Error::EmptyRange);
        }
        if self.pool_size == 0 {
            return Err(Error::invalid("pool_size must be >= 1"));
        }
        for p in [self.p_nearest, self.p_chord] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("probability {p} outside [0,1]")));
            }
        }
        if self.chord_intervals.is_empty() && self.p_chord > 0.0 {
            return Err(Error::invalid("chord_intervals empty while p_chord > 0"));
        }
        if let Some(bad) = self.chord_intervals.iter().find(|i| !OVERLAP_INTERVALS.contains(i)) {
            return Err(Error::invalid(format!("chord interval {bad} not in {{4,5,7,12}}")));
        }
        Ok(())
    }

    fn range_len(&self) -> usize {
        (self.pitch_high - self.pitch_low) as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    Sequential = 0,
    Overlap = 1,
    Rest = 2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub bpm: f64,
    pub duration_sigma_ratio: f64,
    pub offset_sigma: f64,
    /// Row-stochastic transitions over {sequential, overlap, rest}.
    pub markov: [[f64; 3]; 3],
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            bpm: 120.0,
            duration_sigma_ratio: 0.3,
            offset_sigma: 0.05,
            markov: [[0.6, 0.2, 0.2]; 3],
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bpm > 0.0) {
            return Err(Error::invalid("bpm must be > 0"));
        }
        if self.duration_sigma_ratio < 0.0 || self.offset_sigma < 0.0 {
            return Err(Error::invalid("sigmas must be >= 0"));
        }
        for (i, row) in self.markov.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::invalid(format!("markov row {i} is not a distribution")));
            }
        }
        Ok(())
    }

    pub fn mean_duration(&self) -> f64 {
        60.0 / self.bpm
    }
}

/// Draw `count` pitches in shuffled cycles. Within a cycle every in-range
/// pitch appears exactly once; each pick looks at the next `pool_size`
/// remaining pitches and, with probability `p_nearest`, takes the one
/// closest to the previous pitch (ties to the lower), otherwise a uniform
/// member of the pool.
pub fn generate_pitch_sequence(cfg: &PitchGenConfig, count: usize, seed: u64) -> Result<Vec<u8>> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, rng::STREAM_PITCH);
    let all: Vec<u8> = (cfg.pitch_low..=cfg.pitch_high).collect();
    let mut remaining: Vec<u8> = Vec::with_capacity(all.len());
    let mut out = Vec::with_capacity(count);
    let mut prev: Option<u8> = None;
    while out.len() < count {
        if remaining.is_empty() {
            remaining.extend_from_slice(&all);
            remaining.shuffle(&mut rng);
        }
        let pool = cfg.pool_size.min(remaining.len());
        let idx = match prev {
            Some(p) if rng.gen_bool(cfg.p_nearest) => remaining[..pool]
                .iter()
                .enumerate()
                .min_by_key(|(_, &q)| ((q as i32 - p as i32).abs(), q))
                .map(|(i, _)| i)
                .expect("pool is nonempty"),
            _ => rng.gen_range(0..pool),
        };
        let pitch = remaining.remove(idx);
        out.push(pitch);
        prev = Some(pitch);
    }
    Ok(out)
}

/// With probability `p_chord` per event, add a simultaneous copy of it a
/// uniformly chosen chord interval higher. Copies that would leave the
/// configured range are skipped. Added events follow their source event.
pub fn insert_chord_tones(events: &[NoteEvent], cfg: &PitchGenConfig, seed: u64) -> Result<Vec<NoteEvent>> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, rng::STREAM_CHORDS);
    let mut out = Vec::with_capacity(events.len());
    for ev in events {
        out.push(*ev);
        if cfg.p_chord > 0.0 && rng.gen_bool(cfg.p_chord) {
            let interval = *cfg.chord_intervals.choose(&mut rng).expect("validated nonempty");
            let pitch = ev.pitch as u16 + interval as u16;
            if pitch <= cfg.pitch_high as u16 {
                out.push(NoteEvent { pitch: pitch as u8, ..*ev });
            }
        }
    }
    Ok(out)
}

fn truncated_normal(rng: &mut Rng, mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let dist = Normal::new(mean, sigma).expect("sigma > 0");
    for _ in 0..1000 {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

/// Onsets and durations for a single voice.
pub fn generate_timing(n: usize, cfg: &TimingConfig, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, rng::STREAM_TIMING);
    let mean = cfg.mean_duration();
    let (lo, hi) = (0.05f64.min(4.0 * mean), 4.0 * mean);
    let durations: Vec<f64> =
        (0..n).map(|_| truncated_normal(&mut rng, mean, cfg.duration_sigma_ratio * mean, lo, hi)).collect();
    let offset = (cfg.offset_sigma > 0.0).then(|| Normal::new(0.0, cfg.offset_sigma).expect("sigma > 0"));
    let draw_offset = |rng: &mut Rng| offset.map_or(0.0, |d| d.sample(rng));

    let mut onsets = Vec::with_capacity(n);
    let mut state = Link::Sequential;
    for i in 0..n {
        if i == 0 {
            onsets.push(0.0);
            continue;
        }
        let row = cfg.markov[state as usize];
        let u: f64 = rng.gen();
        state = if u < row[0] {
            Link::Sequential
        } else if u < row[0] + row[1] {
            Link::Overlap
        } else {
            Link::Rest
        };
        let (prev_onset, prev_dur) = (onsets[i - 1], durations[i - 1]);
        let prev_end = prev_onset + prev_dur;
        let nominal = match state {
            Link::Sequential => prev_end,
            Link::Overlap => prev_end - rng.gen::<f64>() * prev_dur,
            Link::Rest => prev_end + draw_offset(&mut rng).abs(),
        };
        let jittered = nominal + draw_offset(&mut rng);
        onsets.push(jittered.max(prev_onset).max(0.0));
    }
    Ok((onsets, durations))
}

/// A single-track score: pitch cycles, Markov timing, per-note detune in
/// (-20, 20) cents and velocity in (0.5, 1), then chord tones.
pub fn generate_score(pitch_cfg: &PitchGenConfig, timing_cfg: &TimingConfig, n_notes: usize, seed: u64) -> Result<Score> {
    if n_notes == 0 {
        pitch_cfg.validate()?;
        timing_cfg.validate()?;
        return Ok(Score::default());
    }
    let pitches = generate_pitch_sequence(pitch_cfg, n_notes, seed)?;
    let (onsets, durations) = generate_timing(n_notes, timing_cfg, seed)?;
    let mut rng = rng::stream(seed, rng::STREAM_EXPRESSION);
    let notes: Vec<NoteEvent> = (0..n_notes)
        .map(|i| NoteEvent {
            onset: onsets[i],
            duration: durations[i],
            pitch: pitches[i],
            detune: rng.gen_range(-20.0..20.0),
            velocity: rng.gen_range(0.5..1.0),
            track: 0,
        })
        .collect();
    Ok(Score::new(insert_chord_tones(&notes, pitch_cfg, seed)?))
}

/// Notes needed for one full pitch cycle of `cfg`.
pub fn cycle_len(cfg: &PitchGenConfig) -> usize {
    cfg.range_len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSlot {
    pub instrument: usize,
    pub song: usize,
}

/// Every M-tuple of (instrument, song) with pairwise-distinct instruments:
/// `songs_per^m * C(n_instruments, m)` entries, instruments ascending within
/// a tuple.
pub fn enumerate_mixes(n_instruments: usize, songs_per: usize, m: usize) -> Result<Vec<Vec<MixSlot>>> {
    if m == 0 {
        return Err(Error::invalid("mixture size must be >= 1"));
    }
    if m > n_instruments {
        return Err(Error::MixTooLarge { m, n: n_instruments });
    }
    let mut out = Vec::new();
    for instruments in (0..n_instruments).combinations(m) {
        for songs in (0..m).map(|_| 0..songs_per).multi_cartesian_product() {
            out.push(instruments.iter().zip(&songs).map(|(&instrument, &song)| MixSlot { instrument, song }).collect());
        }
    }
    Ok(out)
}
