//! Shared domain types: the analysis grid, symbolic notes, pianorolls,
//! spectrograms and per-bin embedding fields.

use std::io::{BufRead, Write};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MIDI number of the lowest transcribed pitch (C1). Pitch index 0 maps here.
pub const MIDI_LOW: u8 = 24;
/// MIDI number of the highest transcribed pitch (B7).
pub const MIDI_HIGH: u8 = 107;

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// Time/frequency grid shared by synthesis, analysis and rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub n_pitches: usize,
    pub bins_per_semitone: usize,
    pub n_octaves_cqt: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22_050,
            hop: 256,
            n_pitches: 84,
            bins_per_semitone: 3,
            n_octaves_cqt: 8,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.bins_per_semitone == 0 {
            return Err(Error::invalid("grid sample_rate, hop and bins_per_semitone must be > 0"));
        }
        if self.n_pitches == 0 || self.n_pitches % 12 != 0 {
            return Err(Error::invalid("n_pitches must be a positive multiple of 12"));
        }
        if self.n_octaves_cqt * 12 < self.n_pitches {
            return Err(Error::invalid("CQT must cover the pitch range"));
        }
        Ok(())
    }

    pub fn bins_per_octave(&self) -> usize {
        12 * self.bins_per_semitone
    }

    pub fn f_bins(&self) -> usize {
        self.n_octaves_cqt * self.bins_per_octave()
    }

    /// Frequency of pitch index 0 (C1).
    pub fn f_min(&self) -> f64 {
        midi_to_hz(MIDI_LOW as f64)
    }

    pub fn midi_high(&self) -> u8 {
        MIDI_LOW + self.n_pitches as u8 - 1
    }

    /// Centre frequency of CQT row `row`. The centre row of each semitone
    /// (`bins_per_semitone * k + bins_per_semitone / 2`) sits on pitch index `k`.
    pub fn bin_frequency(&self, row: usize) -> f64 {
        let offset = row as f64 - (self.bins_per_semitone / 2) as f64;
        self.f_min() * 2f64.powf(offset / self.bins_per_octave() as f64)
    }

    /// CQT row centred on a pitch index.
    pub fn pitch_row(&self, pitch_index: usize) -> usize {
        self.bins_per_semitone * pitch_index + self.bins_per_semitone / 2
    }

    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples / self.hop
    }

    /// Time of the centre of frame `t`, in seconds.
    pub fn frame_center(&self, t: usize) -> f64 {
        (t as f64 + 0.5) * self.hop as f64 / self.sample_rate as f64
    }

    pub fn frame_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// One symbolic note of a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteEvent {
    pub onset: f64,
    pub duration: f64,
    pub pitch: u8,
    pub detune: f64,
    pub velocity: f64,
    pub track: usize,
}

impl NoteEvent {
    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if !self.onset.is_finite() || self.onset < 0.0 {
            return Err(Error::invalid(format!("onset {} must be finite and >= 0", self.onset)));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid(format!("duration {} must be > 0", self.duration)));
        }
        if self.pitch < MIDI_LOW || self.pitch > grid.midi_high() {
            return Err(Error::invalid(format!("pitch {} out of range", self.pitch)));
        }
        if !(0.0..=1.0).contains(&self.velocity) {
            return Err(Error::invalid(format!("velocity {} outside [0,1]", self.velocity)));
        }
        if !self.detune.is_finite() {
            return Err(Error::invalid("detune must be finite"));
        }
        Ok(())
    }
}

/// An ordered list of notes, possibly spanning several tracks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub notes: Vec<NoteEvent>,
}

impl Score {
    pub fn new(notes: Vec<NoteEvent>) -> Self {
        Self { notes }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    /// Latest note-off time, 0 for an empty score.
    pub fn end_time(&self) -> f64 {
        self.notes.iter().map(NoteEvent::offset).fold(0.0, f64::max)
    }

    pub fn with_track(mut self, track: usize) -> Self {
        for n in &mut self.notes {
            n.track = track;
        }
        self
    }

    /// Concatenate the note lists of several scores.
    pub fn merge<'a>(scores: impl IntoIterator<Item = &'a Score>) -> Score {
        Score { notes: scores.into_iter().flat_map(|s| s.notes.iter().copied()).collect() }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for n in &self.notes {
            serde_json::to_writer(&mut w, n)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Score> {
        let mut notes = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            notes.push(serde_json::from_str(&line)?);
        }
        Ok(Score { notes })
    }
}

/// Note and onset activations, `n_pitches x frames`, entries in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Pianoroll {
    pub notes: Array2<f64>,
    pub onsets: Array2<f64>,
    pub grid: GridConfig,
}

impl Pianoroll {
    pub fn zeros(grid: GridConfig, frames: usize) -> Self {
        Self {
            notes: Array2::zeros((grid.n_pitches, frames)),
            onsets: Array2::zeros((grid.n_pitches, frames)),
            grid,
        }
    }

    pub fn new(notes: Array2<f64>, onsets: Array2<f64>, grid: GridConfig) -> Result<Self> {
        if notes.dim() != onsets.dim() {
            return Err(Error::shape(format!("notes {:?} vs onsets {:?}", notes.dim(), onsets.dim())));
        }
        if notes.nrows() != grid.n_pitches {
            return Err(Error::shape(format!("{} rows, grid has {} pitches", notes.nrows(), grid.n_pitches)));
        }
        if notes.iter().chain(onsets.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pianoroll entries must lie in [0,1]"));
        }
        Ok(Self { notes, onsets, grid })
    }

    pub fn frames(&self) -> usize {
        self.notes.ncols()
    }

    pub fn active_bins(&self, threshold: f64) -> usize {
        self.notes.iter().filter(|&&v| v >= threshold).count()
    }
}

/// Complex constant-Q spectrogram, `f_bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtSpectrogram {
    pub data: Array2<Complex64>,
    pub grid: GridConfig,
}

impl CqtSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }
}

/// Per-bin embeddings, stored `dim x n_pitches x frames`. Direction carries
/// timbre, norm carries note probability.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingField {
    pub data: Array3<f64>,
}

impl EmbeddingField {
    pub fn zeros(dim: usize, n_pitches: usize, frames: usize) -> Self {
        Self { data: Array3::zeros((dim, n_pitches, frames)) }
    }

    pub fn dim(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_pitches(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn vector(&self, pitch: usize, frame: usize) -> Vec<f64> {
        self.data.slice(ndarray::s![.., pitch, frame]).to_vec()
    }

    pub fn norm_at(&self, pitch: usize, frame: usize) -> f64 {
        self.data.slice(ndarray::s![.., pitch, frame]).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Flatten to `K x dim` rows with K ordered note-major, then time
    /// (`k = pitch * frames + frame`).
    pub fn to_rows(&self) -> Array2<f64> {
        let (d, n, t) = self.data.dim();
        let mut rows = Array2::zeros((n * t, d));
        for p in 0..n {
            for f in 0..t {
                let k = p * t + f;
                for j in 0..d {
                    rows[[k, j]] = self.data[[j, p, f]];
                }
            }
        }
        rows
    }
}
