//! Multi-timbre dataset layout: timbre categories with a few similar
//! instruments each, fixed-length songs per instrument, and manifests of
//! category mixtures.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{enumerate_mixes, generate_score, PitchGenConfig, TimingConfig};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::synth::{render_track_with, score_to_pianoroll, write_wav, RenderConfig, Timbre, N_HARMONICS};
use crate::tensor::write_tensor;
use crate::types::{GridConfig, Pianoroll, Score};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub categories: usize,
    /// Similar instruments per category.
    pub variants: usize,
    /// Songs per instrument.
    pub songs: usize,
    /// Length of every song in frames.
    pub frames: usize,
    /// Mixture sizes to write manifests for.
    pub mix_sizes: Vec<usize>,
    pub pitch: PitchGenConfig,
    pub timing: TimingConfig,
    pub render: RenderConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            categories: 9,
            variants: 2,
            songs: 6,
            frames: 600,
            mix_sizes: vec![2],
            pitch: PitchGenConfig::default(),
            timing: TimingConfig::default(),
            render: RenderConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.variants == 0 || self.songs == 0 || self.frames == 0 {
            return Err(Error::invalid("categories, variants, songs and frames must all be >= 1"));
        }
        if let Some(&m) = self.mix_sizes.iter().find(|&&m| m == 0 || m > self.categories) {
            return Err(Error::MixTooLarge { m, n: self.categories });
        }
        self.pitch.validate()?;
        self.timing.validate()
    }

    pub fn song_samples(&self, grid: &GridConfig) -> usize {
        self.frames * grid.hop
    }

    /// Total audio across every instrument's songs, in seconds.
    pub fn total_seconds(&self, grid: &GridConfig) -> f64 {
        (self.categories * self.variants * self.songs * self.song_samples(grid)) as f64 / grid.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub category: usize,
    pub variant: usize,
    pub timbre: Timbre,
}

/// Instruments of the set: each category draws a random base timbre and
/// its variants perturb the harmonic amplitudes by up to 15% and the
/// envelope times by up to 20%, so instruments of one category sound alike.
pub fn instruments(cfg: &DatasetConfig, seed: u64) -> Vec<Instrument> {
    (0..cfg.categories)
        .flat_map(|category| {
            let category_seed = derive_seed(seed, category as u64);
            let base = Timbre::random(category_seed);
            (0..cfg.variants).map(move |variant| {
                let timbre = if variant == 0 { base.clone() } else { perturb(&base, derive_seed(category_seed, variant as u64)) };
                Instrument { category, variant, timbre }
            })
        })
        .collect()
}

fn perturb(base: &Timbre, seed: u64) -> Timbre {
    let mut rng = rng::stream(seed, rng::STREAM_TIMBRE);
    let mut amps = [0.0; N_HARMONICS];
    for (a, b) in amps.iter_mut().zip(&base.harmonic_amps) {
        *a = b * rng.gen_range(0.85..1.15);
    }
    let mut adsr = base.adsr;
    adsr.attack *= rng.gen_range(0.8..1.2);
    adsr.decay *= rng.gen_range(0.8..1.2);
    adsr.release *= rng.gen_range(0.8..1.2);
    let vibrato_rate = base.vibrato_rate * rng.gen_range(0.9..1.1);
    Timbre::new(amps, adsr, vibrato_rate, base.vibrato_depth, base.tremolo_depth).expect("perturbed timbre stays in range")
}

/// Score filling one song: notes starting inside the song, each cut at the
/// song's end.
pub fn song_score(cfg: &DatasetConfig, grid: &GridConfig, seed: u64) -> Result<Score> {
    let length = cfg.song_samples(grid) as f64 / grid.sample_rate as f64;
    // generous note budget; rests and overlaps make the exact count vary
    let budget = (2.0 * length / cfg.timing.mean_duration()).ceil() as usize + 4;
    let mut score = generate_score(&cfg.pitch, &cfg.timing, budget, seed)?;
    score.notes.retain(|n| n.onset < length);
    for n in score.notes.iter_mut() {
        n.duration = n.duration.min(length - n.onset);
    }
    Ok(score)
}

/// One rendered song of one instrument.
#[derive(Debug, Clone)]
pub struct Song {
    pub category: usize,
    pub variant: usize,
    pub song: usize,
    pub score: Score,
    pub audio: Vec<f64>,
    pub roll: Pianoroll,
}

impl Song {
    pub fn stem(&self) -> String {
        track_stem(self.category, self.variant, self.song)
    }
}

pub fn track_stem(category: usize, variant: usize, song: usize) -> String {
    format!("c{category:02}_v{variant}_s{song:02}")
}

/// Seed of song `song` of an instrument; distinct for every triple.
pub fn song_seed(seed: u64, category: usize, variant: usize, song: usize) -> u64 {
    derive_seed(seed, ((category * 64 + variant) * 4096 + song) as u64)
}

pub fn render_song(cfg: &DatasetConfig, grid: &GridConfig, inst: &Instrument, song: usize, seed: u64) -> Result<Song> {
    let s = song_seed(seed, inst.category, inst.variant, song);
    let score = song_score(cfg, grid, s)?.with_track(inst.category);
    let audio = render_track_with(&score, &inst.timbre, grid, cfg.song_samples(grid), s, &cfg.render)?;
    let roll = score_to_pianoroll(&score, grid, cfg.frames);
    Ok(Song { category: inst.category, variant: inst.variant, song, score, audio, roll })
}

/// One slot of a mixture: which instrument variant of a category plays
/// which of its songs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSlot {
    pub category: usize,
    pub variant: usize,
    pub song: usize,
}

/// Manifest for `m`-mixtures: one row per [`enumerate_mixes`] tuple over
/// categories and songs, with each slot's variant drawn from `seed`.
pub fn manifest(cfg: &DatasetConfig, m: usize, seed: u64) -> Result<Vec<Vec<ManifestSlot>>> {
    let mut rng = rng::stream(derive_seed(seed, m as u64), rng::STREAM_MANIFEST);
    Ok(enumerate_mixes(cfg.categories, cfg.songs, m)?
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|s| ManifestSlot { category: s.instrument, variant: rng.gen_range(0..cfg.variants), song: s.song })
                .collect()
        })
        .collect())
}

/// Tab-separated manifest: a header, then `mix` id and one
/// `cCC_vV_sSS` track stem per slot.
pub fn write_manifest<W: Write>(mut w: W, rows: &[Vec<ManifestSlot>]) -> Result<()> {
    let m = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("mix".to_string()).chain((0..m).map(|i| format!("track_{i}"))).collect();
    writeln!(w, "{}", header.join("\t"))?;
    for (i, row) in rows.iter().enumerate() {
        let stems: Vec<String> = row.iter().map(|s| track_stem(s.category, s.variant, s.song)).collect();
        writeln!(w, "{i:05}\t{}", stems.join("\t"))?;
    }
    Ok(())
}

pub fn read_manifest(text: &str) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines();
    lines.next().ok_or_else(|| Error::invalid("empty manifest"))?;
    Ok(lines.filter(|l| !l.is_empty()).map(|l| l.split('\t').skip(1).map(str::to_string).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub instruments: usize,
    pub tracks: usize,
    pub total_seconds: f64,
    /// `(m, rows)` per manifest written.
    pub manifests: Vec<(usize, usize)>,
}

pub fn manifest_path(dir: &Path, m: usize) -> PathBuf {
    dir.join(format!("manifest_m{m}.tsv"))
}

/// Write the whole set under `dir`: `instruments.json`, then per track
/// `tracks/<stem>.wav`, `.jsonl` score and `.roll` pianoroll tensor, and a
/// manifest per mixture size. Tracks are rendered in parallel.
pub fn write_dataset(cfg: &DatasetConfig, grid: &GridConfig, seed: u64, dir: &Path) -> Result<DatasetSummary> {
    cfg.validate()?;
    grid.validate()?;
    let tracks_dir = dir.join("tracks");
    fs::create_dir_all(&tracks_dir)?;
    let insts = instruments(cfg, seed);
    fs::write(dir.join("instruments.json"), serde_json::to_string_pretty(&insts)?)?;
    let jobs: Vec<(&Instrument, usize)> = insts.iter().flat_map(|i| (0..cfg.songs).map(move |s| (i, s))).collect();
    jobs.par_iter().try_for_each(|&(inst, s)| -> Result<()> {
        let song = render_song(cfg, grid, inst, s, seed)?;
        let stem = tracks_dir.join(song.stem());
        write_wav(stem.with_extension("wav"), &song.audio, grid.sample_rate)?;
        song.score.write_jsonl(BufWriter::new(fs::File::create(stem.with_extension("jsonl"))?))?;
        let (t, meta) = song.roll.to_tensor();
        write_tensor(stem.with_extension("roll"), &t, &meta)
    })?;
    let mut manifests = Vec::new();
    for &m in &cfg.mix_sizes {
        let rows = manifest(cfg, m, seed)?;
        write_manifest(BufWriter::new(fs::File::create(manifest_path(dir, m))?), &rows)?;
        manifests.push((m, rows.len()));
    }
    let summary = DatasetSummary {
        instruments: insts.len(),
        tracks: jobs.len(),
        total_seconds: cfg.total_seconds(grid),
        manifests,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
