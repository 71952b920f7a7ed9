//! Timbre-separated transcription: salience transcription, per-bin timbre
//! embeddings, optional associative sharpening, and frame- or note-level
//! clustering into per-source pianorolls.

pub mod cluster;
pub mod embed;
pub mod notes;
pub mod salience;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cqt::{energy_normalize, CqtKernelBank};
use crate::error::{Error, Result};
use crate::memory::associate_once;
use crate::types::{EmbeddingField, GridConfig, NoteEvent, Pianoroll};

pub use cluster::{spectral_cluster, Clustering};
pub use embed::{bin_embeddings, note_embedding, DEFAULT_DIM};
pub use notes::{extract_frame_events, extract_note_events, rasterize_events, FrameEvent, NoteConfig};
pub use salience::{salience_transcribe, salience_transcribe_with, SalienceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Frame,
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationConfig {
    /// Activation threshold for bin selection in the frame-level path.
    pub threshold: f64,
    /// Sharpen embeddings with one associative-memory pass before
    /// clustering.
    pub associate: bool,
    pub level: Level,
    pub dim: usize,
    pub salience: SalienceConfig,
    pub notes: NoteConfig,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            associate: false,
            level: Level::Note,
            dim: DEFAULT_DIM,
            salience: SalienceConfig::default(),
            notes: NoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub level: Level,
    /// One roll per source, indexed by cluster label.
    pub sources: Vec<Pianoroll>,
    /// Note events per source (`track` = source index).
    pub events: Vec<Vec<NoteEvent>>,
    /// Label of each clustered item: selected bins (note-major order) for
    /// the frame path, extracted events for the note path.
    pub labels: Vec<usize>,
    /// Cluster count suggested by the Laplacian eigengap; advisory only.
    pub eigengap_estimate: usize,
    /// Estimate-to-reference assignment, once matched against references.
    pub permutation: Option<Vec<usize>>,
}

impl SeparationResult {
    /// Per-source note rolls, ready for permutation-invariant scoring.
    pub fn note_rolls(&self) -> Vec<Array2<f64>> {
        self.sources.iter().map(|s| s.notes.clone()).collect()
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Bins with `y_n >= threshold` in note-major order.
fn select_bins(y_n: &Array2<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let (n, t) = y_n.dim();
    (0..n).flat_map(|p| (0..t).map(move |f| (p, f))).filter(|&(p, f)| y_n[[p, f]] >= threshold).collect()
}

/// Replace the embeddings of bins with `y_n >= threshold` by their single
/// associative-memory pass, rescaled back to norm `y_n` so only directions
/// change. Other bins are untouched.
pub fn associate_field(field: &EmbeddingField, y_n: &Array2<f64>, threshold: f64) -> Result<EmbeddingField> {
    let bins = select_bins(y_n, threshold);
    if bins.is_empty() {
        return Ok(field.clone());
    }
    let d = field.dim();
    let v = Array2::from_shape_fn((bins.len(), d), |(k, j)| field.data[[j, bins[k].0, bins[k].1]]);
    let y: Vec<f64> = bins.iter().map(|&(p, t)| y_n[[p, t]]).collect();
    let sharpened = associate_once(&v, &y)?;
    let mut out = field.clone();
    for (k, &(p, t)) in bins.iter().enumerate() {
        let dir = unit(&sharpened.row(k).to_vec());
        for j in 0..d {
            out.data[[j, p, t]] = dir[j] * y[k];
        }
    }
    Ok(out)
}

/// Frame-level separation: cluster the directions of every bin with
/// `y_n >= threshold` into `m` groups (after one association pass when
/// `associate` is set); source `k` copies the note activation on the bins labelled `k`.
pub fn frame_separate(
    field: &EmbeddingField,
    transcription: &Pianoroll,
    m: usize,
    threshold: f64,
    associate: bool,
    seed: u64,
) -> Result<SeparationResult> {
    if m == 0 {
        return Err(Error::invalid("source count must be >= 1"));
    }
    let y_n = &transcription.notes;
    if y_n.dim() != (field.n_pitches(), field.frames()) {
        return Err(Error::shape(format!("activations {:?} vs field {:?}", y_n.dim(), field.data.dim())));
    }
    let bins = select_bins(y_n, threshold);
    if bins.len() < m {
        return Err(Error::TooFewBins { selected: bins.len(), m });
    }
    let d = field.dim();
    let mut v = Array2::from_shape_fn((bins.len(), d), |(k, j)| field.data[[j, bins[k].0, bins[k].1]]);
    if associate {
        let y: Vec<f64> = bins.iter().map(|&(p, t)| y_n[[p, t]]).collect();
        v = associate_once(&v, &y)?;
    }
    for mut row in v.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|x| x / n);
        }
    }
    let clustering = spectral_cluster(&v, m, seed)?;
    let mut sources = vec![Pianoroll::zeros(transcription.grid, field.frames()); m];
    for (&(p, t), &label) in bins.iter().zip(&clustering.labels) {
        sources[label].notes[[p, t]] = y_n[[p, t]];
    }
    for src in sources.iter_mut() {
        src.onsets = salience::onset_activation(&src.notes);
    }
    Ok(SeparationResult {
        level: Level::Frame,
        events: vec![Vec::new(); m],
        sources,
        eigengap_estimate: clustering.eigengap_estimate(),
        labels: clustering.labels,
        permutation: None,
    })
}

/// Note-level separation: extract events from the mixture activations,
/// embed each as its activation-weighted mean direction, cluster the events
/// into `m` groups and rasterize each group. Every event gets exactly one
/// label.
pub fn note_separate(
    roll: &Pianoroll,
    field: &EmbeddingField,
    m: usize,
    cfg: &NoteConfig,
    seed: u64,
) -> Result<SeparationResult> {
    if m == 0 {
        return Err(Error::invalid("source count must be >= 1"));
    }
    let events = extract_frame_events(&roll.notes, &roll.onsets, cfg)?;
    if events.len() < m {
        return Err(Error::TooFewPoints { k: m, n: events.len() });
    }
    let embeddings: Vec<Vec<f64>> =
        events.iter().map(|e| note_embedding(e, field, &roll.notes)).collect::<Result<_>>()?;
    let v = Array2::from_shape_fn((events.len(), field.dim()), |(i, j)| embeddings[i][j]);
    let clustering = spectral_cluster(&v, m, seed)?;
    let mut grouped: Vec<Vec<FrameEvent>> = vec![Vec::new(); m];
    for (e, &label) in events.iter().zip(&clustering.labels) {
        grouped[label].push(*e);
    }
    let sources = grouped.iter().map(|g| rasterize_events(g, &roll.grid, roll.frames())).collect();
    let note_events = grouped
        .iter()
        .enumerate()
        .map(|(label, g)| {
            g.iter()
                .map(|e| {
                    let peak = (e.start..e.end).map(|t| roll.notes[[e.pitch, t]]).fold(0.0, f64::max);
                    e.to_note(&roll.grid, peak.clamp(f64::MIN_POSITIVE, 1.0), label)
                })
                .collect()
        })
        .collect();
    Ok(SeparationResult {
        level: Level::Note,
        sources,
        events: note_events,
        eigengap_estimate: clustering.eigengap_estimate(),
        labels: clustering.labels,
        permutation: None,
    })
}

/// Intermediate products of the analysis front end.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub transcription: Pianoroll,
    pub field: EmbeddingField,
}

/// CQT, energy normalization, salience transcription and bin embeddings
/// (associated when `cfg.associate` is set).
pub fn analyze(audio: &[f64], grid: &GridConfig, cfg: &SeparationConfig) -> Result<Analysis> {
    let bank = CqtKernelBank::new(grid)?;
    let q = energy_normalize(&bank.forward(audio)?)?;
    let transcription = salience_transcribe_with(&q, grid, &cfg.salience)?;
    let mut field = bin_embeddings(&q, &transcription.notes, grid, cfg.dim)?;
    if cfg.associate {
        field = associate_field(&field, &transcription.notes, cfg.notes.off_thresh)?;
    }
    Ok(Analysis { transcription, field })
}

/// Full pipeline from audio to `m` separated sources.
pub fn separate_audio(audio: &[f64], grid: &GridConfig, m: usize, cfg: &SeparationConfig, seed: u64) -> Result<SeparationResult> {
    let analysis = analyze(audio, grid, cfg)?;
    separate_analysis(&analysis, m, cfg, seed)
}

/// Clustering stage of [`separate_audio`] on a precomputed analysis.
pub fn separate_analysis(analysis: &Analysis, m: usize, cfg: &SeparationConfig, seed: u64) -> Result<SeparationResult> {
    match cfg.level {
        Level::Note => note_separate(&analysis.transcription, &analysis.field, m, &cfg.notes, seed),
        // the field is already associated when requested
        Level::Frame => frame_separate(&analysis.field, &analysis.transcription, m, cfg.threshold, false, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two sources with orthogonal directions: source 0 plays pitches 10..14
    /// in frames 0..20, source 1 plays pitches 40..44 in frames 10..40.
    fn planted() -> (Pianoroll, EmbeddingField, Vec<Array2<f64>>) {
        let grid = GridConfig::default();
        let frames = 40;
        let mut notes = Array2::zeros((grid.n_pitches, frames));
        let mut field = EmbeddingField::zeros(4, grid.n_pitches, frames);
        let mut refs = vec![Array2::zeros((grid.n_pitches, frames)); 2];
        for (src, pitches, span, dir) in [(0, 10..14, 0..20, [1.0, 0.2, 0.0, 0.0]), (1, 40..44, 10..40, [0.0, 0.1, 1.0, 0.3])] {
            let dir = unit(&dir);
            for p in pitches {
                for t in span.clone() {
                    let y = 0.6 + 0.01 * (p + t) as f64 % 0.3;
                    notes[[p, t]] = y;
                    refs[src][[p, t]] = 1.0;
                    for j in 0..4 {
                        field.data[[j, p, t]] = y * dir[j];
                    }
                }
            }
        }
        let onsets = salience::onset_activation(&notes);
        (Pianoroll::new(notes, onsets, grid).unwrap(), field, refs)
    }

    #[test]
    fn single_source_copies_thresholded_input() {
        let (roll, field, _) = planted();
        let out = frame_separate(&field, &roll, 1, 0.5, false, 0).unwrap();
        assert_eq!(out.sources.len(), 1);
        assert_eq!(out.sources[0].notes, roll.notes.mapv(|v| if v >= 0.5 { v } else { 0.0 }));
    }

    #[test]
    fn threshold_above_one_selects_nothing() {
        let (roll, field, _) = planted();
        assert!(matches!(frame_separate(&field, &roll, 2, 1.01, false, 0), Err(Error::TooFewBins { selected: 0, m: 2 })));
    }

    #[test]
    fn frame_sources_partition_the_selection() {
        let (roll, field, refs) = planted();
        for associate in [false, true] {
            let out = frame_separate(&field, &roll, 2, 0.5, associate, 7).unwrap();
            let union = out.sources.iter().fold(Array2::<f64>::zeros(roll.notes.dim()), |a, s| a + &s.notes);
            assert_eq!(union, roll.notes);
            let pit = crate::eval::pit_match(&refs, &out.note_rolls(), 0.5).unwrap();
            assert_eq!(pit.mean.f1, 1.0, "associate {associate}");
        }
    }

    #[test]
    fn note_level_recovers_planted_sources() {
        let (roll, field, refs) = planted();
        let out = note_separate(&roll, &field, 2, &NoteConfig::default(), 3).unwrap();
        assert_eq!(out.labels.len(), 8);
        assert_eq!(out.events.iter().map(Vec::len).sum::<usize>(), 8);
        let pit = crate::eval::pit_match(&refs, &out.note_rolls(), 0.5).unwrap();
        assert_eq!(pit.mean.f1, 1.0);
        for (k, evs) in out.events.iter().enumerate() {
            assert!(evs.iter().all(|e| e.track == k));
        }
    }

    #[test]
    fn more_sources_than_events_is_an_error() {
        let (roll, field, _) = planted();
        assert!(matches!(
            note_separate(&roll, &field, 9, &NoteConfig::default(), 0),
            Err(Error::TooFewPoints { k: 9, n: 8 })
        ));
        assert!(note_separate(&roll, &field, 0, &NoteConfig::default(), 0).is_err());
    }

    #[test]
    fn association_keeps_norms() {
        let (roll, field, _) = planted();
        let out = associate_field(&field, &roll.notes, 0.3).unwrap();
        for ((p, t), y) in roll.notes.indexed_iter() {
            assert!((out.norm_at(p, t) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = SeparationConfig::default();
        let back: SeparationConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(!cfg.associate);
        assert!(serde_json::from_str::<SeparationConfig>(r#"{"level":"frame"}"#).unwrap().level == Level::Frame);
        assert!(serde_json::from_str::<SeparationConfig>(r#"{"levle":"frame"}"#).is_err());
    }
}
