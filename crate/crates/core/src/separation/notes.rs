//! Note-event extraction from frame activations, and rasterization back.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GridConfig, NoteEvent, Pianoroll, MIDI_LOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoteConfig {
    pub on_thresh: f64,
    pub off_thresh: f64,
    pub min_frames: usize,
    /// Same-pitch events separated by fewer frames than this are merged.
    pub merge_gap: usize,
    /// After onset-seeded tracking, also turn any remaining run that peaks
    /// at or above `on_thresh` into an event, grown in both directions
    /// while above `off_thresh`.
    pub unseeded_runs: bool,
}

impl Default for NoteConfig {
    fn default() -> Self {
        Self { on_thresh: 0.5, off_thresh: 0.3, min_frames: 3, merge_gap: 2, unseeded_runs: true }
    }
}

impl NoteConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.on_thresh) || !open(self.off_thresh) || self.on_thresh < self.off_thresh {
            return Err(Error::invalid("need 0 < off_thresh <= on_thresh < 1"));
        }
        Ok(())
    }
}

/// An event on the frame grid: pitch index and frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameEvent {
    pub pitch: usize,
    pub start: usize,
    pub end: usize,
}

impl FrameEvent {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Seconds-based event whose frame-centre rasterization is exactly
    /// `start..end`.
    pub fn to_note(&self, grid: &GridConfig, velocity: f64, track: usize) -> NoteEvent {
        let frame = grid.frame_seconds();
        NoteEvent {
            onset: self.start as f64 * frame,
            duration: self.len() as f64 * frame,
            pitch: MIDI_LOW + self.pitch as u8,
            detune: 0.0,
            velocity,
            track,
        }
    }
}

fn is_seed(y_n: &Array2<f64>, y_o: &Array2<f64>, p: usize, t: usize, cfg: &NoteConfig) -> bool {
    let o = y_o[[p, t]];
    if o < cfg.on_thresh || y_n[[p, t]] < cfg.off_thresh {
        return false;
    }
    // local maximum; on a plateau only its first frame counts
    let before = if t == 0 { f64::NEG_INFINITY } else { y_o[[p, t - 1]] };
    let after = y_o.get([p, t + 1]).copied().unwrap_or(f64::NEG_INFINITY);
    o > before && o >= after
}

/// Frame events from note (`y_n`) and onset (`y_o`) activations.
///
/// Each pitch row is scanned forward: a seed (local maximum of `y_o` at or
/// above `on_thresh`) starts an event, closing any open one; an event grows
/// while `y_n >= off_thresh`. Optionally, remaining runs reaching
/// `on_thresh` become events too. Same-pitch events separated by fewer than
/// `merge_gap` frames are then merged, and finally events shorter than
/// `min_frames` are dropped. Output is sorted by (pitch, start).
pub fn extract_frame_events(y_n: &Array2<f64>, y_o: &Array2<f64>, cfg: &NoteConfig) -> Result<Vec<FrameEvent>> {
    cfg.validate()?;
    if y_n.dim() != y_o.dim() {
        return Err(Error::shape(format!("notes {:?} vs onsets {:?}", y_n.dim(), y_o.dim())));
    }
    let (n, frames) = y_n.dim();
    let mut out = Vec::new();
    for p in 0..n {
        let mut covered = vec![false; frames];
        let mut row_events = Vec::new();
        let mut open: Option<usize> = None;
        for t in 0..frames {
            if is_seed(y_n, y_o, p, t, cfg) {
                if let Some(s) = open.take() {
                    row_events.push(FrameEvent { pitch: p, start: s, end: t });
                }
                open = Some(t);
            } else if open.is_some() && y_n[[p, t]] < cfg.off_thresh {
                row_events.push(FrameEvent { pitch: p, start: open.take().unwrap(), end: t });
            }
        }
        if let Some(s) = open {
            row_events.push(FrameEvent { pitch: p, start: s, end: frames });
        }
        for e in &row_events {
            covered[e.start..e.end].iter_mut().for_each(|c| *c = true);
        }
        if cfg.unseeded_runs {
            let mut t = 0;
            while t < frames {
                if covered[t] || y_n[[p, t]] < cfg.on_thresh {
                    t += 1;
                    continue;
                }
                let mut start = t;
                while start > 0 && !covered[start - 1] && y_n[[p, start - 1]] >= cfg.off_thresh {
                    start -= 1;
                }
                let mut end = t + 1;
                while end < frames && !covered[end] && y_n[[p, end]] >= cfg.off_thresh {
                    end += 1;
                }
                covered[start..end].iter_mut().for_each(|c| *c = true);
                row_events.push(FrameEvent { pitch: p, start, end });
                t = end;
            }
        }
        row_events.sort();
        let mut merged: Vec<FrameEvent> = Vec::with_capacity(row_events.len());
        for e in row_events {
            match merged.last_mut() {
                Some(last) if e.start < last.end + cfg.merge_gap => last.end = last.end.max(e.end),
                _ => merged.push(e),
            }
        }
        out.extend(merged.into_iter().filter(|e| e.len() >= cfg.min_frames));
    }
    Ok(out)
}

/// [`extract_frame_events`] on a pianoroll, converted to seconds; velocity
/// is the event's peak note activation.
pub fn extract_note_events(roll: &Pianoroll, cfg: &NoteConfig) -> Result<Vec<NoteEvent>> {
    let events = extract_frame_events(&roll.notes, &roll.onsets, cfg)?;
    Ok(events
        .iter()
        .map(|e| {
            let peak = (e.start..e.end).map(|t| roll.notes[[e.pitch, t]]).fold(0.0, f64::max);
            e.to_note(&roll.grid, peak.clamp(f64::MIN_POSITIVE, 1.0), 0)
        })
        .collect())
}

/// Binary roll with each event's frames set and its first frame marked as
/// an onset. Events past the roll are clipped.
pub fn rasterize_events(events: &[FrameEvent], grid: &GridConfig, frames: usize) -> Pianoroll {
    let mut roll = Pianoroll::zeros(*grid, frames);
    for e in events.iter().filter(|e| e.pitch < grid.n_pitches && e.start < frames) {
        for t in e.start..e.end.min(frames) {
            roll.notes[[e.pitch, t]] = 1.0;
        }
        roll.onsets[[e.pitch, e.start]] = 1.0;
    }
    roll
}
