//! Note events, 100 fps piano rolls, onset-filtered decoding, MIDI and the
//! binary array container.

pub mod container;
pub mod midi;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::Tensor;
use crate::taxonomy::InstrumentIndex;

pub use midi::{load_midi, save_midi, PitchPolicy};

pub const FRAME_RATE: f64 = 100.0;
pub const MIN_PITCH: u8 = 21;
pub const MAX_PITCH: u8 = 108;
pub const N_PITCHES: usize = 88;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_s: f64,
    pub offset_s: f64,
    pub instrument: InstrumentIndex,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset_s: f64, offset_s: f64, instrument: InstrumentIndex) -> Result<Self> {
        ensure!((MIN_PITCH..=MAX_PITCH).contains(&pitch), "pitch {pitch} outside [{MIN_PITCH}, {MAX_PITCH}]");
        ensure!(onset_s.is_finite() && onset_s >= 0.0, "onset {onset_s} must be a finite non-negative time");
        ensure!(offset_s.is_finite() && offset_s > onset_s, "offset {offset_s} must follow onset {onset_s}");
        Ok(Self { pitch, onset_s, offset_s, instrument })
    }

    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

pub type NoteList = Vec<NoteEvent>;
pub type NoteMap = BTreeMap<InstrumentIndex, NoteList>;

/// Canonical order: onset, then pitch, then offset.
pub fn sort_notes(notes: &mut [NoteEvent]) {
    notes.sort_by(|a, b| {
        a.onset_s.total_cmp(&b.onset_s).then(a.pitch.cmp(&b.pitch)).then(a.offset_s.total_cmp(&b.offset_s))
    });
}

/// Seconds to frame index, rounding to nearest with ties to even.
pub fn time_to_frame(s: f64) -> usize {
    (s * FRAME_RATE).round_ties_even().max(0.0) as usize
}

pub fn frame_to_time(t: usize) -> f64 {
    t as f64 / FRAME_RATE
}

/// Number of frames for a duration that must be a multiple of 10 ms.
pub fn frames_for_duration(duration_s: f64) -> Result<usize> {
    let f = duration_s * FRAME_RATE;
    ensure!(duration_s.is_finite() && duration_s >= 0.0, "duration {duration_s} must be non-negative");
    ensure!((f - f.round()).abs() < 1e-6, "duration {duration_s} s is not a multiple of 10 ms");
    Ok(f.round() as usize)
}

/// Onset and frame matrices, frame-major `[t * 88 + (pitch - 21)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PianoRoll {
    pub frames: usize,
    pub onset: Vec<f64>,
    pub frame: Vec<f64>,
    pub instrument: InstrumentIndex,
}

impl PianoRoll {
    /// Values are clamped to [0, 1]; non-finite values are rejected.
    pub fn new(frames: usize, onset: Vec<f64>, frame: Vec<f64>, instrument: InstrumentIndex) -> Result<Self> {
        ensure!(onset.len() == frames * N_PITCHES, "onset roll has {} values, expected {}", onset.len(), frames * N_PITCHES);
        ensure!(frame.len() == onset.len(), "onset and frame rolls differ in shape");
        ensure!(onset.iter().chain(&frame).all(|v| v.is_finite()), "roll contains non-finite values");
        let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
        Ok(Self { frames, onset: clamp(onset), frame: clamp(frame), instrument })
    }

    pub fn zeros(frames: usize, instrument: InstrumentIndex) -> Self {
        Self { frames, onset: vec![0.0; frames * N_PITCHES], frame: vec![0.0; frames * N_PITCHES], instrument }
    }

    pub fn onset_at(&self, t: usize, pitch_idx: usize) -> f64 {
        self.onset[t * N_PITCHES + pitch_idx]
    }

    pub fn frame_at(&self, t: usize, pitch_idx: usize) -> f64 {
        self.frame[t * N_PITCHES + pitch_idx]
    }

    pub fn is_binary(&self) -> bool {
        self.onset.iter().chain(&self.frame).all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn onset_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, N_PITCHES], self.onset.clone())
    }

    pub fn frame_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, N_PITCHES], self.frame.clone())
    }

    /// Frames `[start, start + len)`, zero-padded past the end.
    pub fn slice_frames(&self, start: usize, len: usize) -> PianoRoll {
        let mut out = PianoRoll::zeros(len, self.instrument);
        let avail = self.frames.saturating_sub(start).min(len);
        let (a, b) = (start * N_PITCHES, (start + avail) * N_PITCHES);
        out.onset[..avail * N_PITCHES].copy_from_slice(&self.onset[a..b]);
        out.frame[..avail * N_PITCHES].copy_from_slice(&self.frame[a..b]);
        out
    }

    /// Concatenate rolls of one instrument along time.
    pub fn concat(parts: &[PianoRoll]) -> Result<PianoRoll> {
        ensure!(!parts.is_empty(), "nothing to concatenate");
        let instrument = parts[0].instrument;
        ensure!(parts.iter().all(|p| p.instrument == instrument), "rolls belong to different instruments");
        Ok(PianoRoll {
            frames: parts.iter().map(|p| p.frames).sum(),
            onset: parts.iter().flat_map(|p| p.onset.iter().copied()).collect(),
            frame: parts.iter().flat_map(|p| p.frame.iter().copied()).collect(),
            instrument,
        })
    }
}

/// Binary onset/frame rolls for `notes` over `duration_s` seconds.
///
/// A note covers frames `[round(onset), round(offset))`, at least one frame.
/// Overlapping notes on one pitch are unioned in the frame roll.
pub fn render_rolls(notes: &[NoteEvent], duration_s: f64, instrument: InstrumentIndex) -> Result<PianoRoll> {
    let frames = frames_for_duration(duration_s)?;
    let mut roll = PianoRoll::zeros(frames, instrument);
    for n in notes {
        ensure!(
            n.onset_s >= 0.0 && n.offset_s <= duration_s + 1e-9 && n.onset_s < duration_s,
            "note {:?} lies outside [0, {duration_s}]",
            n
        );
        ensure!((MIN_PITCH..=MAX_PITCH).contains(&n.pitch), "pitch {} outside the 88-key range", n.pitch);
        let p = (n.pitch - MIN_PITCH) as usize;
        let on = time_to_frame(n.onset_s).min(frames - 1);
        let off = time_to_frame(n.offset_s).max(on + 1).min(frames);
        roll.onset[on * N_PITCHES + p] = 1.0;
        for t in on..off {
            roll.frame[t * N_PITCHES + p] = 1.0;
        }
    }
    Ok(roll)
}

/// Onset-filtered decoding of posterior (or binary) rolls.
///
/// Onsets are local maxima of the onset roll at or above `onset_threshold`
/// (strictly above the previous frame, not below the next). A note then lasts
/// while the frame roll stays at or above `frame_threshold`; a new onset on a
/// sounding pitch ends the previous note at that frame.
pub fn decode_notes(roll: &PianoRoll, onset_threshold: f64, frame_threshold: f64) -> Result<NoteList> {
    ensure!(onset_threshold > 0.0 && onset_threshold < 1.0, "onset threshold {onset_threshold} outside (0, 1)");
    ensure!(frame_threshold > 0.0 && frame_threshold < 1.0, "frame threshold {frame_threshold} outside (0, 1)");
    ensure!(
        roll.onset.len() == roll.frames * N_PITCHES && roll.frame.len() == roll.onset.len(),
        "onset and frame rolls have mismatched shapes"
    );
    let t_len = roll.frames;
    let mut notes = Vec::new();
    let mut emit = |p: usize, s: usize, e: usize| {
        notes.push(NoteEvent {
            pitch: MIN_PITCH + p as u8,
            onset_s: frame_to_time(s),
            offset_s: frame_to_time(e),
            instrument: roll.instrument,
        });
    };
    for p in 0..N_PITCHES {
        let on = |t: usize| roll.onset[t * N_PITCHES + p];
        let mut active: Option<usize> = None;
        for t in 0..t_len {
            let v = on(t);
            let peak = v >= onset_threshold && (t == 0 || v > on(t - 1)) && (t + 1 == t_len || v >= on(t + 1));
            if peak {
                if let Some(s) = active {
                    emit(p, s, t);
                }
                active = Some(t);
            } else if let Some(s) = active {
                if roll.frame[t * N_PITCHES + p] < frame_threshold {
                    emit(p, s, t);
                    active = None;
                }
            }
        }
        if let Some(s) = active {
            emit(p, s, t_len);
        }
    }
    sort_notes(&mut notes);
    Ok(notes)
}
