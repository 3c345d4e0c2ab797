// Shared by several test targets; each uses a subset.
#![allow(dead_code)]

use amt_core::metrics::{MatchConfig, OffsetMode};
use amt_core::symbolic::{sort_notes, NoteEvent, NoteList, MAX_PITCH, MIN_PITCH};
use amt_core::taxonomy::InstrumentIndex;
use rand::Rng;

pub fn piano() -> InstrumentIndex {
    InstrumentIndex::new(0).unwrap()
}

/// Random notes on the 10 ms grid within `frames` frames. Notes on one pitch
/// are separated by at least `gap` frames, so rendering and decoding must
/// reproduce them exactly.
pub fn grid_notes(rng: &mut impl Rng, frames: usize, max_notes: usize, gap: usize) -> NoteList {
    let n = rng.random_range(0..=max_notes);
    let mut notes = Vec::new();
    // free-from frame per pitch
    let mut free = [0usize; 88];
    for _ in 0..n {
        let p = rng.random_range(MIN_PITCH..=MAX_PITCH);
        let k = (p - MIN_PITCH) as usize;
        if free[k] + 1 >= frames {
            continue;
        }
        let on = rng.random_range(free[k]..frames - 1);
        let off = rng.random_range(on + 1..=frames.min(on + 80));
        free[k] = off + gap;
        notes.push(NoteEvent::new(p, on as f64 / 100.0, off as f64 / 100.0, piano()).unwrap());
    }
    sort_notes(&mut notes);
    notes
}

/// Small, crowded note sets so many reference/estimate pairs are admissible.
pub fn crowded_notes(rng: &mut impl Rng, max_notes: usize) -> NoteList {
    let n = rng.random_range(0..=max_notes);
    (0..n)
        .map(|_| {
            let p = rng.random_range(60..=61);
            let on = rng.random_range(0..12) as f64 * 0.02;
            let off = on + rng.random_range(1..12) as f64 * 0.03;
            NoteEvent::new(p, on, off, piano()).unwrap()
        })
        .collect()
}

/// Kept apart from the library's matcher so the oracle shares no code with it:
/// same pitch, onset within tolerance and, with offsets,
/// offset within max(minimum, ratio * reference duration).
pub fn admissible(r: &NoteEvent, e: &NoteEvent, cfg: &MatchConfig, mode: OffsetMode) -> bool {
    let eps = 1e-9;
    let onset_ok = r.pitch == e.pitch && (r.onset_s - e.onset_s).abs() <= cfg.onset_tol_s + eps;
    let offset_tol = f64::max(cfg.offset_min_s, cfg.offset_ratio * (r.offset_s - r.onset_s));
    onset_ok && (mode == OffsetMode::Onset || (r.offset_s - e.offset_s).abs() <= offset_tol + eps)
}

/// Size of the largest matching, by exhaustive search over assignments.
pub fn brute_force_matching(r: &[NoteEvent], e: &[NoteEvent], cfg: &MatchConfig, mode: OffsetMode) -> usize {
    fn go(i: usize, r: &[NoteEvent], e: &[NoteEvent], used: &mut [bool], cfg: &MatchConfig, mode: OffsetMode) -> usize {
        if i == r.len() {
            return 0;
        }
        let mut best = go(i + 1, r, e, used, cfg, mode);
        for j in 0..e.len() {
            if !used[j] && admissible(&r[i], &e[j], cfg, mode) {
                used[j] = true;
                best = best.max(1 + go(i + 1, r, e, used, cfg, mode));
                used[j] = false;
            }
        }
        best
    }
    go(0, r, e, &mut vec![false; e.len()], cfg, mode)
}
