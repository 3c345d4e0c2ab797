//! Note matching and F1 at flat, piece-wise and instrument-wise levels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::symbolic::{NoteEvent, NoteMap};
use crate::taxonomy::InstrumentIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub onset_tol_s: f64,
    /// Offset tolerance is `max(offset_min_s, offset_ratio * reference duration)`.
    pub offset_ratio: f64,
    pub offset_min_s: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { onset_tol_s: 0.05, offset_ratio: 0.2, offset_min_s: 0.05 }
    }
}

/// Note-wise (onset only) or note-wise with offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OffsetMode {
    Onset,
    OnsetOffset,
}

impl OffsetMode {
    pub const ALL: [OffsetMode; 2] = [OffsetMode::Onset, OffsetMode::OnsetOffset];

    pub fn label(self) -> &'static str {
        match self {
            OffsetMode::Onset => "N",
            OffsetMode::OnsetOffset => "N&O",
        }
    }
}

// Small slack so tolerances hold exactly at the boundary despite float error.
const SLACK: f64 = 1e-9;

pub fn admissible(r: &NoteEvent, e: &NoteEvent, cfg: &MatchConfig, mode: OffsetMode) -> bool {
    if r.pitch != e.pitch || (r.onset_s - e.onset_s).abs() > cfg.onset_tol_s + SLACK {
        return false;
    }
    match mode {
        OffsetMode::Onset => true,
        OffsetMode::OnsetOffset => {
            let tol = cfg.offset_min_s.max(cfg.offset_ratio * r.duration_s());
            (r.offset_s - e.offset_s).abs() <= tol + SLACK
        }
    }
}

/// Maximum-cardinality matching; returns `(ref index, est index)` pairs.
pub fn match_notes(reference: &[NoteEvent], estimate: &[NoteEvent], cfg: &MatchConfig, mode: OffsetMode) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| (0..estimate.len()).filter(|&j| admissible(r, &estimate[j], cfg, mode)).collect())
        .collect();
    let mut est_owner: Vec<Option<usize>> = vec![None; estimate.len()];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none() || augment(owner[j].unwrap(), adj, seen, owner) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    for i in 0..reference.len() {
        let mut seen = vec![false; estimate.len()];
        augment(i, &adj, &mut seen, &mut est_owner);
    }
    let mut pairs: Vec<(usize, usize)> = est_owner.iter().enumerate().filter_map(|(j, o)| o.map(|i| (i, j))).collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn from_matching(n_ref: usize, n_est: usize, matched: usize) -> Self {
        Self { tp: matched, fp: n_est - matched, fn_: n_ref - matched }
    }

    pub fn between(reference: &[NoteEvent], estimate: &[NoteEvent], cfg: &MatchConfig, mode: OffsetMode) -> Self {
        Self::from_matching(reference.len(), estimate.len(), match_notes(reference, estimate, cfg, mode).len())
    }

    pub fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    /// Undefined only when there are neither reference nor estimated notes.
    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }
}

/// Counts for one (piece, instrument) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub piece: String,
    pub instrument: InstrumentIndex,
    pub counts: Counts,
    /// False when the instrument was a false-positive or false-negative
    /// condition (or absent on both sides): such cells count toward the
    /// flat score but have no piece-wise or instrument-wise F1.
    pub defined: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Flat,
    Piecewise,
    Instrumentwise,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate_f1(cells: &[Cell], level: Level) -> Option<f64> {
    match level {
        Level::Flat => {
            let mut c = Counts::default();
            cells.iter().for_each(|x| c.add(&x.counts));
            c.f1()
        }
        Level::Piecewise => {
            let mut per: BTreeMap<&str, Counts> = BTreeMap::new();
            for x in cells.iter().filter(|x| x.defined) {
                per.entry(&x.piece).or_default().add(&x.counts);
            }
            mean(&per.values().filter_map(Counts::f1).collect::<Vec<_>>())
        }
        Level::Instrumentwise => {
            let per = instrumentwise_breakdown(cells);
            mean(&per.values().copied().collect::<Vec<_>>())
        }
    }
}

/// Mean F1 per instrument over pieces where its cell is defined.
pub fn instrumentwise_breakdown(cells: &[Cell]) -> BTreeMap<InstrumentIndex, f64> {
    let mut per: BTreeMap<InstrumentIndex, Vec<f64>> = BTreeMap::new();
    for x in cells.iter().filter(|x| x.defined) {
        if let Some(f) = x.counts.f1() {
            per.entry(x.instrument).or_default().push(f);
        }
    }
    per.into_iter().filter_map(|(k, v)| mean(&v).map(|m| (k, m))).collect()
}

/// Build cells for one piece. `conditions` are the instruments that were
/// transcribed; a cell is defined only when the instrument is both present in
/// the reference and among the conditions.
pub fn piece_cells(
    piece: &str,
    reference: &NoteMap,
    estimate: &NoteMap,
    conditions: &BTreeSet<InstrumentIndex>,
    cfg: &MatchConfig,
    mode: OffsetMode,
) -> Vec<Cell> {
    let present: BTreeSet<InstrumentIndex> =
        reference.iter().filter(|(_, n)| !n.is_empty()).map(|(i, _)| *i).collect();
    let mut insts: BTreeSet<InstrumentIndex> = present.union(conditions).copied().collect();
    insts.extend(estimate.iter().filter(|(_, n)| !n.is_empty()).map(|(i, _)| *i));
    let empty = Vec::new();
    insts
        .into_iter()
        .map(|inst| {
            let r = reference.get(&inst).unwrap_or(&empty);
            let e = estimate.get(&inst).unwrap_or(&empty);
            Cell {
                piece: piece.to_string(),
                instrument: inst,
                counts: Counts::between(r, e, cfg, mode),
                defined: present.contains(&inst) && conditions.contains(&inst),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::map_program;

    fn n(p: u8, a: f64, b: f64) -> NoteEvent {
        NoteEvent::new(p, a, b, map_program(0).unwrap()).unwrap()
    }

    #[test]
    fn identical_lists_match_fully() {
        let x = vec![n(60, 0.0, 0.5), n(62, 0.1, 0.2), n(60, 1.0, 1.5)];
        for mode in OffsetMode::ALL {
            let c = Counts::between(&x, &x, &MatchConfig::default(), mode);
            assert_eq!((c.precision(), c.recall(), c.f1()), (Some(1.0), Some(1.0), Some(1.0)));
        }
    }

    #[test]
    fn empty_estimate_scores_zero() {
        let c = Counts::between(&[n(60, 0.0, 0.5)], &[], &MatchConfig::default(), OffsetMode::Onset);
        assert_eq!(c.f1(), Some(0.0));
        assert_eq!(c.precision(), None);
        assert_eq!(Counts::default().f1(), None);
    }

    #[test]
    fn half_recall() {
        let r = [n(60, 0.0, 0.5), n(64, 1.0, 1.5)];
        let e = [n(60, 0.04, 0.5)];
        let c = Counts::between(&r, &e, &MatchConfig::default(), OffsetMode::Onset);
        assert_eq!(c.precision(), Some(1.0));
        assert_eq!(c.recall(), Some(0.5));
        assert!((c.f1().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn offset_tolerance_scales_with_duration() {
        let cfg = MatchConfig::default();
        let r = n(60, 0.0, 2.0);
        assert!(admissible(&r, &n(60, 0.0, 2.39), &cfg, OffsetMode::OnsetOffset));
        assert!(!admissible(&r, &n(60, 0.0, 2.41), &cfg, OffsetMode::OnsetOffset));
        let short = n(60, 0.0, 0.1);
        assert!(admissible(&short, &n(60, 0.0, 0.15), &cfg, OffsetMode::OnsetOffset));
        assert!(admissible(&r, &n(60, 0.05, 3.0), &cfg, OffsetMode::Onset));
        assert!(!admissible(&r, &n(61, 0.0, 2.0), &cfg, OffsetMode::Onset));
    }

    #[test]
    fn augmenting_paths_beat_greedy() {
        // greedy would pair r0 with e0 and leave r1 unmatched
        let r = [n(60, 0.00, 0.5), n(60, 0.07, 0.5)];
        let e = [n(60, 0.03, 0.5), n(60, 0.01, 0.5)];
        assert_eq!(match_notes(&r, &e, &MatchConfig::default(), OffsetMode::Onset).len(), 2);
    }
}
