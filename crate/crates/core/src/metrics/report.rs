//! Metric report: structured key = value text plus a per-instrument table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::notes::{aggregate_f1, instrumentwise_breakdown, Cell, Level, MatchConfig, OffsetMode};
use super::ranking::RecognitionScores;
use super::sdr::{aggregate_sdr, sdr_breakdown, SdrCell, SdrLevel};
use crate::error::{Error, Result};
use crate::taxonomy::InstrumentIndex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Pair {
    pub n: Option<f64>,
    pub n_o: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdrSummary {
    pub instrument: Option<f64>,
    pub piece: Option<f64>,
    pub source: Option<f64>,
    pub per_instrument: BTreeMap<InstrumentIndex, f64>,
    pub cells: usize,
}

impl SdrSummary {
    pub fn from_cells(cells: &[SdrCell]) -> Self {
        Self {
            instrument: aggregate_sdr(cells, SdrLevel::Instrument),
            piece: aggregate_sdr(cells, SdrLevel::Piece),
            source: aggregate_sdr(cells, SdrLevel::Source),
            per_instrument: sdr_breakdown(cells),
            cells: cells.len(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Free-form run description (scheme, split, condition source, ...).
    pub meta: BTreeMap<String, String>,
    pub matching: MatchConfig,
    pub flat_f1: F1Pair,
    pub piecewise_f1: F1Pair,
    pub instrumentwise_f1: F1Pair,
    pub per_instrument: BTreeMap<InstrumentIndex, F1Pair>,
    pub sdr: Option<SdrSummary>,
    pub recognition: Option<RecognitionScores>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    /// Fill the transcription sections from per-mode cells.
    pub fn set_transcription(&mut self, cells: &BTreeMap<OffsetMode, Vec<Cell>>) {
        let get = |m: OffsetMode, l: Level| cells.get(&m).and_then(|c| aggregate_f1(c, l));
        let pair = |l: Level| F1Pair { n: get(OffsetMode::Onset, l), n_o: get(OffsetMode::OnsetOffset, l) };
        self.flat_f1 = pair(Level::Flat);
        self.piecewise_f1 = pair(Level::Piecewise);
        self.instrumentwise_f1 = pair(Level::Instrumentwise);
        let mut per: BTreeMap<InstrumentIndex, F1Pair> = BTreeMap::new();
        for (mode, c) in cells {
            for (inst, f) in instrumentwise_breakdown(c) {
                let e = per.entry(inst).or_default();
                match mode {
                    OffsetMode::Onset => e.n = Some(f),
                    OffsetMode::OnsetOffset => e.n_o = Some(f),
                }
            }
        }
        self.per_instrument = per;
    }

    /// Ordered `(key, value)` lines; absent cells are written as `absent`.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = self.meta.iter().map(|(k, v)| (format!("meta.{k}"), v.clone())).collect();
        kv.push(("matching.onset_tol_s".into(), format!("{}", self.matching.onset_tol_s)));
        kv.push(("matching.offset_ratio".into(), format!("{}", self.matching.offset_ratio)));
        kv.push(("matching.offset_min_s".into(), format!("{}", self.matching.offset_min_s)));
        for (name, p) in [("flat", self.flat_f1), ("piecewise", self.piecewise_f1), ("instrumentwise", self.instrumentwise_f1)] {
            kv.push((format!("f1.{name}.N"), fmt_opt(p.n)));
            kv.push((format!("f1.{name}.N&O"), fmt_opt(p.n_o)));
        }
        let sdr = self.sdr.clone().unwrap_or_default();
        kv.push(("sdr.instrument".into(), fmt_opt(sdr.instrument)));
        kv.push(("sdr.piece".into(), fmt_opt(sdr.piece)));
        kv.push(("sdr.source".into(), fmt_opt(sdr.source)));
        let rec = self.recognition.unwrap_or(RecognitionScores { macro_map: None, weighted_map: None, macro_f1: None, weighted_f1: None });
        kv.push(("recognition.map.macro".into(), fmt_opt(rec.macro_map)));
        kv.push(("recognition.map.weighted".into(), fmt_opt(rec.weighted_map)));
        kv.push(("recognition.f1.macro".into(), fmt_opt(rec.macro_f1)));
        kv.push(("recognition.f1.weighted".into(), fmt_opt(rec.weighted_f1)));
        kv
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.key_values() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Tab-separated per-instrument table.
    pub fn to_table(&self) -> String {
        let mut s = String::from("index\tinstrument\tf1_N\tf1_N&O\tsdr\n");
        let sdr = self.sdr.as_ref().map(|x| &x.per_instrument);
        let mut insts: Vec<InstrumentIndex> = self.per_instrument.keys().copied().collect();
        if let Some(m) = sdr {
            insts.extend(m.keys().copied());
        }
        insts.sort();
        insts.dedup();
        for i in insts {
            let p = self.per_instrument.get(&i).copied().unwrap_or_default();
            let d = sdr.and_then(|m| m.get(&i).copied());
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", i.get(), i.name(), fmt_opt(p.n), fmt_opt(p.n_o), fmt_opt(d));
        }
        s
    }

    /// Write `<stem>.txt` and `<stem>.tsv` next to each other.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let txt = stem.with_extension("txt");
        let tsv = stem.with_extension("tsv");
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        fs::write(&tsv, self.to_table()).map_err(|e| Error::io(&tsv, e))
    }

    /// Parse `key = value` text back into a map.
    pub fn parse_text(text: &str) -> BTreeMap<String, String> {
        text.lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect()
    }

    /// One-line summaries shaped like the usual result tables.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16}{:>10}{:>10}", "F1", "N", "N&O");
        for (name, p) in [("flat", self.flat_f1), ("piece-wise", self.piecewise_f1), ("instrument-wise", self.instrumentwise_f1)] {
            let _ = writeln!(s, "{:<16}{:>10}{:>10}", name, fmt_opt(p.n), fmt_opt(p.n_o));
        }
        if let Some(d) = &self.sdr {
            let _ = writeln!(s, "SDR dB          instrument {}  piece {}  source {}", fmt_opt(d.instrument), fmt_opt(d.piece), fmt_opt(d.source));
        }
        if let Some(r) = &self.recognition {
            let _ = writeln!(
                s,
                "recognition     mAP macro {} weighted {}  F1 macro {} weighted {}",
                fmt_opt(r.macro_map),
                fmt_opt(r.weighted_map),
                fmt_opt(r.macro_f1),
                fmt_opt(r.weighted_f1)
            );
        }
        s
    }
}

/// Keys every report carries, whether or not the cell is defined.
pub const REQUIRED_KEYS: &[&str] = &[
    "f1.flat.N",
    "f1.flat.N&O",
    "f1.piecewise.N",
    "f1.piecewise.N&O",
    "f1.instrumentwise.N",
    "f1.instrumentwise.N&O",
    "sdr.instrument",
    "sdr.piece",
    "sdr.source",
    "recognition.map.macro",
    "recognition.map.weighted",
    "recognition.f1.macro",
    "recognition.f1.weighted",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_marks_everything_absent() {
        let r = MetricReport::default();
        let kv = MetricReport::parse_text(&r.to_text());
        for k in REQUIRED_KEYS {
            assert_eq!(kv.get(*k).map(String::as_str), Some("absent"), "{k}");
        }
    }
}
