//! Source-to-distortion ratio and its three aggregations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::taxonomy::InstrumentIndex;

pub const SDR_CAP_DB: f64 = 100.0;

/// `10 log10(|ref|² / |ref - est|²)`, capped at 100 dB. `None` for a silent
/// reference.
pub fn sdr(reference: &[f32], estimate: &[f32]) -> Result<Option<f64>> {
    ensure!(reference.len() == estimate.len(), "SDR needs equal lengths, got {} and {}", reference.len(), estimate.len());
    let num: f64 = reference.iter().map(|&r| (r as f64).powi(2)).sum();
    if num == 0.0 {
        return Ok(None);
    }
    let den: f64 = reference.iter().zip(estimate).map(|(&r, &e)| (r as f64 - e as f64).powi(2)).sum();
    if den == 0.0 {
        return Ok(Some(SDR_CAP_DB));
    }
    Ok(Some((10.0 * (num / den).log10()).min(SDR_CAP_DB)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdrCell {
    pub piece: String,
    pub instrument: InstrumentIndex,
    pub sdr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdrLevel {
    Instrument,
    Piece,
    Source,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate_sdr(cells: &[SdrCell], level: SdrLevel) -> Option<f64> {
    match level {
        SdrLevel::Source => mean(cells.iter().map(|c| c.sdr)),
        SdrLevel::Instrument => {
            let mut g: BTreeMap<InstrumentIndex, Vec<f64>> = BTreeMap::new();
            cells.iter().for_each(|c| g.entry(c.instrument).or_default().push(c.sdr));
            mean(g.values().filter_map(|v| mean(v.iter().copied())))
        }
        SdrLevel::Piece => {
            let mut g: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            cells.iter().for_each(|c| g.entry(&c.piece).or_default().push(c.sdr));
            mean(g.values().filter_map(|v| mean(v.iter().copied())))
        }
    }
}

/// Mean SDR per instrument.
pub fn sdr_breakdown(cells: &[SdrCell]) -> BTreeMap<InstrumentIndex, f64> {
    let mut g: BTreeMap<InstrumentIndex, Vec<f64>> = BTreeMap::new();
    cells.iter().for_each(|c| g.entry(c.instrument).or_default().push(c.sdr));
    g.into_iter().filter_map(|(k, v)| mean(v.into_iter()).map(|m| (k, m))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let r: Vec<f32> = (0..100).map(|i| ((i as f32) * 0.37).sin()).collect();
        let zero = vec![0.0; 100];
        assert!(sdr(&r, &zero).unwrap().unwrap().abs() < 1e-12);
        let half: Vec<f32> = r.iter().map(|v| v / 2.0).collect();
        assert!((sdr(&r, &half).unwrap().unwrap() - 6.020_599_913).abs() < 1e-6);
        assert_eq!(sdr(&r, &r).unwrap(), Some(SDR_CAP_DB));
        assert_eq!(sdr(&zero, &r).unwrap(), None);
        assert!(sdr(&r, &r[..99]).is_err());
    }

    #[test]
    fn one_cell_all_levels_agree() {
        let c = [SdrCell { piece: "a".into(), instrument: InstrumentIndex::new(3).unwrap(), sdr: 4.5 }];
        for l in [SdrLevel::Instrument, SdrLevel::Piece, SdrLevel::Source] {
            assert_eq!(aggregate_sdr(&c, l), Some(4.5));
        }
        assert_eq!(aggregate_sdr(&[], SdrLevel::Source), None);
    }
}
