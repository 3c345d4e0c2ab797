//! Recognition scores: average precision and thresholded F1 per class,
//! reduced with macro (class-uniform) and weighted (support) means.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Average precision of one class. Precision at each positive counts every
/// item scored at least as high, so tied scores do not depend on order.
/// `None` when the class has no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    if positives.is_empty() {
        return None;
    }
    let total: f64 = positives
        .iter()
        .map(|&s| {
            let above = scores.iter().filter(|&&x| x >= s).count();
            let pos_above = positives.iter().filter(|&&x| x >= s).count();
            pos_above as f64 / above as f64
        })
        .sum();
    Some(total / positives.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionScores {
    pub macro_map: Option<f64>,
    pub weighted_map: Option<f64>,
    pub macro_f1: Option<f64>,
    pub weighted_f1: Option<f64>,
}

fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_).max(1) as f64
}

/// `probs[i][c]` and `labels[i][c]` for item `i`, class `c`. Classes with no
/// positives are left out of both means.
pub fn map_scores(probs: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<RecognitionScores> {
    ensure!(probs.len() == labels.len(), "{} score rows but {} label rows", probs.len(), labels.len());
    let classes = probs.first().map_or(0, |r| r.len());
    ensure!(
        probs.iter().zip(labels).all(|(p, l)| p.len() == classes && l.len() == classes),
        "ragged score or label rows"
    );
    let (mut aps, mut f1s, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..classes {
        let s: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        if let Some(ap) = average_precision(&s, &l) {
            aps.push(ap);
            f1s.push(f1_at(&s, &l, threshold));
            w.push(l.iter().filter(|&&x| x).count() as f64);
        }
    }
    let macro_mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let wsum: f64 = w.iter().sum();
    let weighted = |v: &[f64]| (!v.is_empty()).then(|| v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum);
    Ok(RecognitionScores {
        macro_map: macro_mean(&aps),
        weighted_map: weighted(&aps),
        macro_f1: macro_mean(&f1s),
        weighted_f1: weighted(&f1s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_simple_cases() {
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(average_precision(&[0.9, 0.1], &[false, false]), None);
        // positive ranked second of three
        assert_eq!(average_precision(&[0.9, 0.5, 0.1], &[false, true, false]), Some(0.5));
        // a tie between a positive and a negative counts both
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(0.5));
    }

    #[test]
    fn macro_and_weighted_differ_by_support() {
        let probs = vec![vec![0.9, 0.2, 0.0], vec![0.8, 0.7, 0.0], vec![0.1, 0.6, 0.0]];
        let labels = vec![vec![true, false, false], vec![true, false, false], vec![false, true, false]];
        let s = map_scores(&probs, &labels, 0.5).unwrap();
        assert_eq!(s.macro_map, Some(0.75));
        assert!((s.weighted_map.unwrap() - (2.0 + 0.5) / 3.0).abs() < 1e-12);
        assert!((s.macro_f1.unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
