//! Scoring trained models on a set of pieces.

use std::collections::{BTreeMap, BTreeSet};

use super::checkpoint::ModelBundle;
use super::config::{EvalConfig, RollSource, SchemeId};
use crate::dsp::{MelExtractor, HOP};
use crate::error::{ensure, Error, Result};
use crate::metrics::{map_scores, piece_cells, sdr, Cell, MatchConfig, MetricReport, OffsetMode, SdrCell, SdrSummary};
use crate::recognizer::predict_conditions;
use crate::symbolic::{frame_to_time, render_rolls, NoteMap, PianoRoll};
use crate::synthdata::ToyPiece;
use crate::taxonomy::InstrumentIndex;

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Take conditions from the recognizer instead of the ground truth.
    pub use_ir: bool,
    pub eval: EvalConfig,
}

/// One piece's reference and estimated notes plus the conditions that were
/// transcribed.
#[derive(Clone, Debug)]
pub struct TranscriptionItem {
    pub piece: String,
    pub reference: NoteMap,
    pub estimate: NoteMap,
    pub conditions: BTreeSet<InstrumentIndex>,
}

/// Cells for both matching modes.
pub fn score_transcriptions(items: &[TranscriptionItem], matching: &MatchConfig) -> BTreeMap<OffsetMode, Vec<Cell>> {
    OffsetMode::ALL
        .into_iter()
        .map(|mode| {
            let cells = items
                .iter()
                .flat_map(|it| piece_cells(&it.piece, &it.reference, &it.estimate, &it.conditions, matching, mode))
                .collect();
            (mode, cells)
        })
        .collect()
}

/// Evaluate a transcription/separation bundle and/or a recognizer.
///
/// Sections follow what the bundle's scheme trained: transcription F1 for
/// schemes with a transcriber, SDR for schemes with a separator, recognition
/// scores whenever a recognizer is given. Cells for conditions absent from
/// the reference, or reference instruments missing from the conditions, are
/// left undefined.
pub fn evaluate(amt: Option<&ModelBundle>, ir: Option<&ModelBundle>, pieces: &[ToyPiece], opts: &EvalOptions) -> Result<MetricReport> {
    opts.eval.validate()?;
    ensure!(!pieces.is_empty(), "no pieces to evaluate");
    let scheme = amt.and_then(|b| b.meta.scheme.clone());
    let scheme_id = scheme.as_ref().map(|s| s.id);
    let use_ir = opts.use_ir || scheme_id.is_some_and(SchemeId::uses_recognizer);
    ensure!(!use_ir || ir.is_some(), "recognizer conditions requested but no recognizer checkpoint given");
    let do_t = amt.is_some_and(|b| b.transcriber.is_some()) && scheme_id.is_none_or(SchemeId::trains_transcriber);
    let do_s = amt.is_some_and(|b| b.separator.is_some()) && scheme_id.is_none_or(SchemeId::trains_separator);
    let source = scheme_id.map_or(RollSource::Transcriber, SchemeId::roll_source);

    let mel_ex = MelExtractor::new();
    let mut report = MetricReport { matching: opts.eval.matching, ..Default::default() };
    report.meta.insert("pieces".into(), pieces.len().to_string());
    report.meta.insert("conditions".into(), if use_ir { "recognizer" } else { "ground_truth" }.into());
    if let Some(s) = &scheme {
        report.meta.insert("scheme".into(), s.label());
    }
    let mut items = Vec::new();
    let mut sdr_cells = Vec::new();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for p in pieces {
        ensure!(p.mix.len() % HOP == 0 && !p.mix.is_empty(), "piece {} is not hop-aligned", p.name);
        let mel = mel_ex.logmel(&p.mix)?;
        let truth: Vec<InstrumentIndex> = p.instruments();
        let conditions: Vec<InstrumentIndex> = match ir {
            Some(ir) => {
                let pr = ir.recognizer()?.predict(&ir.ps, &mel)?;
                let predicted = predict_conditions(&pr, opts.eval.ir_threshold);
                probs.push(pr);
                labels.push(p.labels.values().iter().map(|&v| v > 0.5).collect());
                if use_ir {
                    predicted
                } else {
                    truth.clone()
                }
            }
            None => truth.clone(),
        };
        let Some(amt) = amt else { continue };
        if do_t {
            let t = amt.transcriber()?;
            let est = t.transcribe_piece(&amt.ps, &mel, &conditions, opts.eval.onset_threshold, opts.eval.frame_threshold)?;
            items.push(TranscriptionItem {
                piece: p.name.clone(),
                reference: p.notes.clone(),
                estimate: est,
                conditions: conditions.iter().copied().collect(),
            });
        }
        if do_s {
            let sep = amt.separator()?;
            for &c in &conditions {
                let Some(reference) = p.stems.get(&c) else { continue };
                let roll = match source {
                    RollSource::Transcriber => amt.transcriber()?.posteriors(&amt.ps, &mel, c)?,
                    RollSource::Zero => PianoRoll::zeros(mel.frames, c),
                    RollSource::GroundTruth => {
                        let notes = p.notes.get(&c).map(Vec::as_slice).unwrap_or_default();
                        render_rolls(notes, frame_to_time(mel.frames), c)?
                    }
                };
                let est = sep.separate(&amt.ps, &p.mix, c, &roll)?;
                if let Some(v) = sdr(&reference.samples, &est.waveform.samples)? {
                    sdr_cells.push(SdrCell { piece: p.name.clone(), instrument: c, sdr: v });
                }
            }
        }
    }
    if do_t {
        report.set_transcription(&score_transcriptions(&items, &opts.eval.matching));
    }
    if do_s && !sdr_cells.is_empty() {
        report.sdr = Some(SdrSummary::from_cells(&sdr_cells));
    }
    if ir.is_some() {
        report.recognition = Some(map_scores(&probs, &labels, opts.eval.ir_threshold)?);
    }
    if amt.is_none() && ir.is_none() {
        return Err(Error::domain("nothing to evaluate: give a model checkpoint"));
    }
    Ok(report)
}
