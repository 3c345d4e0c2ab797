//! Crop sampling and batch assembly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::{MelExtractor, Stft, StftConfig, HOP};
use crate::error::{ensure, Result};
use crate::nn::Tensor;
use crate::symbolic::{frame_to_time, render_rolls, PianoRoll, N_PITCHES};
use crate::synthdata::ToyPiece;
use crate::taxonomy::{InstrumentIndex, NUM_CLASSES};

/// A piece with its ground-truth rolls rendered once.
pub(crate) struct Prepared<'a> {
    pub piece: &'a ToyPiece,
    pub frames: usize,
    pub rolls: BTreeMap<InstrumentIndex, PianoRoll>,
}

pub(crate) fn prepare(pieces: &[ToyPiece]) -> Result<Vec<Prepared<'_>>> {
    pieces
        .iter()
        .map(|p| {
            ensure!(p.mix.len() % HOP == 0 && !p.mix.is_empty(), "piece {} is not hop-aligned", p.name);
            let frames = p.mix.len() / HOP;
            let mut rolls = BTreeMap::new();
            for (&inst, notes) in &p.notes {
                rolls.insert(inst, render_rolls(notes, frame_to_time(frames), inst)?);
            }
            Ok(Prepared { piece: p, frames, rolls })
        })
        .collect()
}

/// One training example: a crop of a piece under one condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Item {
    pub piece: usize,
    pub start: usize,
    pub instrument: Option<InstrumentIndex>,
}

/// Shuffled crops for one epoch. With `conditions` set, pieces without notes
/// are skipped and each crop carries one present instrument (or every
/// present instrument when `all` is set).
pub(crate) fn epoch_items(
    rng: &mut impl Rng,
    prepared: &[Prepared],
    crop: usize,
    conditions: bool,
    all: bool,
) -> Vec<Item> {
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(rng);
    let mut items = Vec::new();
    for i in order {
        let p = &prepared[i];
        let start = rng.random_range(0..=p.frames - crop);
        if !conditions {
            items.push(Item { piece: i, start, instrument: None });
            continue;
        }
        let present = p.piece.instruments();
        if present.is_empty() {
            continue;
        }
        if all {
            items.extend(present.iter().map(|&c| Item { piece: i, start, instrument: Some(c) }));
        } else {
            let c = present[rng.random_range(0..present.len())];
            items.push(Item { piece: i, start, instrument: Some(c) });
        }
    }
    items
}

/// Tensors for one batch; spectral parts are filled only when requested.
pub(crate) struct Batch {
    pub size: usize,
    pub samples: usize,
    pub mel: Tensor,
    pub cond: Tensor,
    pub labels: Tensor,
    pub onset: Tensor,
    pub frame: Tensor,
    pub magnitude: Tensor,
    pub phase: Vec<Vec<Complex64>>,
    pub target: Tensor,
}

pub(crate) struct Assembler {
    mel: MelExtractor,
    stft: Stft,
}

impl Assembler {
    pub fn new(stft: StftConfig) -> Self {
        Self { mel: MelExtractor::new(), stft: Stft::new(stft) }
    }

    pub fn batch(&self, prepared: &[Prepared], items: &[Item], frames: usize, mel: bool, spectral: bool) -> Result<Batch> {
        let b = items.len();
        let samples = frames * HOP;
        let bins = self.stft.config().bins();
        let mut out = Batch {
            size: b,
            samples,
            mel: Tensor::zeros(vec![0]),
            cond: Tensor::zeros(vec![b, NUM_CLASSES]),
            labels: Tensor::zeros(vec![b, NUM_CLASSES]),
            onset: Tensor::zeros(vec![b, frames, N_PITCHES]),
            frame: Tensor::zeros(vec![b, frames, N_PITCHES]),
            magnitude: Tensor::zeros(vec![0]),
            phase: Vec::new(),
            target: Tensor::zeros(vec![0]),
        };
        let mut mels = Vec::new();
        let mut mags = Vec::new();
        let mut targets = Vec::new();
        for (k, it) in items.iter().enumerate() {
            let p = &prepared[it.piece];
            let crop = p.piece.mix.segment(it.start * HOP, samples).samples_f64();
            for (j, v) in p.piece.labels.values().iter().enumerate() {
                out.labels.data_mut()[k * NUM_CLASSES + j] = *v;
            }
            if let Some(c) = it.instrument {
                out.cond.data_mut()[k * NUM_CLASSES + c.get()] = 1.0;
                if let Some(r) = p.rolls.get(&c) {
                    let r = r.slice_frames(it.start, frames);
                    let off = k * frames * N_PITCHES;
                    out.onset.data_mut()[off..off + frames * N_PITCHES].copy_from_slice(&r.onset);
                    out.frame.data_mut()[off..off + frames * N_PITCHES].copy_from_slice(&r.frame);
                }
                if spectral {
                    let stem = p.piece.stems.get(&c).map(|w| w.segment(it.start * HOP, samples).samples_f64());
                    targets.extend(stem.unwrap_or_else(|| vec![0.0; samples]));
                }
            }
            if mel {
                mels.extend(self.mel.logmel_samples(&crop)?.values);
            }
            if spectral {
                let spec = self.stft.forward(&crop)?;
                mags.extend(spec.magnitude());
                out.phase.push(spec.phase());
            }
        }
        if mel {
            out.mel = Tensor::new(vec![b, 1, frames, crate::dsp::mel::N_MELS], mels);
        }
        if spectral {
            out.magnitude = Tensor::new(vec![b, frames, bins], mags);
            out.target = Tensor::new(vec![b, samples], targets);
        }
        Ok(out)
    }
}
