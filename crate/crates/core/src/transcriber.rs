//! Instrument-conditioned onsets-and-frames transcription. Both acoustic
//! stacks are FiLM-modulated by an embedding of the one-hot condition; the
//! frame head is refined by a biGRU over both posteriors.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::mel::{LOG_EPS, N_MELS};
use crate::dsp::LogMelSpectrogram;
use crate::error::{ensure, Result};
use crate::nn::layers::{BatchNorm, BiGru, Conv2d, Film, Linear};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::recognizer::bce;
use crate::symbolic::{decode_notes, NoteMap, PianoRoll, N_PITCHES};
use crate::taxonomy::{ConditionVector, InstrumentIndex, NUM_CLASSES};

pub const PREFIX: &str = "t.";

/// Initial biases of the supervised heads, set to the log-odds of a typical
/// active-cell rate (about 1% of frame cells, 0.03% of onset cells).
/// Starting at the label prior spares the network from driving every logit
/// down through its ReLUs early on, which otherwise kills the stacks.
pub const ONSET_PRIOR_LOGIT: f64 = -8.0;
pub const FRAME_PRIOR_LOGIT: f64 = -4.6;

fn prior_bias(ps: &mut ParamStore, layer: &Linear, logit: f64) {
    if let Some(b) = layer.b {
        ps.set(b, Tensor::full(vec![layer.out_dim], logit));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriberConfig {
    /// Output channels of each conv block (each block halves frequency).
    pub conv_channels: Vec<usize>,
    pub fc_dim: usize,
    /// Hidden size per direction of each stack's biGRU.
    pub gru_hidden: usize,
    /// Hidden size per direction of the combining biGRU.
    pub combine_hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    /// Reject conditions that are not one-hot.
    pub strict_conditions: bool,
    /// Frames per inference window.
    pub window_frames: usize,
}

impl Default for TranscriberConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![48, 48, 96],
            fc_dim: 768,
            gru_hidden: 256,
            combine_hidden: 88,
            embed_dim: 32,
            dropout: 0.25,
            strict_conditions: true,
            window_frames: 1000,
        }
    }
}

impl TranscriberConfig {
    pub fn tiny() -> Self {
        Self { conv_channels: vec![2, 3], fc_dim: 6, gru_hidden: 4, combine_hidden: 4, embed_dim: 3, ..Self::default() }
    }

    pub fn small() -> Self {
        Self { conv_channels: vec![8, 16], fc_dim: 64, gru_hidden: 32, combine_hidden: 32, embed_dim: 8, dropout: 0.1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.conv_channels.is_empty(), "transcriber needs at least one conv block");
        ensure!(self.conv_channels.iter().all(|&c| c > 0), "conv channels must be positive");
        ensure!(N_MELS >> self.conv_channels.len() > 0, "too many conv blocks for {N_MELS} mel bins");
        ensure!(self.fc_dim > 0 && self.gru_hidden > 0 && self.combine_hidden > 0, "layer sizes must be positive");
        ensure!(self.embed_dim > 0, "embedding size must be positive");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)");
        ensure!(self.window_frames > 0, "window must be positive");
        Ok(())
    }
}

struct Block {
    conv: Conv2d,
    bn: BatchNorm,
    film: Film,
}

struct Stack {
    blocks: Vec<Block>,
    fc: Linear,
    gru: BiGru,
    head: Linear,
}

impl Stack {
    fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &TranscriberConfig) -> Self {
        let mut blocks = Vec::new();
        let mut ci = 1;
        let mut f = N_MELS;
        for (i, &co) in cfg.conv_channels.iter().enumerate() {
            let n = format!("{name}.block{i}");
            blocks.push(Block {
                conv: Conv2d::new(ps, rng, &format!("{n}.conv"), ci, co, 3, false),
                bn: BatchNorm::new(ps, &format!("{n}.bn"), co, 1),
                film: Film::new(ps, rng, &format!("{n}.film"), cfg.embed_dim, co),
            });
            ci = co;
            f /= 2;
        }
        Self {
            blocks,
            fc: Linear::new(ps, rng, &format!("{name}.fc"), ci * f, cfg.fc_dim, true),
            gru: BiGru::new(ps, rng, &format!("{name}.gru"), cfg.fc_dim, cfg.gru_hidden),
            head: Linear::new(ps, rng, &format!("{name}.head"), 2 * cfg.gru_hidden, N_PITCHES, true),
        }
    }

    fn forward(&self, g: &Graph, ps: &ParamStore, x: Var, emb: Var, dropout: f64) -> Var {
        let mut h = x;
        for b in &self.blocks {
            h = g.relu(b.bn.forward(g, ps, b.conv.forward(g, ps, h)));
            h = b.film.forward(g, ps, h, emb);
            h = g.max_pool2d(h, 1, 2);
            h = g.dropout(h, dropout);
        }
        let s = g.shape(h);
        let h = g.reshape(g.permute(h, &[0, 2, 1, 3]), &[s[0], s[2], s[1] * s[3]]);
        let h = g.dropout(g.relu(self.fc.forward(g, ps, h)), dropout);
        self.head.forward(g, ps, self.gru.forward(g, ps, h))
    }
}

/// Onset and frame logits, each `[B, T, 88]`.
pub struct TranscriberLogits {
    pub onset: Var,
    pub frame: Var,
}

pub struct Transcriber {
    pub cfg: TranscriberConfig,
    input_bn: BatchNorm,
    embed: Linear,
    onset: Stack,
    frame: Stack,
    combine: BiGru,
    out: Linear,
    forwards: AtomicUsize,
}

impl Transcriber {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, cfg: TranscriberConfig) -> Result<Self> {
        cfg.validate()?;
        let t = Self {
            input_bn: BatchNorm::new(ps, &format!("{PREFIX}input_bn"), N_MELS, 3),
            embed: Linear::new(ps, rng, &format!("{PREFIX}embed"), NUM_CLASSES, cfg.embed_dim, false),
            onset: Stack::new(ps, rng, &format!("{PREFIX}onset"), &cfg),
            frame: Stack::new(ps, rng, &format!("{PREFIX}frame"), &cfg),
            combine: BiGru::new(ps, rng, &format!("{PREFIX}combine"), 2 * N_PITCHES, cfg.combine_hidden),
            out: Linear::new(ps, rng, &format!("{PREFIX}out"), 2 * cfg.combine_hidden, N_PITCHES, true),
            cfg,
            forwards: AtomicUsize::new(0),
        };
        prior_bias(ps, &t.onset.head, ONSET_PRIOR_LOGIT);
        prior_bias(ps, &t.out, FRAME_PRIOR_LOGIT);
        Ok(t)
    }

    /// Number of forward passes run so far.
    pub fn forward_count(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    /// `x` is log-mel `[B, 1, T, 229]`, `cond` is `[B, 39]`.
    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var, cond: &Tensor) -> Result<TranscriberLogits> {
        let s = g.shape(x);
        ensure!(s.len() == 4 && s[1] == 1 && s[3] == N_MELS, "transcriber input must be [B, 1, T, {N_MELS}], got {s:?}");
        ensure!(s[2] > 0, "transcriber input has no frames");
        ensure!(cond.shape() == [s[0], NUM_CLASSES], "condition must be [{}, {NUM_CLASSES}], got {:?}", s[0], cond.shape());
        if self.cfg.strict_conditions {
            for row in cond.data().chunks(NUM_CLASSES) {
                ensure!(ConditionVector::from_values(row.to_vec())?.is_one_hot(), "condition is not one-hot");
            }
        }
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let emb = self.embed.forward(g, ps, g.constant(cond.clone()));
        let x = self.input_bn.forward(g, ps, x);
        let onset = self.onset.forward(g, ps, x, emb, self.cfg.dropout);
        let frame_stack = self.frame.forward(g, ps, x, emb, self.cfg.dropout);
        let both = g.concat(&[g.sigmoid(onset), g.sigmoid(frame_stack)], 2);
        let frame = self.out.forward(g, ps, self.combine.forward(g, ps, both));
        Ok(TranscriberLogits { onset, frame })
    }

    /// Posterior rolls for one instrument over a whole piece. All windows go
    /// through a single batched forward pass; the rolls are concatenated.
    pub fn posteriors(&self, ps: &ParamStore, mel: &LogMelSpectrogram, instrument: InstrumentIndex) -> Result<PianoRoll> {
        ensure!(mel.bins == N_MELS, "expected {N_MELS} mel bins, got {}", mel.bins);
        ensure!(mel.frames > 0, "empty spectrogram");
        let w = self.cfg.window_frames.min(mel.frames);
        let n = mel.frames.div_ceil(w);
        let mut vals = vec![LOG_EPS.ln(); n * w * N_MELS];
        vals[..mel.values.len()].copy_from_slice(&mel.values);
        let g = Graph::inference();
        let x = g.constant(Tensor::new(vec![n, 1, w, N_MELS], vals));
        let cond = ConditionVector::one_hot(instrument).values().repeat(n);
        let out = self.forward(&g, ps, x, &Tensor::new(vec![n, NUM_CLASSES], cond))?;
        let keep = mel.frames * N_PITCHES;
        let post = |v: Var| g.value(g.sigmoid(v)).data()[..keep].to_vec();
        PianoRoll::new(mel.frames, post(out.onset), post(out.frame), instrument)
    }

    /// One forward pass per condition, each decoded to notes.
    pub fn transcribe_piece(
        &self,
        ps: &ParamStore,
        mel: &LogMelSpectrogram,
        conditions: &[InstrumentIndex],
        onset_threshold: f64,
        frame_threshold: f64,
    ) -> Result<NoteMap> {
        let mut out = NoteMap::new();
        if conditions.is_empty() {
            log::warn!("no instrument conditions; nothing to transcribe");
            return Ok(out);
        }
        for &c in conditions {
            let roll = self.posteriors(ps, mel, c)?;
            out.insert(c, decode_notes(&roll, onset_threshold, frame_threshold)?);
        }
        Ok(out)
    }
}

/// Training loss on the tape: mean BCE of onsets plus mean BCE of frames.
pub fn loss_t_graph(g: &Graph, logits: &TranscriberLogits, onset: &Tensor, frame: &Tensor) -> Var {
    g.add(g.bce_with_logits(logits.onset, onset), g.bce_with_logits(logits.frame, frame))
}

/// `BCE(onset) + BCE(frame)` of posterior rolls against binary targets.
pub fn loss_t(pred: &PianoRoll, target: &PianoRoll) -> Result<f64> {
    ensure!(pred.frames == target.frames, "prediction has {} frames, target {}", pred.frames, target.frames);
    Ok(bce(&pred.onset, &target.onset)? + bce(&pred.frame, &target.frame)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, GradCheckOptions};
    use crate::taxonomy::DRUMS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(cfg: TranscriberConfig) -> (ParamStore, Transcriber) {
        let mut ps = ParamStore::new();
        let t = Transcriber::new(&mut ps, &mut ChaCha8Rng::seed_from_u64(1), cfg).unwrap();
        (ps, t)
    }

    fn piano() -> InstrumentIndex {
        InstrumentIndex::new(0).unwrap()
    }

    fn mel(frames: usize) -> LogMelSpectrogram {
        let values = (0..frames * N_MELS).map(|i| ((i * 7919 % 1013) as f64 / 1013.0) * 6.0 - 8.0).collect();
        LogMelSpectrogram { frames, bins: N_MELS, values }
    }

    #[test]
    fn output_frames_match_input() {
        let (ps, t) = model(TranscriberConfig::tiny());
        for frames in [1, 37, 1000] {
            let roll = t.posteriors(&ps, &mel(frames), piano()).unwrap();
            assert_eq!(roll.frames, frames);
            assert_eq!(roll.frame.len(), frames * 88);
            assert!(roll.onset.iter().chain(&roll.frame).all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn condition_changes_output() {
        let (ps, t) = model(TranscriberConfig::tiny());
        let m = mel(50);
        let a = t.posteriors(&ps, &m, piano()).unwrap();
        let b = t.posteriors(&ps, &m, DRUMS).unwrap();
        let l1: f64 = a.frame.iter().zip(&b.frame).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 > 0.0);
    }

    #[test]
    fn identity_film_makes_output_condition_independent() {
        let (mut ps, t) = model(TranscriberConfig::tiny());
        for id in ps.ids_with_prefix(PREFIX).collect::<Vec<_>>() {
            if ps.name(id).contains(".film.weight") {
                let z = Tensor::zeros(ps.get(id).shape().to_vec());
                ps.set(id, z);
            }
        }
        let m = mel(30);
        let a = t.posteriors(&ps, &m, piano()).unwrap();
        let b = t.posteriors(&ps, &m, DRUMS).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.onset, b.onset);
    }

    #[test]
    fn strict_mode_rejects_multi_hot() {
        let (ps, t) = model(TranscriberConfig::tiny());
        let g = Graph::inference();
        let x = g.constant(Tensor::zeros(vec![1, 1, 10, N_MELS]));
        let mut c = vec![0.0; NUM_CLASSES];
        c[0] = 1.0;
        c[3] = 1.0;
        assert!(t.forward(&g, &ps, x, &Tensor::new(vec![1, NUM_CLASSES], c)).is_err());
    }

    #[test]
    fn one_forward_per_condition() {
        let (ps, t) = model(TranscriberConfig::tiny());
        let conds: Vec<_> = [0, 8, 38].iter().map(|&i| InstrumentIndex::new(i).unwrap()).collect();
        let before = t.forward_count();
        let notes = t.transcribe_piece(&ps, &mel(2500), &conds, 0.5, 0.5).unwrap();
        assert_eq!(t.forward_count() - before, 3);
        assert_eq!(notes.len(), 3);
        assert!(t.transcribe_piece(&ps, &mel(20), &[], 0.5, 0.5).unwrap().is_empty());
        assert_eq!(t.forward_count() - before, 3);
    }

    #[test]
    fn loss_closed_forms() {
        let frames = 4;
        let target = PianoRoll::new(
            frames,
            (0..frames * 88).map(|i| (i % 2) as f64).collect(),
            (0..frames * 88).map(|i| (i % 3 == 0) as u8 as f64).collect(),
            piano(),
        )
        .unwrap();
        let half = PianoRoll::new(frames, vec![0.5; frames * 88], vec![0.5; frames * 88], piano()).unwrap();
        assert!((loss_t(&half, &target).unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss_t(&target, &target).unwrap() < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut ps, t) = model(TranscriberConfig::tiny());
        let frames = 6;
        let x = Tensor::from_fn(vec![2, 1, frames, N_MELS], |i| ((i * 7919 % 1009) as f64 / 1009.0 - 0.5) * 3.0);
        let mut c = vec![0.0; 2 * NUM_CLASSES];
        c[0] = 1.0;
        c[NUM_CLASSES + 38] = 1.0;
        let c = Tensor::new(vec![2, NUM_CLASSES], c);
        let on = Tensor::from_fn(vec![2, frames, 88], |i| (i % 17 == 0) as u8 as f64);
        let fr = Tensor::from_fn(vec![2, frames, 88], |i| (i % 5 == 0) as u8 as f64);
        let ids: Vec<_> = ps.trainable_ids().collect();
        // below 1e-5 the comparison is absolute (|analytic - numeric| < 1e-9)
        let opts = GradCheckOptions { per_tensor: 12, floor: 1e-5, ..Default::default() };
        let rep = check_gradients(&mut ps, &ids, &opts, |g, ps| {
            let v = g.constant(x.clone());
            let out = t.forward(g, ps, v, &c).unwrap();
            loss_t_graph(g, &out, &on, &fr)
        });
        assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    }
}
