//! Multi-label instrument recognition: a six-block CNN over log-mel frames,
//! a transformer over the pooled time axis with a classification token, and
//! a sigmoid head over the 39 classes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::mel::LOG_EPS;
use crate::dsp::LogMelSpectrogram;
use crate::error::{ensure, Result};
use crate::nn::layers::{BatchNorm, Conv2d, LayerNorm, Linear, TransformerLayer};
use crate::nn::{init, Graph, ParamId, ParamStore, Tensor, Var};
use crate::taxonomy::{InstrumentIndex, NUM_CLASSES};

pub const PREFIX: &str = "ir.";
/// Six 2x2 poolings need at least 64 frames (and bins).
pub const MIN_FRAMES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognizerConfig {
    pub conv_channels: Vec<usize>,
    pub n_transformer_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Longest token sequence (including the classification token).
    pub max_tokens: usize,
    /// Frames per window for piece-level inference.
    pub window_frames: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![64, 128, 256, 512, 1024, 2048],
            n_transformer_layers: 4,
            d_model: 256,
            n_heads: 8,
            ff_dim: 1024,
            dropout: 0.2,
            max_tokens: 128,
            window_frames: 1000,
        }
    }
}

impl RecognizerConfig {
    /// Smallest configuration, for gradient checks.
    pub fn tiny() -> Self {
        Self { conv_channels: vec![4, 8, 8, 8, 8, 8], n_transformer_layers: 1, d_model: 8, n_heads: 2, ff_dim: 16, ..Self::default() }
    }

    /// Desk-scale configuration used for toy training.
    pub fn small() -> Self {
        Self { conv_channels: vec![8, 16, 16, 32, 32, 32], n_transformer_layers: 1, d_model: 32, n_heads: 4, ff_dim: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.conv_channels.len() == 6, "recognizer needs 6 conv blocks, got {}", self.conv_channels.len());
        ensure!(self.conv_channels.iter().all(|&c| c > 0), "conv channels must be positive");
        ensure!(self.conv_channels.windows(2).all(|w| w[0] <= w[1]), "conv channels must not decrease");
        ensure!(self.n_transformer_layers >= 1, "at least one transformer layer is required");
        ensure!(self.n_heads > 0 && self.d_model % self.n_heads == 0, "d_model must be divisible by n_heads");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)");
        ensure!(self.window_frames >= MIN_FRAMES, "window must be at least {MIN_FRAMES} frames");
        ensure!(self.max_tokens > self.window_frames / MIN_FRAMES, "max_tokens too small for the window");
        Ok(())
    }
}

struct ConvBlock {
    c1: Conv2d,
    b1: BatchNorm,
    c2: Conv2d,
    b2: BatchNorm,
}

pub struct Recognizer {
    pub cfg: RecognizerConfig,
    blocks: Vec<ConvBlock>,
    proj: Linear,
    cls: ParamId,
    pos: ParamId,
    layers: Vec<TransformerLayer>,
    norm: LayerNorm,
    head: Linear,
}

impl Recognizer {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, cfg: RecognizerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::new();
        let mut ci = 1;
        for (i, &co) in cfg.conv_channels.iter().enumerate() {
            let n = format!("{PREFIX}block{i}");
            blocks.push(ConvBlock {
                c1: Conv2d::new(ps, rng, &format!("{n}.conv1"), ci, co, 3, false),
                b1: BatchNorm::new(ps, &format!("{n}.bn1"), co, 1),
                c2: Conv2d::new(ps, rng, &format!("{n}.conv2"), co, co, 3, false),
                b2: BatchNorm::new(ps, &format!("{n}.bn2"), co, 1),
            });
            ci = co;
        }
        let d = cfg.d_model;
        let proj = Linear::new(ps, rng, &format!("{PREFIX}proj"), ci, d, true);
        let cls = ps.add(&format!("{PREFIX}cls"), init::normal(rng, &[1, 1, d], 0.02));
        let pos = ps.add(&format!("{PREFIX}pos"), init::normal(rng, &[cfg.max_tokens, d], 0.02));
        let layers = (0..cfg.n_transformer_layers)
            .map(|i| TransformerLayer::new(ps, rng, &format!("{PREFIX}layer{i}"), d, cfg.n_heads, cfg.ff_dim, cfg.dropout))
            .collect();
        let norm = LayerNorm::new(ps, &format!("{PREFIX}norm"), d);
        let head = Linear::new(ps, rng, &format!("{PREFIX}head"), d, NUM_CLASSES, true);
        ps.set(head.b.unwrap(), Tensor::zeros(vec![NUM_CLASSES]));
        Ok(Self { cfg, blocks, proj, cls, pos, layers, norm, head })
    }

    /// Token sequence after the transformer, `[B, 1 + T/64, d_model]`.
    pub fn encode(&self, g: &Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x);
        ensure!(s.len() == 4 && s[1] == 1, "recognizer input must be [B, 1, T, F], got {s:?}");
        ensure!(s[2] >= MIN_FRAMES, "recognizer needs at least {MIN_FRAMES} frames, got {}", s[2]);
        ensure!(s[3] >= MIN_FRAMES, "recognizer needs at least {MIN_FRAMES} frequency bins, got {}", s[3]);
        let mut h = x;
        for b in &self.blocks {
            h = g.relu(b.b1.forward(g, ps, b.c1.forward(g, ps, h)));
            h = g.relu(b.b2.forward(g, ps, b.c2.forward(g, ps, h)));
            h = g.avg_pool2d(h, 2, 2);
            h = g.dropout(h, self.cfg.dropout);
        }
        // [B, C, T', F'] -> mean over frequency -> [B, T', C]
        let h = g.mean_axis(h, 3);
        let h = g.permute(h, &[0, 2, 1]);
        let tokens = self.proj.forward(g, ps, h);
        let ts = g.shape(tokens);
        let (bsz, len, d) = (ts[0], ts[1] + 1, ts[2]);
        ensure!(len <= self.cfg.max_tokens, "input too long: {len} tokens, at most {}", self.cfg.max_tokens);
        let cls = g.add(g.constant(Tensor::zeros(vec![bsz, 1, d])), g.param(ps, self.cls));
        let seq = g.concat(&[cls, tokens], 1);
        let pos = g.narrow(g.param(ps, self.pos), 0, 0, len);
        let mut h = g.add(seq, pos);
        for l in &self.layers {
            h = l.forward(g, ps, h);
        }
        Ok(self.norm.forward(g, ps, h))
    }

    /// Class logits `[B, 39]` for log-mel input `[B, 1, T, F]`.
    pub fn logits(&self, g: &Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let h = self.encode(g, ps, x)?;
        let s = g.shape(h);
        let first = g.reshape(g.narrow(h, 1, 0, 1), &[s[0], s[2]]);
        Ok(self.head.forward(g, ps, first))
    }

    pub fn forward(&self, g: &Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        Ok(g.sigmoid(self.logits(g, ps, x)?))
    }

    /// Piece-level probabilities: mean over non-overlapping windows.
    pub fn predict(&self, ps: &ParamStore, mel: &LogMelSpectrogram) -> Result<Vec<f64>> {
        ensure!(mel.frames > 0, "empty spectrogram");
        let w = self.cfg.window_frames;
        let mut acc = vec![0.0; NUM_CLASSES];
        let mut n = 0;
        let mut start = 0;
        while start < mel.frames {
            let len = (mel.frames - start).min(w).max(MIN_FRAMES);
            let mut vals = vec![LOG_EPS.ln(); len * mel.bins];
            let avail = (mel.frames - start).min(len);
            vals[..avail * mel.bins].copy_from_slice(&mel.values[start * mel.bins..(start + avail) * mel.bins]);
            let g = Graph::inference();
            let x = g.constant(Tensor::new(vec![1, 1, len, mel.bins], vals));
            let p = self.forward(&g, ps, x)?;
            acc.iter_mut().zip(g.value(p).data()).for_each(|(a, v)| *a += v);
            n += 1;
            start += w;
        }
        Ok(acc.into_iter().map(|v| v / n as f64).collect())
    }
}

const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against binary targets;
/// predictions are clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(pred: &[f64], target: &[f64]) -> Result<f64> {
    ensure!(pred.len() == target.len(), "prediction has {} values, target {}", pred.len(), target.len());
    ensure!(!pred.is_empty(), "empty prediction");
    ensure!(target.iter().all(|&t| t == 0.0 || t == 1.0), "targets must be 0 or 1");
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn loss_ir(pred: &[f64], target: &[f64]) -> Result<f64> {
    bce(pred, target)
}

/// Indices with probability at or above `threshold`.
pub fn predict_conditions(probs: &[f64], threshold: f64) -> Vec<InstrumentIndex> {
    probs
        .iter()
        .enumerate()
        .filter(|(i, &p)| *i < NUM_CLASSES && p >= threshold)
        .filter_map(|(i, _)| InstrumentIndex::new(i).ok())
        .collect()
}
